#pragma once

#include <stdexcept>
#include <string>

namespace mlda {

enum class ErrorCode {
    InvalidInput,
    RankDeficient,
    MissingLabel,
    UnlabeledSample,
    InvalidCovariance,
    SingularTotalScatter,
    InvalidScheme,
    InvalidGap,
    DegenerateNoise,
    NotConverged,
    ConfigError,
    InternalCheck,
};

inline const char* to_string(ErrorCode c) {
    switch (c) {
        case ErrorCode::InvalidInput: return "InvalidInput";
        case ErrorCode::RankDeficient: return "RankDeficient";
        case ErrorCode::MissingLabel: return "MissingLabel";
        case ErrorCode::UnlabeledSample: return "UnlabeledSample";
        case ErrorCode::InvalidCovariance: return "InvalidCovariance";
        case ErrorCode::SingularTotalScatter: return "SingularTotalScatter";
        case ErrorCode::InvalidScheme: return "InvalidScheme";
        case ErrorCode::InvalidGap: return "InvalidGap";
        case ErrorCode::DegenerateNoise: return "DegenerateNoise";
        case ErrorCode::NotConverged: return "NotConverged";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::InternalCheck: return "InternalCheck";
    }
    return "Unknown";
}

/// Library exception; `code()` tells callers which contract was violated.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace mlda
