#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "mlda/error.hpp"
#include "mlda/synth.hpp"

namespace mlda::harness {

using json = nlohmann::json;
using Cell = std::variant<std::string, double, long long>;

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
};

struct Criterion {
    int number = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    std::vector<std::string> offending;
};

struct ExperimentReport {
    std::string id;
    Table table;
    std::vector<Criterion> criteria;
    json details = json::object();
    std::uint64_t base_seed = 0;
    double wall_time_s = 0.0;

    bool all_pass() const {
        for (const auto& c : criteria)
            if (!c.pass) return false;
        return true;
    }
};

inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string to_csv(const Table& t) {
    std::ostringstream os;
    for (size_t j = 0; j < t.columns.size(); ++j) os << (j ? "," : "") << csv_escape(t.columns[j]);
    os << "\n";
    for (const auto& row : t.rows) {
        for (size_t j = 0; j < row.size(); ++j) {
            if (j) os << ",";
            if (const auto* s = std::get_if<std::string>(&row[j]))
                os << csv_escape(*s);
            else if (const auto* d = std::get_if<double>(&row[j]))
                os << format_double(*d);
            else
                os << std::get<long long>(row[j]);
        }
        os << "\n";
    }
    return os.str();
}

/// json cannot hold inf/nan; they are written as strings.
inline json num(double v) {
    if (std::isfinite(v)) return v;
    return format_double(v);
}

inline std::string config_hash(const json& cfg) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(cfg.dump())));
    return buf;
}

inline json summary_json(const ExperimentReport& rep, const json& cfg) {
    json j;
    j["experiment"] = rep.id;
    j["config_hash"] = config_hash(cfg);
    j["config"] = cfg;
    j["base_seed"] = rep.base_seed;
    j["seed_scheme"] = "splitmix64(base, experiment, trial, purpose)";
    j["wall_time_s"] = rep.wall_time_s;
    j["rows"] = rep.table.rows.size();
    json crit = json::array();
    for (const auto& c : rep.criteria) {
        json e;
        e["criterion"] = c.number;
        e["name"] = c.name;
        e["pass"] = c.pass;
        e["detail"] = c.detail;
        e["offending"] = c.offending;
        crit.push_back(e);
    }
    j["criteria"] = crit;
    j["passes"] = json::object();
    for (const auto& c : rep.criteria) j["passes"]["criterion_" + std::to_string(c.number)] = c.pass;
    j["all_pass"] = rep.all_pass();
    j["details"] = rep.details;
    return j;
}

inline void write_outputs(const std::filesystem::path& dir, const ExperimentReport& rep, const json& cfg) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / (rep.id + ".csv"), std::ios::binary);
        if (!f) throw Error(ErrorCode::ConfigError, "cannot write to " + dir.string());
        f << to_csv(rep.table);
    }
    std::ofstream f(dir / (rep.id + ".summary.json"), std::ios::binary);
    f << summary_json(rep, cfg).dump(2) << "\n";
}

} // namespace mlda::harness
