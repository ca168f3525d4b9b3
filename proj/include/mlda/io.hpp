#pragma once

#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mlda/error.hpp"
#include "mlda/scatter.hpp"

namespace mlda {

namespace detail {

inline bool parse_row(const std::string& line, std::vector<double>& out) {
    out.clear();
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            size_t pos = 0;
            out.push_back(std::stod(cell, &pos));
            while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
            if (pos != cell.size()) return false;
        } catch (const std::exception&) {
            return false;
        }
    }
    return !out.empty();
}

} // namespace detail

/// Reads a numeric CSV. A first line that does not parse as numbers is treated as a header.
inline Matrix read_matrix_csv(std::istream& in) {
    std::vector<std::vector<double>> rows;
    std::string line;
    std::vector<double> vals;
    bool first = true;
    size_t cols = 0;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!detail::parse_row(line, vals)) {
            if (first) {
                first = false;
                continue;
            }
            throw Error(ErrorCode::InvalidInput, "non-numeric CSV cell on line " + std::to_string(lineno));
        }
        first = false;
        if (cols == 0) cols = vals.size();
        if (vals.size() != cols)
            throw Error(ErrorCode::InvalidInput, "CSV line " + std::to_string(lineno) + " has " +
                                                     std::to_string(vals.size()) + " columns, expected " +
                                                     std::to_string(cols));
        rows.push_back(vals);
    }
    if (rows.empty()) throw Error(ErrorCode::InvalidInput, "CSV has no data rows");
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(cols));
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < cols; ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    return m;
}

inline void write_matrix_csv(std::ostream& out, const Matrix& m, const std::string& prefix) {
    for (Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << prefix << (j + 1);
    out << "\n";
    out.precision(17);
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
        out << "\n";
    }
}

inline Dataset load_dataset(const std::string& features_path, const std::string& labels_path) {
    std::ifstream fx(features_path), fy(labels_path);
    if (!fx) throw Error(ErrorCode::InvalidInput, "cannot open " + features_path);
    if (!fy) throw Error(ErrorCode::InvalidInput, "cannot open " + labels_path);
    const Matrix X = read_matrix_csv(fx);
    const Matrix Y = read_matrix_csv(fy);
    if (X.rows() != Y.rows())
        throw Error(ErrorCode::InvalidInput, "features and labels have different row counts");
    return make_dataset(X, build_labels(Y));
}

inline void save_dataset(const Dataset& ds, const std::string& features_path, const std::string& labels_path) {
    std::ofstream fx(features_path), fy(labels_path);
    if (!fx || !fy) throw Error(ErrorCode::InvalidInput, "cannot open dataset output files");
    write_matrix_csv(fx, ds.X, "x");
    write_matrix_csv(fy, ds.labels.bits(), "y");
}

} // namespace mlda
