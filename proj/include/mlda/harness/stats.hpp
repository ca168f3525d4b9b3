#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "mlda/error.hpp"

namespace mlda::harness {

struct Summary {
    double median = 0.0;
    double p95 = 0.0;
    double mean = 0.0;
    double se = 0.0;
    std::size_t count = 0;
};

/// Nearest-rank percentile of an ascending sample, q in (0, 100].
inline double nearest_rank(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw Error(ErrorCode::InvalidInput, "percentile of empty sample");
    const auto n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

/// Reduces (trial index, value) records; the result does not depend on input order.
inline Summary aggregate(std::vector<std::pair<std::size_t, double>> trials) {
    if (trials.empty()) throw Error(ErrorCode::InvalidInput, "aggregate needs at least one trial");
    std::sort(trials.begin(), trials.end());
    std::vector<double> v;
    v.reserve(trials.size());
    for (const auto& t : trials) v.push_back(t.second);
    Summary s;
    s.count = v.size();
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.se = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())) : 0.0;
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    s.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    s.p95 = nearest_rank(sorted, 95.0);
    return s;
}

inline Summary aggregate(const std::vector<double>& values) {
    std::vector<std::pair<std::size_t, double>> t;
    t.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) t.emplace_back(i, values[i]);
    return aggregate(std::move(t));
}

/// Least-squares slope of log(err) against log(n).
inline double slope_fit(const std::vector<double>& n, const std::vector<double>& err) {
    if (n.size() != err.size()) throw Error(ErrorCode::InvalidInput, "slope_fit: length mismatch");
    if (n.size() < 3) throw Error(ErrorCode::InvalidInput, "slope_fit needs at least 3 points");
    std::vector<double> x, y;
    for (std::size_t i = 0; i < n.size(); ++i) {
        if (!(n[i] > 0.0) || !(err[i] > 0.0)) throw Error(ErrorCode::InvalidInput, "slope_fit needs positive values");
        x.push_back(std::log(n[i]));
        y.push_back(std::log(err[i]));
    }
    const double m = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= m;
    my /= m;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    if (sxx == 0.0) throw Error(ErrorCode::InvalidInput, "slope_fit needs distinct n values");
    return sxy / sxx;
}

} // namespace mlda::harness
