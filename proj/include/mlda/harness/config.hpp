#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mlda/error.hpp"
#include "mlda/synth.hpp"

namespace mlda::harness {

using json = nlohmann::json;

inline const std::vector<std::string>& experiment_ids() {
    static const std::vector<std::string> ids = {"rank",          "divergence",  "distance",    "convergence",
                                                 "factors",       "concentration", "interaction", "regularization"};
    return ids;
}

inline json scheme_single() { return {{"kind", "single"}}; }
inline json scheme_uniform(int k) { return {{"kind", "uniform"}, {"k", k}}; }
inline json scheme_mix(std::vector<std::pair<int, double>> mix) {
    json m = json::array();
    for (auto [c, f] : mix) m.push_back({c, f});
    return {{"kind", "variable"}, {"mix", m}};
}

/// Built-in configuration of each experiment; a config file overrides keys selectively.
inline json default_experiment_config(const std::string& id) {
    const json mean2 = scheme_mix({{1, 0.3}, {2, 0.4}, {3, 0.3}});
    const json mean3 = scheme_mix({{2, 0.3}, {3, 0.4}, {4, 0.3}});
    if (id == "rank") {
        auto row = [](const char* name, int n, int d, int L, json scheme, int rank, bool excess) {
            return json{{"name", name}, {"n", n},         {"d", d}, {"L", L}, {"scheme", scheme},
                        {"expect_rank", rank}, {"expect_excess", excess}};
        };
        const json var = scheme_mix({{1, 0.5}, {2, 0.3}, {3, 0.2}});
        return {
            {"trials", 1},
            {"sigma_w", 1.0},
            {"effect_sd", 2.0},
            {"rank_rel_tol", nullptr},
            {"runtime_limit_s", 5.0},
            {"settings",
             {row("Variable card", 100, 20, 6, var, 6, true), row("Single-label (k=1)", 100, 20, 6, scheme_single(), 5, false),
              row("Uniform k=3", 100, 20, 6, scheme_uniform(3), 5, false),
              row("Variable card", 200, 50, 14, var, 14, true), row("Single-label", 200, 50, 14, scheme_single(), 13, false),
              row("High-dim (d > n)", 50, 100, 10, var, 10, true)}},
            {"identities",
             {{"datasets", 200}, {"n_max", 300}, {"d_max", 50}, {"L_max", 15}, {"tol", 1e-10}, {"psd_tol", 1e-8}}},
        };
    }
    if (id == "divergence") {
        return {
            {"trials", 50},
            {"n", 200},
            {"d", 20},
            {"L", 6},
            {"r", 2},
            {"sigma_w", 1.0},
            {"effect_sd", 2.0},
            {"tr_tol", 1e-10},
            {"tr_max_iter", 500},
            {"settings",
             {{{"name", "Single-label (k=1)"}, {"scheme", scheme_single()}},
              {{"name", "Uniform k=2"}, {"scheme", scheme_uniform(2)}},
              {{"name", "Uniform k=3"}, {"scheme", scheme_uniform(3)}},
              {{"name", "Variable (mean~2)"}, {"scheme", mean2}},
              {{"name", "Variable (mean~3)"}, {"scheme", mean3}}}},
            {"equivalence",
             {{"instances", 100}, {"probes", 1000}, {"tol", 1e-8}, {"runtime_limit_s", 60.0}}},
        };
    }
    if (id == "distance") {
        return {
            {"trials", 1},
            {"n", 200},
            {"d", 20},
            {"L", 6},
            {"r", 6},
            {"sigma_w", 1.0},
            {"effect_sd", 2.0},
            {"pairs", 200},
            {"draws", 50},
            {"se_multiplier", 3.0},
            {"min_pass_rate", 0.95},
            {"runtime_limit_s", 120.0},
            {"settings",
             {{{"name", "Variable card"}, {"scheme", mean2}},
              {{"name", "Uniform k=2"}, {"scheme", scheme_uniform(2)}},
              {{"name", "Uniform k=3"}, {"scheme", scheme_uniform(3)}}}},
            {"residual", {{"instances", 200}, {"tol", 1e-8}}},
        };
    }
    if (id == "convergence") {
        return {
            {"trials", 100},
            {"d", 15},
            {"L", 5},
            {"singular_values", {8.0, 6.0, 4.0, 1.5, 1.0}},
            {"sigma_w", 0.5},
            {"scheme", scheme_mix({{1, 0.8}, {2, 0.2}})},
            {"n_grid", {50, 100, 200, 500, 1000, 2000, 5000, 10000, 20000}},
            {"r", "adaptive"},
            {"gap_threshold", 2.8},
            {"max_final_median", 0.05},
            {"max_inversions", 1},
            {"slope_range", {-0.6, -0.15}},
            {"runtime_limit_s", 900.0},
        };
    }
    if (id == "factors") {
        return {
            {"trials", 80},
            {"n", 2000},
            {"d", 12},
            {"L", 5},
            {"r", 1},
            {"sigma_w", 0.5},
            {"effect_sd", 2.0},
            {"kmax_levels",
             {{{"k_max", 1}, {"scheme", scheme_single()}},
              {{"k_max", 2}, {"scheme", scheme_mix({{1, 0.8}, {2, 0.2}})}},
              {{"k_max", 3}, {"scheme", scheme_mix({{1, 0.9}, {3, 0.1}})}}}},
            {"ratio_stability", 2.0},
            {"scale_factor", 3.0},
            {"delta_tol", 1e-10},
            {"gap_scale_tol", 1e-8},
            {"kappa_scales", {1.0, 5.0}},
            {"kappa_trials", 40},
            {"gamma_multilabel_scheme", mean3},
        };
    }
    if (id == "concentration") {
        return {
            {"n", 200},
            {"d", 20},
            {"L", 6},
            {"r", 4},
            {"sigma_w", 1.0},
            {"effect_sd", 2.0},
            {"scheme", scheme_mix({{1, 0.5}, {2, 0.3}, {3, 0.2}})},
            {"pairs", 50},
            {"draws", 10000},
            {"diagnostic_draws", 30000},
            {"deltas", {0.01, 0.05, 0.1, 0.2}},
            {"c_scale", 1.0},
            {"variance_tol", 0.01},
            {"mean_se_limit", 4.0},
            {"max_percentile_ratio", 2.5},
            {"runtime_limit_s", 300.0},
        };
    }
    if (id == "interaction") {
        return {
            {"n", 200},
            {"d", 20},
            {"L", 6},
            {"r", 6},
            {"sigma_w", 1.0},
            {"effect_sd", 2.0},
            {"interaction_sd", 2.0},
            {"scheme", scheme_mix({{1, 0.4}, {2, 0.4}, {3, 0.2}})},
            {"alphas", {0.0, 0.1, 0.5, 1.0, 2.0}},
            {"pairs", 200},
            {"draws", 50},
            {"se_multiplier", 3.0},
            {"min_corrected_rate", 0.99},
        };
    }
    if (id == "regularization") {
        return {
            {"trials", 50},
            {"n", 50},
            {"d", 200},
            {"L", 10},
            {"r", 5},
            {"sigma_w", 1.0},
            {"effect_sd", 2.0},
            {"scheme", scheme_mix({{1, 0.5}, {2, 0.3}, {3, 0.2}})},
            {"gammas", {0.0, 0.01, 0.1, 1.0, 10.0}},
            {"expect_rank", 10},
            {"kappa_ratio_range", {8.0, 12.0}},
            {"gap_tol", 1e-10},
        };
    }
    throw Error(ErrorCode::ConfigError, "unknown experiment '" + id + "'");
}

struct RunSettings {
    std::uint64_t seed = 20240917;
    int threads = 0;
    std::string out = "results";
    double max_cells = 5000.0 * 500.0; // n * d cap per generated dataset
};

/// Whole-file config: {"seed", "threads", "out", "max_cells", "experiments": {id: {...}}}.
struct HarnessConfig {
    RunSettings run;
    json experiments = json::object();

    json experiment(const std::string& id) const {
        json cfg = default_experiment_config(id);
        if (experiments.contains(id)) cfg.merge_patch(experiments.at(id));
        return cfg;
    }
};

inline HarnessConfig parse_config(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config root must be an object");
    HarnessConfig c;
    try {
        if (j.contains("seed")) c.run.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("threads")) c.run.threads = j.at("threads").get<int>();
        if (j.contains("out")) c.run.out = j.at("out").get<std::string>();
        if (j.contains("max_cells")) c.run.max_cells = j.at("max_cells").get<double>();
        if (j.contains("experiments")) c.experiments = j.at("experiments");
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, e.what());
    }
    if (!c.experiments.is_object()) throw Error(ErrorCode::ConfigError, "'experiments' must be an object");
    for (const auto& [k, v] : c.experiments.items()) {
        (void)v;
        default_experiment_config(k);
    }
    return c;
}

inline HarnessConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorCode::ConfigError, "cannot open config " + path);
    try {
        return parse_config(json::parse(f));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ConfigError, std::string("config parse error: ") + e.what());
    }
}

inline LabelScheme parse_scheme(const json& j, Index L) {
    try {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "single") return LabelScheme::single(L);
        if (kind == "uniform") return LabelScheme::uniform(L, j.at("k").get<int>());
        if (kind == "variable") {
            std::vector<std::pair<int, double>> mix;
            for (const auto& e : j.at("mix")) mix.emplace_back(e.at(0).get<int>(), e.at(1).get<double>());
            return LabelScheme::variable(L, mix);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("bad scheme: ") + e.what());
    }
    throw Error(ErrorCode::ConfigError, "unknown scheme kind");
}

/// Typed accessor raising ConfigError instead of json exceptions.
template <class T>
T get(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("config key '") + key + "': " + e.what());
    }
}

inline void require(bool cond, const std::string& what) {
    if (!cond) throw Error(ErrorCode::ConfigError, what);
}

} // namespace mlda::harness
