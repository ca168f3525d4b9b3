#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mlda/bounds.hpp"
#include "mlda/discriminant.hpp"
#include "mlda/error.hpp"
#include "mlda/harness/config.hpp"
#include "mlda/harness/parallel.hpp"
#include "mlda/harness/report.hpp"
#include "mlda/harness/stats.hpp"
#include "mlda/population.hpp"
#include "mlda/scatter.hpp"
#include "mlda/spectral.hpp"
#include "mlda/synth.hpp"

namespace mlda::harness {

struct Context {
    std::uint64_t seed = 20240917;
    int threads = 1;
    double max_cells = 5000.0 * 500.0;
};

namespace detail {

class Stopwatch {
public:
    Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_;
};

inline double degrees(double sine) { return std::asin(std::clamp(sine, 0.0, 1.0)) * 180.0 / std::numbers::pi; }

inline void check_size(Index n, Index d, Index L, const Context& ctx) {
    require(n >= 2 && d >= 1 && L >= 1, "dimensions must be positive (n >= 2)");
    require(n >= L, "n must be at least L");
    require(static_cast<double>(n) * static_cast<double>(d) <= ctx.max_cells,
            "n * d exceeds the configured max_cells cap");
}

inline int pick_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Random mix for property corpora: mostly small cardinalities, capped at L.
inline LabelScheme random_scheme(Rng& rng, Index L, int kind) {
    if (kind == 0 || L == 1) return LabelScheme::single(L);
    if (kind == 1) return LabelScheme::uniform(L, pick_int(rng, 2, static_cast<int>(std::min<Index>(L, 4))));
    std::vector<std::pair<int, double>> mix = {{1, 0.5}, {2, 0.3}, {3, 0.2}};
    if (L < 3) mix = {{1, 0.6}, {2, 0.4}};
    return LabelScheme::variable(L, mix);
}

inline Dataset simulate(const Seed& seed, const std::string& exp, std::uint64_t trial, const LabelScheme& scheme,
                        Index n, Index d, double effect_sd, double sigma_w, Matrix* A_out = nullptr) {
    Rng rl = seed.engine(exp, trial, Purpose::Labels);
    const LabelMatrix labels = gen_labels(scheme, n, rl);
    Rng re = seed.engine(exp, trial, Purpose::Effects);
    const Matrix A = gaussian_matrix(d, scheme.L, effect_sd, re);
    Rng rn = seed.engine(exp, trial, Purpose::Noise);
    if (A_out) *A_out = A;
    return gen_data(labels, isotropic_model(A, sigma_w), 0.0, rn);
}

inline Criterion criterion(int number, std::string name, bool pass, std::string detail,
                           std::vector<std::string> offending = {}) {
    return Criterion{number, std::move(name), pass, std::move(detail), std::move(offending)};
}

inline std::string fmt(double v) { return format_double(v); }

} // namespace detail

// ---------------------------------------------------------------------------
// rank

inline ExperimentReport run_rank(const json& cfg, const Context& ctx) {
    detail::Stopwatch clock;
    const Seed seed{ctx.seed};
    const int trials = get<int>(cfg, "trials");
    require(trials >= 1, "trials must be >= 1");
    const double sigma_w = get<double>(cfg, "sigma_w");
    const double effect_sd = get<double>(cfg, "effect_sd");
    RankTolerance tol;
    if (cfg.contains("rank_rel_tol") && !cfg.at("rank_rel_tol").is_null()) tol.relative = get<double>(cfg, "rank_rel_tol");

    struct Setting {
        std::string name;
        Index n, d, L;
        LabelScheme scheme;
        int expect_rank;
        bool expect_excess;
    };
    std::vector<Setting> settings;
    for (const auto& s : cfg.at("settings")) {
        Setting st{get<std::string>(s, "name"), get<Index>(s, "n"), get<Index>(s, "d"), get<Index>(s, "L"),
                   LabelScheme{}, get<int>(s, "expect_rank"), get<bool>(s, "expect_excess")};
        st.scheme = parse_scheme(s.at("scheme"), st.L);
        st.scheme.validate();
        detail::check_size(st.n, st.d, st.L, ctx);
        settings.push_back(st);
    }
    require(!settings.empty(), "rank needs at least one setting");

    const size_t total = settings.size() * static_cast<size_t>(trials);
    std::vector<RankReport> res(total);
    parallel_for(total, ctx.threads, [&](size_t idx) {
        const Setting& s = settings[idx / static_cast<size_t>(trials)];
        const Dataset ds = detail::simulate(seed, "rank", idx, s.scheme, s.n, s.d, effect_sd, sigma_w);
        res[idx] = rank_analysis(ds, build_scatter(ds), tol);
    });
    const double rank_time = clock.seconds();

    ExperimentReport rep;
    rep.id = "rank";
    rep.base_seed = ctx.seed;
    rep.table.columns = {"Setting", "n", "d", "L", "rank(S_b^ML)", "Excess", "rank(X^T Y)", "bound", "1 in col(Y)",
                         "matching trials"};
    std::vector<std::string> offending;
    for (size_t si = 0; si < settings.size(); ++si) {
        const Setting& s = settings[si];
        const RankReport& first = res[si * static_cast<size_t>(trials)];
        long long matching = 0;
        for (int t = 0; t < trials; ++t) {
            const RankReport& r = res[si * static_cast<size_t>(trials) + static_cast<size_t>(t)];
            const bool ok = r.rank_sb == s.expect_rank && r.excess == s.expect_excess && r.consistent &&
                            r.rank_sb <= r.bound;
            if (ok) ++matching;
        }
        if (matching != trials) offending.push_back(s.name + " (n=" + std::to_string(s.n) + ")");
        rep.table.rows.push_back({s.name, static_cast<long long>(s.n), static_cast<long long>(s.d),
                                  static_cast<long long>(s.L), static_cast<long long>(first.rank_sb),
                                  std::string(first.excess ? "Yes" : "No"), static_cast<long long>(first.rank_XtY),
                                  static_cast<long long>(first.bound), std::string(first.one_in_colspace ? "Yes" : "No"),
                                  matching});
    }
    const double limit = get<double>(cfg, "runtime_limit_s");
    const bool c1 = offending.empty() && rank_time < limit;
    rep.criteria.push_back(detail::criterion(1, "Rank reproduction", c1,
                                             "mismatched settings " + std::to_string(offending.size()) + ", runtime " +
                                                 detail::fmt(rank_time) + " s (limit " + detail::fmt(limit) + " s)",
                                             offending));

    // algebraic identities on a random corpus
    const json& idc = cfg.at("identities");
    const int datasets = get<int>(idc, "datasets");
    const int n_max = get<int>(idc, "n_max");
    const int d_max = get<int>(idc, "d_max");
    const int L_max = get<int>(idc, "L_max");
    const double id_tol = get<double>(idc, "tol");
    const double psd_tol = get<double>(idc, "psd_tol");
    require(datasets >= 1 && L_max >= 2 && d_max >= 2 && n_max >= 2 * L_max, "invalid identities corpus");
    struct IdOut {
        double partition = 0, factor = 0, r_psd = 0;
    };
    std::vector<IdOut> ids(static_cast<size_t>(datasets));
    parallel_for(ids.size(), ctx.threads, [&](size_t idx) {
        Rng rng = seed.engine("rank/identities", idx, Purpose::Instance);
        const Index L = detail::pick_int(rng, 2, L_max);
        const Index d = detail::pick_int(rng, 2, d_max);
        const Index n = detail::pick_int(rng, static_cast<int>(std::max<Index>(2 * L, 10)), n_max);
        const LabelScheme scheme = detail::random_scheme(rng, L, static_cast<int>(idx % 3));
        const Dataset ds = detail::simulate(seed, "rank/identities", idx, scheme, n, d, effect_sd, sigma_w);
        const ScatterSet ss = build_scatter(ds);
        const Vector ev = sym_eig(ss.R).values;
        const double rn = ev.cwiseAbs().maxCoeff();
        ids[idx] = {ss.partition_residual, ss.factor_residual, rn > 0 ? -ev(ev.size() - 1) / rn : 0.0};
    });
    double worst_p = 0, worst_f = 0, worst_r = -1;
    std::vector<std::string> bad;
    for (size_t i = 0; i < ids.size(); ++i) {
        worst_p = std::max(worst_p, ids[i].partition);
        worst_f = std::max(worst_f, ids[i].factor);
        worst_r = std::max(worst_r, ids[i].r_psd);
        if (ids[i].partition > id_tol || ids[i].factor > id_tol || ids[i].r_psd > psd_tol)
            bad.push_back("dataset " + std::to_string(i));
    }
    rep.details["identities"] = {{"datasets", datasets},
                                 {"max_partition_residual", worst_p},
                                 {"max_factor_residual", worst_f},
                                 {"max_negative_R_eig_rel", worst_r}};
    rep.criteria.push_back(detail::criterion(2, "Algebraic identities", bad.empty(),
                                             "max partition " + detail::fmt(worst_p) + ", max factor " +
                                                 detail::fmt(worst_f) + ", max -lambda_min(R)/||R|| " +
                                                 detail::fmt(worst_r),
                                             bad));
    rep.details["rank_runtime_s"] = rank_time;
    rep.wall_time_s = clock.seconds();
    return rep;
}

// ---------------------------------------------------------------------------
// divergence

inline ExperimentReport run_divergence(const json& cfg, const Context& ctx) {
    detail::Stopwatch clock;
    const Seed seed{ctx.seed};
    const int trials = get<int>(cfg, "trials");
    const Index n = get<Index>(cfg, "n"), d = get<Index>(cfg, "d"), L = get<Index>(cfg, "L"), r = get<Index>(cfg, "r");
    const double sigma_w = get<double>(cfg, "sigma_w"), effect_sd = get<double>(cfg, "effect_sd");
    const double tr_tol = get<double>(cfg, "tr_tol");
    const int tr_max = get<int>(cfg, "tr_max_iter");
    require(trials >= 1, "trials must be >= 1");
    require(r >= 1 && r < d, "need 1 <= r < d");
    detail::check_size(n, d, L, ctx);
    std::vector<std::pair<std::string, LabelScheme>> settings;
    for (const auto& s : cfg.at("settings")) {
        LabelScheme sc = parse_scheme(s.at("scheme"), L);
        sc.validate();
        settings.emplace_back(get<std::string>(s, "name"), sc);
    }

    struct Out {
        double defect = 0, td_td0 = 0, td_tr = std::numeric_limits<double>::quiet_NaN();
        bool dk_checked = false, dk_holds = false, tr_converged = false;
        double dk_bound = 0;
    };
    const size_t total = settings.size() * static_cast<size_t>(trials);
    std::vector<Out> res(total);
    parallel_for(total, ctx.threads, [&](size_t idx) {
        const LabelScheme& sc = settings[idx / static_cast<size_t>(trials)].second;
        const Dataset ds = detail::simulate(seed, "divergence", idx, sc, n, d, effect_sd, sigma_w);
        const ScatterSet ss = build_scatter(ds);
        Out o;
        o.defect = commutativity_defect(ss.Sb, ss.St);
        const TopEigenspace td = opt_td(ss.Sb, ss.St_ml, r);
        const TopEigenspace td0 = opt_td(ss.Sb, ss.St, r);
        o.td_td0 = principal_angle_sin(td.frame, td0.frame);
        try {
            const TraceRatioResult tr = trace_ratio_stiefel(ss.Sb, ss.Sw, r, tr_tol, tr_max);
            o.td_tr = principal_angle_sin(td.frame, tr.frame);
            o.tr_converged = true;
        } catch (const TraceRatioNotConverged& e) {
            o.td_tr = principal_angle_sin(td.frame, e.last().frame);
        }
        if (!td0.degenerate_gap && td0.gap > 0) {
            const double rn = sym_eig(ss.R).values.cwiseAbs().maxCoeff();
            const DavisKahanCheck dk = davis_kahan_check(td.frame, td0.frame, rn, td0.gap);
            o.dk_checked = true;
            // sines carry ~1e-15 absolute rounding; identical subspaces must not fail a zero bound
            o.dk_holds = dk.holds || dk.angle <= 1e-12;
            o.dk_bound = dk.bound;
        }
        res[idx] = o;
    });

    ExperimentReport rep;
    rep.id = "divergence";
    rep.base_seed = ctx.seed;
    rep.table.columns = {"Setting",  "Comm. defect", "angle(TD,TD0)",   "angle(TD,TR)",
                         "DK holds", "DK checked",   "median DK bound", "TR converged"};
    std::vector<std::string> offending;
    json pos_angle = json::object();
    for (size_t si = 0; si < settings.size(); ++si) {
        std::vector<double> defect, a0, atr, bnd;
        long long holds = 0, checked = 0, conv = 0;
        for (int t = 0; t < trials; ++t) {
            const Out& o = res[si * static_cast<size_t>(trials) + static_cast<size_t>(t)];
            defect.push_back(o.defect);
            a0.push_back(detail::degrees(o.td_td0));
            atr.push_back(detail::degrees(o.td_tr));
            if (o.dk_checked) {
                ++checked;
                bnd.push_back(o.dk_bound);
                if (o.dk_holds) ++holds;
            }
            if (o.tr_converged) ++conv;
        }
        const std::string& name = settings[si].first;
        if (holds != checked || checked == 0) offending.push_back(name);
        const Summary sd = aggregate(defect), s0 = aggregate(a0), str = aggregate(atr);
        pos_angle[name] = sd.median > 0 && str.median > 5.0;
        rep.table.rows.push_back({name, sd.median, s0.median, str.median, holds, checked,
                                  bnd.empty() ? std::numeric_limits<double>::quiet_NaN() : aggregate(bnd).median, conv});
    }
    rep.details["td_tr_angle_above_5deg"] = pos_angle;
    rep.criteria.push_back(detail::criterion(5, "Davis-Kahan divergence", offending.empty(),
                                             std::to_string(offending.size()) + " settings with violations",
                                             offending));

    // objective equivalence under total-scatter orthogonality
    detail::Stopwatch eq_clock;
    const json& eq = cfg.at("equivalence");
    const int instances = get<int>(eq, "instances");
    const int probes = get<int>(eq, "probes");
    const double eq_tol = get<double>(eq, "tol");
    require(instances >= 1 && probes >= 1, "equivalence needs instances and probes");
    struct EqOut {
        double max_rel = 0, constraint = 0;
        long long violations = 0;
    };
    std::vector<EqOut> eqs(static_cast<size_t>(instances));
    parallel_for(eqs.size(), ctx.threads, [&](size_t idx) {
        Rng rng = seed.engine("divergence/equivalence", idx, Purpose::Instance);
        const Index Li = detail::pick_int(rng, 2, 8);
        const Index di = detail::pick_int(rng, 3, 12);
        const Index ni = detail::pick_int(rng, 40, 200);
        const LabelScheme sc = detail::random_scheme(rng, Li, 2);
        const Dataset ds = detail::simulate(seed, "divergence/equivalence", idx, sc, ni, di, effect_sd, sigma_w);
        const ScatterSet ss = build_scatter(ds);
        const int rank_sb = numeric_rank(ss.Sb.matrix());
        const Index ri = detail::pick_int(rng, 1, static_cast<int>(std::min<Index>(rank_sb, di - 1)));
        const ConstrainedBasis opt = opt_stml(ss.Sb, ss.St_ml, ri);
        const ObjectiveValues at = eval_objectives(opt.W, ss.Sb, ss.Sw);
        const ObjectiveValues form = theta_forms(opt.top_theta());
        EqOut o;
        auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); };
        o.max_rel = std::max({rel(at.J_TD, form.J_TD), rel(at.J_TR, form.J_TR), rel(at.J_RT, form.J_RT),
                              rel(at.J_DR, form.J_DR)});
        o.constraint = (ss.St_ml.congruence(opt.W).matrix() - Matrix::Identity(ri, ri)).norm();
        const Matrix Wh = inverse_sqrt(ss.St_ml);
        Rng pr = seed.engine("divergence/equivalence", idx, Purpose::Probes);
        auto dominated = [](double best, double probe) {
            return probe <= best + 1e-9 * std::max(1.0, std::abs(best));
        };
        for (int p = 0; p < probes; ++p) {
            const Matrix Wp = Wh * random_stiefel(di, ri, pr).columns();
            const ObjectiveValues v = eval_objectives(Wp, ss.Sb, ss.Sw);
            bool ok = dominated(at.J_TD, v.J_TD) && dominated(at.J_TR, v.J_TR);
            if (!v.rt_flagged) ok = ok && dominated(at.J_RT, v.J_RT);
            if (!v.dr_flagged) ok = ok && dominated(at.J_DR, v.J_DR);
            if (!ok) ++o.violations;
        }
        eqs[idx] = o;
    });
    const double eq_time = eq_clock.seconds();
    double worst_rel = 0, worst_con = 0;
    long long viol = 0;
    std::vector<std::string> eq_bad;
    for (size_t i = 0; i < eqs.size(); ++i) {
        worst_rel = std::max(worst_rel, eqs[i].max_rel);
        worst_con = std::max(worst_con, eqs[i].constraint);
        viol += eqs[i].violations;
        if (eqs[i].max_rel > eq_tol || eqs[i].violations > 0 || eqs[i].constraint > 1e-8)
            eq_bad.push_back("instance " + std::to_string(i));
    }
    const double eq_limit = get<double>(eq, "runtime_limit_s");
    rep.details["equivalence"] = {{"instances", instances},    {"probes", probes},
                                  {"max_rel_error", worst_rel}, {"max_constraint_residual", worst_con},
                                  {"probe_violations", viol},   {"runtime_s", eq_time}};
    rep.criteria.push_back(detail::criterion(3, "Objective equivalence", eq_bad.empty() && eq_time < eq_limit,
                                             "max rel error " + detail::fmt(worst_rel) + ", probe violations " +
                                                 std::to_string(viol) + ", runtime " + detail::fmt(eq_time) + " s",
                                             eq_bad));
    std::sort(rep.criteria.begin(), rep.criteria.end(),
              [](const Criterion& a, const Criterion& b) { return a.number < b.number; });
    rep.wall_time_s = clock.seconds();
    return rep;
}

// ---------------------------------------------------------------------------
// distance

inline ExperimentReport run_distance(const json& cfg, const Context& ctx) {
    detail::Stopwatch clock;
    const Seed seed{ctx.seed};
    const int trials = get<int>(cfg, "trials");
    const Index n = get<Index>(cfg, "n"), d = get<Index>(cfg, "d"), L = get<Index>(cfg, "L"), r = get<Index>(cfg, "r");
    const double sigma_w = get<double>(cfg, "sigma_w"), effect_sd = get<double>(cfg, "effect_sd");
    const int pairs = get<int>(cfg, "pairs"), draws = get<int>(cfg, "draws");
    const double sek = get<double>(cfg, "se_multiplier"), min_rate = get<double>(cfg, "min_pass_rate");
    require(trials >= 1 && pairs >= 1 && draws >= 2, "distance needs trials, pairs and >= 2 draws");
    require(r >= 1 && r <= d, "need 1 <= r <= d");
    detail::check_size(n, d, L, ctx);
    std::vector<std::pair<std::string, LabelScheme>> settings;
    for (const auto& s : cfg.at("settings")) {
        LabelScheme sc = parse_scheme(s.at("scheme"), L);
        sc.validate();
        settings.emplace_back(get<std::string>(s, "name"), sc);
    }
    const SymMatrix Sigma = SymMatrix((sigma_w * sigma_w) * Matrix::Identity(d, d));

    struct PairOut {
        bool ham = false, jac = false;
    };
    const size_t datasets = settings.size() * static_cast<size_t>(trials);
    std::vector<PairOut> res(datasets * static_cast<size_t>(pairs));
    parallel_for(datasets, ctx.threads, [&](size_t idx) {
        const LabelScheme& sc = settings[idx / static_cast<size_t>(trials)].second;
        Matrix A;
        const Dataset ds = detail::simulate(seed, "distance", idx, sc, n, d, effect_sd, sigma_w, &A);
        const ScatterSet ss = build_scatter(ds);
        const Matrix W = top_eigenspace(ss.Sb, r).frame.columns();
        Rng pr = seed.engine("distance", idx, Purpose::Pairs);
        const auto pp = random_pairs(n, pairs, pr);
        for (int p = 0; p < pairs; ++p) {
            const Vector yi = ds.labels.row(pp[static_cast<size_t>(p)].first);
            const Vector yj = ds.labels.row(pp[static_cast<size_t>(p)].second);
            const DistanceBudget b = distance_budget(W, A, yi, yj, Sigma);
            const JaccardBound jb = jaccard_lower(b, yi, yj);
            Rng nr = seed.engine("distance/draws", idx * 1000003ULL + static_cast<std::uint64_t>(p), Purpose::Noise);
            const Matrix E = noise_matrix(2 * draws, Sigma, nr);
            const Vector sig = A * (yi - yj);
            std::vector<double> D(static_cast<size_t>(draws));
            for (int t = 0; t < draws; ++t) {
                const Vector diff = sig + (E.row(2 * t) - E.row(2 * t + 1)).transpose();
                D[static_cast<size_t>(t)] = (W.transpose() * diff).squaredNorm();
            }
            const Summary s = aggregate(D);
            PairOut o;
            o.ham = s.mean >= b.lower - sek * s.se && s.mean <= b.upper + sek * s.se;
            o.jac = s.mean >= jb.weakened + b.C_w - sek * s.se;
            res[idx * static_cast<size_t>(pairs) + static_cast<size_t>(p)] = o;
        }
    });
    const double dist_time = clock.seconds();

    ExperimentReport rep;
    rep.id = "distance";
    rep.base_seed = ctx.seed;
    rep.table.columns = {"Setting", "Hamming", "Jaccard"};
    std::vector<std::string> offending;
    for (size_t si = 0; si < settings.size(); ++si) {
        double h = 0, j = 0;
        const size_t begin = si * static_cast<size_t>(trials) * static_cast<size_t>(pairs);
        const size_t count = static_cast<size_t>(trials) * static_cast<size_t>(pairs);
        for (size_t k = begin; k < begin + count; ++k) {
            h += res[k].ham ? 1 : 0;
            j += res[k].jac ? 1 : 0;
        }
        h /= static_cast<double>(count);
        j /= static_cast<double>(count);
        if (h < min_rate || j < min_rate) offending.push_back(settings[si].first);
        rep.table.rows.push_back({settings[si].first, h, j});
    }
    const double limit = get<double>(cfg, "runtime_limit_s");
    rep.criteria.push_back(detail::criterion(6, "Distance bounds", offending.empty() && dist_time < limit,
                                             "runtime " + detail::fmt(dist_time) + " s", offending));

    // residual bound on a random corpus
    const json& rc = cfg.at("residual");
    const int instances = get<int>(rc, "instances");
    const double rtol = get<double>(rc, "tol");
    require(instances >= 1, "residual corpus needs instances");
    struct ResOut {
        double lhs = 0, rhs = 0;
        bool uniform = false;
    };
    std::vector<ResOut> rr(static_cast<size_t>(instances));
    parallel_for(rr.size(), ctx.threads, [&](size_t idx) {
        Rng rng = seed.engine("distance/residual", idx, Purpose::Instance);
        const Index Li = detail::pick_int(rng, 2, 10);
        const Index di = detail::pick_int(rng, 2, 30);
        const Index ni = detail::pick_int(rng, 20, 200);
        const LabelScheme sc = detail::random_scheme(rng, Li, static_cast<int>(idx % 3));
        const Dataset ds = detail::simulate(seed, "distance/residual", idx, sc, ni, di, effect_sd, sigma_w);
        const ResidualBound b = residual_bound(ds, build_scatter(ds));
        rr[idx] = {b.lhs, b.rhs, sc.kind == LabelScheme::Kind::UniformK};
    });
    std::vector<std::string> rbad;
    double worst_eq = 0;
    for (size_t i = 0; i < rr.size(); ++i) {
        const bool ok = rr[i].lhs <= rr[i].rhs * (1.0 + rtol) + 1e-300;
        double eqrel = 0;
        if (rr[i].uniform) {
            eqrel = std::abs(rr[i].lhs - rr[i].rhs) / std::max(rr[i].rhs, 1e-300);
            worst_eq = std::max(worst_eq, eqrel);
        }
        if (!ok || eqrel > rtol) rbad.push_back("instance " + std::to_string(i));
    }
    rep.details["residual_bound"] = {{"instances", instances}, {"max_uniform_equality_rel", worst_eq}};
    rep.details["distance_runtime_s"] = dist_time;
    rep.criteria.insert(rep.criteria.begin(),
                        detail::criterion(4, "Residual bound", rbad.empty(),
                                          "violations " + std::to_string(rbad.size()) +
                                              ", worst uniform equality rel " + detail::fmt(worst_eq),
                                          rbad));
    rep.wall_time_s = clock.seconds();
    return rep;
}

// ---------------------------------------------------------------------------
// convergence

namespace detail {

inline Matrix structured_effects(Index d, const std::vector<double>& svals, Rng& rng) {
    const Index L = static_cast<Index>(svals.size());
    const Frame U = random_stiefel(d, L, rng);
    Vector s(L);
    for (Index l = 0; l < L; ++l) s(l) = svals[static_cast<size_t>(l)];
    return U.columns() * s.asDiagonal();
}

inline LabelMatrix prefix(const LabelMatrix& full, Index n) { return build_labels(full.bits().topRows(n)); }

} // namespace detail

inline ExperimentReport run_convergence(const json& cfg, const Context& ctx) {
    detail::Stopwatch clock;
    const Seed seed{ctx.seed};
    const int trials = get<int>(cfg, "trials");
    const Index d = get<Index>(cfg, "d"), L = get<Index>(cfg, "L");
    const auto svals = get<std::vector<double>>(cfg, "singular_values");
    const double sigma_w = get<double>(cfg, "sigma_w");
    auto grid = get<std::vector<Index>>(cfg, "n_grid");
    require(trials >= 1, "trials must be >= 1");
    require(!grid.empty(), "n_grid must be non-empty");
    require(static_cast<Index>(svals.size()) == L, "singular_values must have L entries");
    require(L <= d, "need L <= d");
    std::sort(grid.begin(), grid.end());
    const Index n_ref = grid.back();
    detail::check_size(grid.front(), d, L, ctx);
    detail::check_size(n_ref, d, L, ctx);
    LabelScheme scheme = parse_scheme(cfg.at("scheme"), L);
    scheme.validate();

    Rng re = seed.engine("convergence", 0, Purpose::Effects);
    const Matrix A = detail::structured_effects(d, svals, re);
    const ModelParams params = isotropic_model(A, sigma_w);
    Rng rl = seed.engine("convergence", 0, Purpose::Labels);
    const LabelMatrix full = gen_labels(scheme, n_ref, rl);

    auto signal_matrix = [&](const LabelMatrix& Y) {
        const Dataset ds = make_dataset(mean_features(Y, params), Y);
        const ScatterSet ss = build_scatter(ds);
        return 2.0 * ss.Sb - ss.St_ml;
    };
    const SymMatrix M_ref = signal_matrix(full);
    const Vector ref_eigs = sym_eig(M_ref).values;
    std::vector<double> per_sample_gaps;
    for (Index i = 0; i + 1 < d; ++i) per_sample_gaps.push_back((ref_eigs(i) - ref_eigs(i + 1)) / static_cast<double>(n_ref));

    Index r = 0;
    std::string r_mode = "fixed";
    if (cfg.at("r").is_string()) {
        require(get<std::string>(cfg, "r") == "adaptive", "r must be an integer or \"adaptive\"");
        r_mode = "adaptive";
        const double thr = get<double>(cfg, "gap_threshold");
        for (Index i = 0; i < L; ++i)
            if (per_sample_gaps[static_cast<size_t>(i)] >= thr) r = i + 1;
        require(r >= 1, "no per-sample gap exceeds gap_threshold");
    } else {
        r = get<Index>(cfg, "r");
    }
    require(r >= 1 && r < d, "need 1 <= r < d");
    const Frame W_ref = top_eigenspace(M_ref, r).frame;

    struct Level {
        LabelMatrix Y;
        Matrix mean;
        Frame target;
        double gap = 0, drift = 0;
    };
    std::vector<Level> levels(grid.size());
    for (size_t g = 0; g < grid.size(); ++g) {
        Level& lv = levels[g];
        lv.Y = detail::prefix(full, grid[g]);
        lv.mean = mean_features(lv.Y, params);
        const TopEigenspace te = top_eigenspace(signal_matrix(lv.Y), r);
        lv.target = te.frame;
        lv.gap = te.gap / static_cast<double>(grid[g]);
        lv.drift = principal_angle_sin(lv.target, W_ref);
    }

    const size_t total = grid.size() * static_cast<size_t>(trials);
    std::vector<double> err(total);
    parallel_for(total, ctx.threads, [&](size_t idx) {
        const Level& lv = levels[idx / static_cast<size_t>(trials)];
        Rng rn = seed.engine("convergence", idx, Purpose::Noise);
        const Matrix X = lv.mean + noise_matrix(lv.Y.n(), params.Sigma_w, rn);
        const ScatterSet ss = build_scatter(make_dataset(X, lv.Y));
        err[idx] = principal_angle_sin(opt_td(ss, r).frame, lv.target);
    });

    ExperimentReport rep;
    rep.id = "convergence";
    rep.base_seed = ctx.seed;
    rep.table.columns = {"n", "Median sin", "95th pctile", "Drift", "per-sample gap"};
    std::vector<double> ns, meds;
    for (size_t g = 0; g < grid.size(); ++g) {
        std::vector<std::pair<size_t, double>> v;
        for (int t = 0; t < trials; ++t) {
            const size_t idx = g * static_cast<size_t>(trials) + static_cast<size_t>(t);
            v.emplace_back(idx, err[idx]);
        }
        const Summary s = aggregate(v);
        ns.push_back(static_cast<double>(grid[g]));
        meds.push_back(s.median);
        rep.table.rows.push_back({static_cast<long long>(grid[g]), s.median, s.p95, levels[g].drift, levels[g].gap});
    }
    int inversions = 0;
    std::vector<std::string> inv_rows;
    for (size_t g = 0; g + 1 < meds.size(); ++g)
        if (meds[g + 1] > meds[g]) {
            ++inversions;
            inv_rows.push_back("n=" + std::to_string(grid[g + 1]));
        }
    const double slope = meds.size() >= 3 ? slope_fit(ns, meds) : std::numeric_limits<double>::quiet_NaN();
    const auto range = get<std::vector<double>>(cfg, "slope_range");
    require(range.size() == 2, "slope_range needs two entries");
    const double max_final = get<double>(cfg, "max_final_median");
    const int max_inv = get<int>(cfg, "max_inversions");
    const double limit = get<double>(cfg, "runtime_limit_s");
    const double elapsed = clock.seconds();
    const bool ok_final = meds.back() <= max_final;
    const bool ok_mono = inversions <= max_inv;
    const bool ok_slope = slope >= range[0] && slope <= range[1];
    std::vector<std::string> offending = inv_rows;
    if (!ok_final) offending.push_back("final median " + detail::fmt(meds.back()));
    if (!ok_slope) offending.push_back("slope " + detail::fmt(slope));
    rep.details = {{"r", r},
                   {"r_mode", r_mode},
                   {"slope", slope},
                   {"inversions", inversions},
                   {"reference_n", n_ref},
                   {"reference_per_sample_gaps", per_sample_gaps}};
    rep.criteria.push_back(detail::criterion(7, "Convergence", ok_final && ok_mono && ok_slope && elapsed < limit,
                                             "final median " + detail::fmt(meds.back()) + ", inversions " +
                                                 std::to_string(inversions) + ", slope " + detail::fmt(slope) +
                                                 ", runtime " + detail::fmt(elapsed) + " s",
                                             offending));
    rep.wall_time_s = elapsed;
    return rep;
}

// ---------------------------------------------------------------------------
// factors

inline ExperimentReport run_factors(const json& cfg, const Context& ctx) {
    detail::Stopwatch clock;
    const Seed seed{ctx.seed};
    const int trials = get<int>(cfg, "trials");
    const Index n = get<Index>(cfg, "n"), d = get<Index>(cfg, "d"), L = get<Index>(cfg, "L"), r = get<Index>(cfg, "r");
    const double sigma_w = get<double>(cfg, "sigma_w"), effect_sd = get<double>(cfg, "effect_sd");
    require(trials >= 1, "trials must be >= 1");
    require(r >= 1 && r < d && r <= L, "need 1 <= r < d and r <= L");
    detail::check_size(n, d, L, ctx);

    Rng re = seed.engine("factors", 0, Purpose::Effects);
    const Matrix A = gaussian_matrix(d, L, effect_sd, re);
    const ModelParams params = isotropic_model(A, sigma_w);
    const double normA = spectral_norm(A);

    ExperimentReport rep;
    rep.id = "factors";
    rep.base_seed = ctx.seed;
    rep.table.columns = {"probe", "level", "quantity", "value"};
    auto row = [&](const std::string& probe, const std::string& level, const std::string& q, double v) {
        rep.table.rows.push_back({probe, level, q, v});
    };

    // (a) k_max sweep
    struct KLevel {
        int k_max;
        LabelMatrix Y;
        Matrix mean;
        Frame target;
        double gap = 0;
    };
    std::vector<KLevel> kl;
    int li = 0;
    for (const auto& lv : cfg.at("kmax_levels")) {
        LabelScheme sc = parse_scheme(lv.at("scheme"), L);
        sc.validate();
        Rng rl = seed.engine("factors/kmax", static_cast<std::uint64_t>(li++), Purpose::Labels);
        KLevel k{get<int>(lv, "k_max"), gen_labels(sc, n, rl), Matrix(), Frame(), 0.0};
        k.mean = mean_features(k.Y, params);
        const ScatterSet sig = build_scatter(make_dataset(k.mean, k.Y));
        const TopEigenspace te = opt_td(sig, r);
        k.target = te.frame;
        k.gap = te.gap;
        kl.push_back(std::move(k));
    }
    require(!kl.empty(), "kmax_levels must be non-empty");
    const size_t total = kl.size() * static_cast<size_t>(trials);
    std::vector<double> err(total);
    parallel_for(total, ctx.threads, [&](size_t idx) {
        const KLevel& k = kl[idx / static_cast<size_t>(trials)];
        // common noise across levels: the same trial index draws the same stream
        Rng rn = seed.engine("factors/kmax", idx % static_cast<size_t>(trials), Purpose::Noise);
        const Matrix X = k.mean + noise_matrix(n, params.Sigma_w, rn);
        err[idx] = principal_angle_sin(opt_td(build_scatter(make_dataset(X, k.Y)), r).frame, k.target);
    });
    std::vector<double> meds, ratios;
    const double rate = std::sqrt(static_cast<double>(d) * std::log(static_cast<double>(d)) / static_cast<double>(n));
    for (size_t i = 0; i < kl.size(); ++i) {
        std::vector<double> v(err.begin() + static_cast<long>(i * static_cast<size_t>(trials)),
                              err.begin() + static_cast<long>((i + 1) * static_cast<size_t>(trials)));
        const double med = aggregate(v).median;
        const double ratio = med * kl[i].gap / ((sigma_w * normA + sigma_w * sigma_w * kl[i].k_max) * rate);
        meds.push_back(med);
        ratios.push_back(ratio);
        const std::string lvl = "k_max=" + std::to_string(kl[i].k_max);
        row("kmax", lvl, "median sin", med);
        row("kmax", lvl, "gap_r", kl[i].gap);
        row("kmax", lvl, "bound ratio", ratio);
    }
    bool monotone = true;
    for (size_t i = 0; i + 1 < meds.size(); ++i) monotone = monotone && meds[i + 1] >= meds[i];
    const double rmax = *std::max_element(ratios.begin(), ratios.end());
    const double rmin = *std::min_element(ratios.begin(), ratios.end());
    const double stab = rmin > 0 ? rmax / rmin : std::numeric_limits<double>::infinity();
    const bool ok_a = monotone && stab <= get<double>(cfg, "ratio_stability");

    // (b) generalized gap under A -> cA with the noise covariance held fixed
    const double c = get<double>(cfg, "scale_factor");
    const LabelDistribution dist = empirical_distribution(kl.size() > 1 ? kl[1].Y : kl[0].Y);
    ModelParams scaled = params;
    scaled.A = c * params.A;
    const GapReport g1 = gaps(population_scatters(params, dist), r);
    const GapReport g3 = gaps(population_scatters(scaled, dist), r);
    const double delta_change = std::abs(g3.Delta_r - g1.Delta_r);
    const double gap_ratio = g3.gap_r_M_star / g1.gap_r_M_star;
    // same rescaling applied to the whole feature space (noise scaled by c^2 as well)
    ModelParams joint = scaled;
    joint.Sigma_w = (c * c) * params.Sigma_w;
    const GapReport gj = gaps(population_scatters(joint, dist), r);
    const double joint_change = std::abs(gj.Delta_r - g1.Delta_r);
    const bool ok_b = delta_change <= get<double>(cfg, "delta_tol") &&
                      std::abs(gap_ratio - c * c) <= get<double>(cfg, "gap_scale_tol") * c * c;
    row("scale", "A", "Delta_r", g1.Delta_r);
    row("scale", "cA", "Delta_r", g3.Delta_r);
    row("scale", "cA, c^2 Sigma_w", "Delta_r", gj.Delta_r);
    row("scale", "A", "gap_r(M*)", g1.gap_r_M_star);
    row("scale", "cA", "gap_r(M*)", g3.gap_r_M_star);
    row("scale", "cA/A", "gap ratio", gap_ratio);

    // (c) co-occurrence norm
    Rng rs = seed.engine("factors/gamma", 0, Purpose::Labels);
    const LabelMatrix single = gen_labels(LabelScheme::single(L), n, rs);
    LabelScheme multi_sc = parse_scheme(cfg.at("gamma_multilabel_scheme"), L);
    multi_sc.validate();
    Rng rm = seed.engine("factors/gamma", 1, Purpose::Labels);
    const LabelMatrix multi = gen_labels(multi_sc, n, rm);
    const double g_single = gamma_norm(single);
    const double g_expect = single.n_ell().maxCoeff() / static_cast<double>(n);
    const double g_multi = gamma_norm(multi);
    const bool ok_c = std::abs(g_single - g_expect) <= 4.0 * std::numeric_limits<double>::epsilon() * g_expect &&
                      g_multi > g_single;
    row("gamma", "single", "||Gamma/n||_2", g_single);
    row("gamma", "single", "max n_l/n", g_expect);
    row("gamma", "multilabel", "||Gamma/n||_2", g_multi);

    // kappa sweep (reported only)
    const auto kscales = get<std::vector<double>>(cfg, "kappa_scales");
    const int ktrials = get<int>(cfg, "kappa_trials");
    require(ktrials >= 1, "kappa_trials must be >= 1");
    const LabelMatrix& Yk = kl.size() > 1 ? kl[1].Y : kl[0].Y;
    std::vector<double> kappa_med, kerr_med;
    for (size_t si = 0; si < kscales.size(); ++si) {
        ModelParams p = params;
        p.A.topRows(r) *= kscales[si];
        const PopulationScatters pop = population_scatters(p, empirical_distribution(Yk));
        const Frame target = opt_stml(pop.Sb_inf, pop.St_inf, r).span();
        const Matrix mean = mean_features(Yk, p);
        std::vector<double> kap(static_cast<size_t>(ktrials)), ke(static_cast<size_t>(ktrials));
        parallel_for(static_cast<size_t>(ktrials), ctx.threads, [&](size_t t) {
            Rng rn = seed.engine("factors/kappa", si * 100000 + t, Purpose::Noise);
            const ScatterSet ss = build_scatter(make_dataset(mean + noise_matrix(n, p.Sigma_w, rn), Yk));
            const Vector ev = sym_eig(ss.St_ml).values;
            kap[t] = ev(0) / ev(ev.size() - 1);
            ke[t] = principal_angle_sin(opt_stml(ss.Sb, ss.St_ml, r).span(), target);
        });
        kappa_med.push_back(aggregate(kap).median);
        kerr_med.push_back(aggregate(ke).median);
        const std::string lvl = "scale=" + detail::fmt(kscales[si]);
        row("kappa", lvl, "median kappa(S_t^ML)", kappa_med.back());
        row("kappa", lvl, "median sin", kerr_med.back());
    }
    bool comove = true;
    for (size_t i = 0; i + 1 < kappa_med.size(); ++i)
        comove = comove && (kappa_med[i + 1] - kappa_med[i]) * (kerr_med[i + 1] - kerr_med[i]) >= 0;

    std::vector<std::string> offending;
    if (!ok_a) offending.push_back("k_max sweep: monotone=" + std::string(monotone ? "yes" : "no") + ", ratio spread " + detail::fmt(stab));
    if (!ok_b)
        offending.push_back("scale test: |Delta_r(cA) - Delta_r(A)| = " + detail::fmt(delta_change) +
                            ", gap ratio " + detail::fmt(gap_ratio));
    if (!ok_c) offending.push_back("co-occurrence norm");
    rep.details = {{"kmax_medians", meds},
                   {"kmax_ratios", ratios},
                   {"ratio_spread", stab},
                   {"kmax_monotone", monotone},
                   {"kmax_gaps", json::array()},
                   {"delta_r_change_fixed_noise", delta_change},
                   {"delta_r_change_joint_rescale", joint_change},
                   {"gap_ratio", gap_ratio},
                   {"gamma_single", g_single},
                   {"gamma_multilabel", g_multi},
                   {"kappa_error_comove", comove},
                   {"sub_checks", {{"a", ok_a}, {"b", ok_b}, {"c", ok_c}}}};
    for (const auto& k : kl) rep.details["kmax_gaps"].push_back(k.gap);
    rep.criteria.push_back(detail::criterion(8, "Multilabel factors", ok_a && ok_b && ok_c,
                                             std::string("(a) ") + (ok_a ? "pass" : "fail") + ", (b) " +
                                                 (ok_b ? "pass" : "fail") + ", (c) " + (ok_c ? "pass" : "fail"),
                                             offending));
    rep.wall_time_s = clock.seconds();
    return rep;
}

// ---------------------------------------------------------------------------
// concentration

inline ExperimentReport run_concentration(const json& cfg, const Context& ctx) {
    detail::Stopwatch clock;
    const Seed seed{ctx.seed};
    const Index n = get<Index>(cfg, "n"), d = get<Index>(cfg, "d"), L = get<Index>(cfg, "L"), r = get<Index>(cfg, "r");
    const double sigma_w = get<double>(cfg, "sigma_w"), effect_sd = get<double>(cfg, "effect_sd");
    const int pairs = get<int>(cfg, "pairs"), draws = get<int>(cfg, "draws"), ddraws = get<int>(cfg, "diagnostic_draws");
    const auto deltas = get<std::vector<double>>(cfg, "deltas");
    const double c_scale = get<double>(cfg, "c_scale");
    require(pairs >= 1 && draws >= 1 && ddraws >= 2 && !deltas.empty(), "concentration needs pairs, draws, deltas");
    require(r >= 1 && r < d, "need 1 <= r < d");
    detail::check_size(n, d, L, ctx);
    LabelScheme sc = parse_scheme(cfg.at("scheme"), L);
    sc.validate();

    Matrix A;
    const Dataset ds = detail::simulate(seed, "concentration", 0, sc, n, d, effect_sd, sigma_w, &A);
    const ScatterSet ss = build_scatter(ds);
    const Matrix W = top_eigenspace(ss.Sb, r).frame.columns();
    const ModelParams params = isotropic_model(A, sigma_w);
    Rng pr = seed.engine("concentration", 0, Purpose::Pairs);
    const auto pp = random_pairs(n, pairs, pr);

    struct PairOut {
        std::vector<long long> covered;
        double lin_mean_z = 0, quad_mean_z = 0, var_ratio = std::numeric_limits<double>::quiet_NaN();
        double pct_ratio = 0;
        bool has_signal = false;
    };
    std::vector<PairOut> res(static_cast<size_t>(pairs));
    parallel_for(res.size(), ctx.threads, [&](size_t p) {
        const Vector yi = ds.labels.row(pp[p].first), yj = ds.labels.row(pp[p].second);
        const TailParams tp = tail_params(W, A, yi, yj, params.Sigma_w);
        const Vector s = W.transpose() * A * (yi - yj);
        const double trpsi = tp.Psi.trace();
        PairOut o;
        o.covered.assign(deltas.size(), 0);
        std::vector<double> hw;
        for (double dl : deltas) hw.push_back(concentration_interval(tp, dl, c_scale));
        Rng nr = seed.engine("concentration/coverage", p, Purpose::Noise);
        for (int t = 0; t < draws; ++t) {
            const Matrix e = noise_matrix(2, params.Sigma_w, nr);
            const Vector u = W.transpose() * (e.row(0) - e.row(1)).transpose();
            const double dev = 2.0 * s.dot(u) + u.squaredNorm() - 2.0 * trpsi;
            for (size_t k = 0; k < deltas.size(); ++k)
                if (std::abs(dev) <= hw[k]) ++o.covered[k];
        }
        Rng dr = seed.engine("concentration/diagnostics", p, Purpose::Noise);
        std::vector<double> lin(static_cast<size_t>(ddraws)), quad(static_cast<size_t>(ddraws)),
            tot(static_cast<size_t>(ddraws));
        for (int t = 0; t < ddraws; ++t) {
            const Matrix e = noise_matrix(2, params.Sigma_w, dr);
            const Vector u = W.transpose() * (e.row(0) - e.row(1)).transpose();
            lin[static_cast<size_t>(t)] = 2.0 * s.dot(u);
            quad[static_cast<size_t>(t)] = u.squaredNorm() - 2.0 * trpsi;
            tot[static_cast<size_t>(t)] = std::abs(lin[static_cast<size_t>(t)] + quad[static_cast<size_t>(t)]);
        }
        const Summary sl = aggregate(lin), sq = aggregate(quad);
        o.lin_mean_z = sl.se > 0 ? sl.mean / sl.se : 0.0;
        o.quad_mean_z = sq.se > 0 ? sq.mean / sq.se : 0.0;
        const double pred = 8.0 * s.dot(tp.Psi.matrix() * s);
        if (pred > 0) {
            o.has_signal = true;
            double v = 0;
            for (double x : lin) v += x * x;
            v /= static_cast<double>(ddraws);
            o.var_ratio = v / pred;
        }
        std::sort(tot.begin(), tot.end());
        const double p95 = nearest_rank(tot, 95.0);
        o.pct_ratio = p95 > 0 ? nearest_rank(tot, 99.0) / p95 : 0.0;
        res[p] = o;
    });

    ExperimentReport rep;
    rep.id = "concentration";
    rep.base_seed = ctx.seed;
    rep.table.columns = {"delta", "Nominal 1-delta", "Empirical coverage"};
    std::vector<std::string> offending;
    for (size_t k = 0; k < deltas.size(); ++k) {
        long long cov = 0;
        for (const auto& o : res) cov += o.covered[k];
        const double frac = static_cast<double>(cov) / (static_cast<double>(pairs) * draws);
        if (frac < 1.0 - deltas[k]) offending.push_back("delta=" + detail::fmt(deltas[k]));
        rep.table.rows.push_back({deltas[k], 1.0 - deltas[k], frac});
    }
    // Variance check pools the per-pair ratios so the 1% tolerance sits well outside Monte Carlo noise.
    double ratio_sum = 0, worst_z = 0, worst_pct = 0;
    int with_signal = 0;
    std::vector<double> ratios;
    for (const auto& o : res) {
        worst_z = std::max({worst_z, std::abs(o.lin_mean_z), std::abs(o.quad_mean_z)});
        worst_pct = std::max(worst_pct, o.pct_ratio);
        if (o.has_signal) {
            ratio_sum += o.var_ratio;
            ratios.push_back(o.var_ratio);
            ++with_signal;
        }
    }
    const double pooled = with_signal ? ratio_sum / with_signal : std::numeric_limits<double>::quiet_NaN();
    const double vtol = get<double>(cfg, "variance_tol");
    const bool ok_var = with_signal > 0 && std::abs(pooled - 1.0) <= vtol;
    const bool ok_mean = worst_z <= get<double>(cfg, "mean_se_limit");
    const bool ok_pct = worst_pct <= get<double>(cfg, "max_percentile_ratio");
    if (!ok_var) offending.push_back("linear-part variance ratio " + detail::fmt(pooled));
    if (!ok_mean) offending.push_back("centered mean |z| " + detail::fmt(worst_z));
    if (!ok_pct) offending.push_back("percentile ratio " + detail::fmt(worst_pct));

    // total-scatter-orthogonal projection at population level
    const PopulationScatters pop = population_scatters(params, empirical_distribution(ds.labels));
    const ConstrainedBasis wst = opt_stml(pop.Sb_pop, pop.St_ml_pop, r);
    const TailParams ts = tail_params(wst.W, A, ds.labels.row(pp[0].first), ds.labels.row(pp[0].second),
                                      params.Sigma_w, StmlCheckInput{pop.Sb_pop, pop.K_pop});
    const Vector th = *ts.stml_theta;
    const double lam_min_st = sym_eig(pop.St_ml_pop).values(d - 1);
    rep.details = {{"pooled_linear_variance_ratio", pooled},
                   {"per_pair_linear_variance_ratio", ratios},
                   {"max_abs_mean_z", worst_z},
                   {"max_p99_over_p95", worst_pct},
                   {"stml_identity_residual", *ts.stml_identity_residual},
                   {"stml_theta_min", th.minCoeff()},
                   {"stml_theta_max", th.maxCoeff()},
                   {"stml_psi_norm", ts.psi_norm},
                   {"stml_psi_norm_expected", (1.0 - th.minCoeff()) / pop.K_pop},
                   {"inv_lambda_min_St_ml_pop", 1.0 / lam_min_st}};
    const double elapsed = clock.seconds();
    const double limit = get<double>(cfg, "runtime_limit_s");
    rep.criteria.push_back(detail::criterion(9, "Concentration coverage", offending.empty() && elapsed < limit,
                                             "pooled variance ratio " + detail::fmt(pooled) + ", max |z| " +
                                                 detail::fmt(worst_z) + ", max p99/p95 " + detail::fmt(worst_pct) +
                                                 ", runtime " + detail::fmt(elapsed) + " s",
                                             offending));
    rep.wall_time_s = elapsed;
    return rep;
}

// ---------------------------------------------------------------------------
// interaction

inline ExperimentReport run_interaction(const json& cfg, const Context& ctx) {
    detail::Stopwatch clock;
    const Seed seed{ctx.seed};
    const Index n = get<Index>(cfg, "n"), d = get<Index>(cfg, "d"), L = get<Index>(cfg, "L"), r = get<Index>(cfg, "r");
    const double sigma_w = get<double>(cfg, "sigma_w"), effect_sd = get<double>(cfg, "effect_sd");
    const double inter_sd = get<double>(cfg, "interaction_sd");
    const auto alphas = get<std::vector<double>>(cfg, "alphas");
    const int pairs = get<int>(cfg, "pairs"), draws = get<int>(cfg, "draws");
    const double sek = get<double>(cfg, "se_multiplier");
    require(!alphas.empty() && pairs >= 1 && draws >= 2, "interaction needs alphas, pairs, >= 2 draws");
    require(r >= 1 && r <= d, "need 1 <= r <= d");
    require(L >= 2, "interactions need L >= 2");
    detail::check_size(n, d, L, ctx);
    LabelScheme sc = parse_scheme(cfg.at("scheme"), L);
    sc.validate();

    Rng rl = seed.engine("interaction", 0, Purpose::Labels);
    const LabelMatrix labels = gen_labels(sc, n, rl);
    Rng re = seed.engine("interaction", 0, Purpose::Effects);
    ModelParams params = isotropic_model(gaussian_matrix(d, L, effect_sd, re), sigma_w);
    Rng rb = seed.engine("interaction", 0, Purpose::Interactions);
    params.B_inter = gaussian_matrix(d, L * (L - 1) / 2, inter_sd, rb);
    Rng pr = seed.engine("interaction", 0, Purpose::Pairs);
    const auto pp = random_pairs(n, pairs, pr);

    struct Out {
        bool naive = false, corrected = false;
    };
    std::vector<Out> res(alphas.size() * static_cast<size_t>(pairs));
    for (size_t a = 0; a < alphas.size(); ++a) {
        Rng rn = seed.engine("interaction", 0, Purpose::Noise);
        const Dataset ds = gen_data(labels, params, alphas[a], rn);
        const Matrix W = top_eigenspace(build_scatter(ds).Sb, r).frame.columns();
        const Matrix B_eff = alphas[a] * params.B_inter;
        parallel_for(static_cast<size_t>(pairs), ctx.threads, [&](size_t p) {
            const Vector yi = labels.row(pp[p].first), yj = labels.row(pp[p].second);
            const DistanceBudget b = distance_budget(W, params.A, yi, yj, params.Sigma_w);
            const InteractionBound ib = interaction_bound(W, params.A, B_eff, yi, yj, ProjectionConstraint::Stiefel,
                                                          labels.k_max());
            const Vector mean_diff = params.A * (yi - yj) + B_eff * (pair_products(yi) - pair_products(yj));
            Rng nr = seed.engine("interaction/draws", p, Purpose::Noise);
            const Matrix E = noise_matrix(2 * draws, params.Sigma_w, nr);
            std::vector<double> D(static_cast<size_t>(draws));
            for (int t = 0; t < draws; ++t)
                D[static_cast<size_t>(t)] =
                    (W.transpose() * (mean_diff + (E.row(2 * t) - E.row(2 * t + 1)).transpose())).squaredNorm();
            const Summary s = aggregate(D);
            const double tol = sek * s.se;
            Out o;
            o.naive = s.mean >= b.lower - tol && s.mean <= b.upper + tol;
            o.corrected = s.mean >= b.lower - ib.corrected_bound - tol && s.mean <= b.upper + ib.corrected_bound + tol;
            res[a * static_cast<size_t>(pairs) + p] = o;
        });
    }

    ExperimentReport rep;
    rep.id = "interaction";
    rep.base_seed = ctx.seed;
    rep.table.columns = {"Interaction strength alpha", "Naive bound", "Corrected bound"};
    const double min_rate = get<double>(cfg, "min_corrected_rate");
    std::vector<std::string> offending;
    std::vector<double> naive_rates, corr_rates;
    for (size_t a = 0; a < alphas.size(); ++a) {
        double nv = 0, cr = 0;
        for (int p = 0; p < pairs; ++p) {
            nv += res[a * static_cast<size_t>(pairs) + static_cast<size_t>(p)].naive;
            cr += res[a * static_cast<size_t>(pairs) + static_cast<size_t>(p)].corrected;
        }
        nv /= pairs;
        cr /= pairs;
        naive_rates.push_back(nv);
        corr_rates.push_back(cr);
        if (cr < min_rate) offending.push_back("alpha=" + detail::fmt(alphas[a]) + " corrected " + detail::fmt(cr));
        rep.table.rows.push_back({alphas[a], nv, cr});
    }
    const size_t amax = static_cast<size_t>(std::max_element(alphas.begin(), alphas.end()) - alphas.begin());
    const bool separated = naive_rates[amax] < corr_rates[amax];
    if (!separated) offending.push_back("naive rate at largest alpha not below corrected");
    rep.criteria.push_back(detail::criterion(10, "Interaction robustness", offending.empty(),
                                             "naive at alpha=" + detail::fmt(alphas[amax]) + " " +
                                                 detail::fmt(naive_rates[amax]) + " vs corrected " +
                                                 detail::fmt(corr_rates[amax]),
                                             offending));
    rep.wall_time_s = clock.seconds();
    return rep;
}

// ---------------------------------------------------------------------------
// regularization

inline ExperimentReport run_regularization(const json& cfg, const Context& ctx) {
    detail::Stopwatch clock;
    const Seed seed{ctx.seed};
    const int trials = get<int>(cfg, "trials");
    const Index n = get<Index>(cfg, "n"), d = get<Index>(cfg, "d"), L = get<Index>(cfg, "L"), r = get<Index>(cfg, "r");
    const double sigma_w = get<double>(cfg, "sigma_w"), effect_sd = get<double>(cfg, "effect_sd");
    const auto gammas = get<std::vector<double>>(cfg, "gammas");
    require(trials >= 1 && !gammas.empty(), "regularization needs trials and gammas");
    require(r >= 1 && r < d, "need 1 <= r < d");
    for (double g : gammas) require(g >= 0, "gammas must be non-negative");
    detail::check_size(n, d, L, ctx);
    LabelScheme sc = parse_scheme(cfg.at("scheme"), L);
    sc.validate();

    std::vector<std::vector<RegularizationRow>> res(static_cast<size_t>(trials));
    parallel_for(res.size(), ctx.threads, [&](size_t t) {
        const Dataset ds = detail::simulate(seed, "regularization", t, sc, n, d, effect_sd, sigma_w);
        res[t] = regularization_report(build_scatter(ds), gammas, r);
    });

    ExperimentReport rep;
    rep.id = "regularization";
    rep.base_seed = ctx.seed;
    rep.table.columns = {"gamma", "rank(S_b^ML)", "kappa(S_w^ML + gamma I)", "max rel gap deviation"};
    const int expect_rank = get<int>(cfg, "expect_rank");
    const double gap_tol = get<double>(cfg, "gap_tol");
    const auto kr = get<std::vector<double>>(cfg, "kappa_ratio_range");
    require(kr.size() == 2, "kappa_ratio_range needs two entries");
    std::vector<std::string> offending;
    std::vector<double> kmed;
    for (size_t g = 0; g < gammas.size(); ++g) {
        std::vector<double> kap;
        bool rank_ok = true;
        bool all_inf = true;
        double worst_gap = 0;
        for (const auto& tr : res) {
            rank_ok = rank_ok && tr[g].rank_sb == expect_rank;
            all_inf = all_inf && tr[g].kappa_infinite;
            kap.push_back(tr[g].kappa_sw_gamma);
            const double ref = tr[0].gap_td;
            worst_gap = std::max(worst_gap, std::abs(tr[g].gap_td - ref) / std::max(1.0, std::abs(ref)));
        }
        const double med = aggregate(kap).median;
        kmed.push_back(med);
        if (!rank_ok) offending.push_back("gamma=" + detail::fmt(gammas[g]) + " rank");
        if (worst_gap > gap_tol) offending.push_back("gamma=" + detail::fmt(gammas[g]) + " gap deviation " + detail::fmt(worst_gap));
        if (gammas[g] == 0.0 && !all_inf) offending.push_back("gamma=0 kappa not flagged infinite");
        rep.table.rows.push_back({gammas[g], static_cast<long long>(res[0][g].rank_sb), med, worst_gap});
    }
    json ratios = json::array();
    for (size_t g = 0; g + 1 < gammas.size(); ++g) {
        if (!std::isfinite(kmed[g])) continue;
        const double ratio = kmed[g] / kmed[g + 1];
        ratios.push_back(ratio);
        if (ratio < kr[0] || ratio > kr[1])
            offending.push_back("kappa ratio gamma=" + detail::fmt(gammas[g]) + "->" + detail::fmt(gammas[g + 1]) +
                                " is " + detail::fmt(ratio));
    }
    rep.details = {{"kappa_ratios", ratios}};
    rep.criteria.push_back(detail::criterion(11, "Regularization", offending.empty(),
                                             std::to_string(offending.size()) + " violations", offending));
    rep.wall_time_s = clock.seconds();
    return rep;
}

inline ExperimentReport run_experiment(const std::string& id, const json& cfg, const Context& ctx) {
    if (id == "rank") return run_rank(cfg, ctx);
    if (id == "divergence") return run_divergence(cfg, ctx);
    if (id == "distance") return run_distance(cfg, ctx);
    if (id == "convergence") return run_convergence(cfg, ctx);
    if (id == "factors") return run_factors(cfg, ctx);
    if (id == "concentration") return run_concentration(cfg, ctx);
    if (id == "interaction") return run_interaction(cfg, ctx);
    if (id == "regularization") return run_regularization(cfg, ctx);
    throw Error(ErrorCode::ConfigError, "unknown experiment '" + id + "'");
}

/// Applies the --trials override to the key that counts repetitions for this experiment.
inline void override_trials(json& cfg, int trials) {
    if (cfg.contains("trials"))
        cfg["trials"] = trials;
    else if (cfg.contains("pairs"))
        cfg["pairs"] = trials;
}

} // namespace mlda::harness
