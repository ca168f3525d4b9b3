#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "mlda/error.hpp"
#include "mlda/scatter.hpp"
#include "mlda/spectral.hpp"

namespace mlda {

struct ObjectiveValues {
    double J_TR = 0.0;
    double J_RT = 0.0;
    double J_DR = 0.0;
    double J_TD = 0.0;
    bool rt_flagged = false; // W^T Sw W singular
    bool dr_flagged = false; // denominator determinant below the floor
};

inline ObjectiveValues eval_objectives(const Matrix& W, const SymMatrix& Sb, const SymMatrix& Sw) {
    if (W.rows() != Sb.dim() || Sb.dim() != Sw.dim())
        throw Error(ErrorCode::InvalidInput, "eval_objectives: dimension mismatch");
    if (W.cols() < 1 || numeric_rank(W) != W.cols())
        throw Error(ErrorCode::InvalidInput, "eval_objectives: W must have full column rank");
    const SymMatrix Bm = Sb.congruence(W);
    const SymMatrix Wm = Sw.congruence(W);
    ObjectiveValues v;
    const double tb = Bm.trace();
    const double tw = Wm.trace();
    v.J_TD = tb - tw;
    v.J_TR = tw > 0 ? tb / tw : std::numeric_limits<double>::infinity();

    const EigenPair ew = sym_eig(Wm);
    const Index r = W.cols();
    const double wmax = ew.values(0);
    const double wmin = ew.values(r - 1);
    if (!(wmin > 1e-14 * std::max(wmax, 0.0)) || !(wmin > 0.0)) {
        v.rt_flagged = true;
        v.dr_flagged = true;
        v.J_RT = std::numeric_limits<double>::infinity();
        v.J_DR = std::numeric_limits<double>::infinity();
        return v;
    }
    Eigen::LLT<Matrix> llt(Wm.matrix());
    v.J_RT = llt.solve(Bm.matrix()).trace();

    double logdet_w = 0.0;
    for (Index i = 0; i < r; ++i) logdet_w += std::log(ew.values(i));
    if (logdet_w < std::log(1e-300)) {
        v.dr_flagged = true;
        v.J_DR = std::numeric_limits<double>::infinity();
        return v;
    }
    const Vector eb = sym_eig(Bm).values;
    if (!(eb(r - 1) > 0.0)) {
        v.J_DR = 0.0;
        return v;
    }
    double logdet_b = 0.0;
    for (Index i = 0; i < r; ++i) logdet_b += std::log(eb(i));
    v.J_DR = std::exp(logdet_b - logdet_w);
    return v;
}

/// Maxima of the four objectives under W^T St_ml W = I, from the generalized eigenvalues theta.
inline ObjectiveValues theta_forms(const Vector& theta) {
    const double r = static_cast<double>(theta.size());
    const double s = theta.sum();
    ObjectiveValues v;
    v.J_TD = 2.0 * s - r;
    v.J_TR = s / (r - s);
    v.J_RT = 0.0;
    v.J_DR = 1.0;
    for (Index i = 0; i < theta.size(); ++i) {
        v.J_RT += theta(i) / (1.0 - theta(i));
        v.J_DR *= theta(i) / (1.0 - theta(i));
    }
    return v;
}

/// Trace-difference optimizer: top-r eigenspace of 2 Sb - St_ml.
inline TopEigenspace opt_td(const SymMatrix& Sb, const SymMatrix& St_ml, Index r) {
    return top_eigenspace(2.0 * Sb - St_ml, r);
}

inline TopEigenspace opt_td(const ScatterSet& ss, Index r) { return opt_td(ss.Sb, ss.St_ml, r); }

/// Solution under the total-scatter constraint W^T (St + gamma I) W = I.
/// Columns are not orthonormal; use span() for angle computations.
struct ConstrainedBasis {
    Matrix W;     // d x r
    Vector theta; // all generalized eigenvalues, descending

    Vector top_theta() const { return theta.head(W.cols()); }
    Frame span() const { return orthonormalize(W); }
};

inline ConstrainedBasis opt_stml(const SymMatrix& Sb, const SymMatrix& St_total, Index r, double gamma = 0.0) {
    const Index d = Sb.dim();
    if (St_total.dim() != d) throw Error(ErrorCode::InvalidInput, "opt_stml: dimension mismatch");
    if (r < 1 || r > d) throw Error(ErrorCode::InvalidInput, "opt_stml: need 1 <= r <= d");
    if (!(gamma >= 0.0)) throw Error(ErrorCode::InvalidInput, "opt_stml: ridge must be non-negative");
    const SymMatrix St = gamma > 0 ? St_total + gamma * SymMatrix::identity(d) : St_total;
    const Matrix Wh = inverse_sqrt(St, 1e-12, ErrorCode::SingularTotalScatter);
    const EigenPair ep = sym_eig(SymMatrix(Wh * Sb.matrix() * Wh));
    ConstrainedBasis out;
    out.W = Wh * ep.vectors.leftCols(r);
    out.theta = ep.values;
    return out;
}

struct TraceRatioResult {
    Frame frame;
    double lambda_star = 0.0;
    int iterations = 0;
    double residual = 0.0; // |f(lambda*)| / (||Sb||_2 + lambda* ||Sw||_2)
};

class TraceRatioNotConverged : public Error {
public:
    explicit TraceRatioNotConverged(TraceRatioResult last)
        : Error(ErrorCode::NotConverged, "trace ratio iteration hit max_iter"), last_(std::move(last)) {}
    const TraceRatioResult& last() const { return last_; }

private:
    TraceRatioResult last_;
};

namespace detail {

inline double trace_ratio_at(const Matrix& W, const SymMatrix& Sb, const SymMatrix& Sw) {
    const double den = Sw.congruence(W).trace();
    if (!(den > 0.0)) throw Error(ErrorCode::InvalidInput, "trace ratio: W^T Sw W has zero trace");
    return Sb.congruence(W).trace() / den;
}

} // namespace detail

/// Trace-ratio maximization over St(d, r) by the lambda-update iteration.
inline TraceRatioResult trace_ratio_stiefel(const SymMatrix& Sb, const SymMatrix& Sw, Index r, double tol = 1e-10,
                                            int max_iter = 500) {
    if (Sb.dim() != Sw.dim()) throw Error(ErrorCode::InvalidInput, "trace ratio: dimension mismatch");
    Frame W = top_eigenspace(Sb, r).frame;
    double lam = detail::trace_ratio_at(W.columns(), Sb, Sw);
    const double nb = sym_eig(Sb).values.cwiseAbs().maxCoeff();
    const double nw = sym_eig(Sw).values.cwiseAbs().maxCoeff();
    auto finish = [&](int it) {
        TraceRatioResult res;
        res.frame = W;
        res.lambda_star = lam;
        res.iterations = it;
        const Vector f = sym_eig(Sb - lam * Sw).values;
        const double scale = std::max(nb + std::abs(lam) * nw, std::numeric_limits<double>::min());
        res.residual = std::abs(f.head(r).sum()) / scale;
        return res;
    };
    for (int it = 1; it <= max_iter; ++it) {
        const Frame next = top_eigenspace(Sb - lam * Sw, r).frame;
        const double lam_next = detail::trace_ratio_at(next.columns(), Sb, Sw);
        if (lam_next < lam - 1e-12 * std::max(1.0, std::abs(lam)))
            throw Error(ErrorCode::InternalCheck, "trace ratio sequence decreased");
        const bool done = std::abs(lam_next - lam) <= tol * std::max(1.0, std::abs(lam));
        if (lam_next >= lam) {
            W = next;
            lam = lam_next;
        }
        if (done) return finish(it);
    }
    throw TraceRatioNotConverged(finish(max_iter));
}

inline double commutativity_defect(const SymMatrix& Sb, const SymMatrix& St) {
    if (Sb.dim() != St.dim()) throw Error(ErrorCode::InvalidInput, "commutativity_defect: dimension mismatch");
    const double nb = Sb.frobenius();
    const double nt = St.frobenius();
    if (nb == 0.0 || nt == 0.0) return 0.0;
    const Matrix c = Sb.matrix() * St.matrix() - St.matrix() * Sb.matrix();
    return c.norm() / (nb * nt);
}

struct DavisKahanCheck {
    double angle = 0.0; // sin of the largest principal angle
    double bound = 0.0; // pert_norm / gap
    bool holds = false;
};

inline DavisKahanCheck davis_kahan_check(const Frame& U_hat, const Frame& U_ref, double pert_norm, double gap) {
    if (!(gap > 0.0)) throw Error(ErrorCode::InvalidGap, "Davis-Kahan check needs a positive gap");
    DavisKahanCheck c;
    c.angle = principal_angle_sin(U_hat, U_ref);
    c.bound = pert_norm / gap;
    c.holds = c.angle <= c.bound * (1.0 + 1e-8) || c.bound >= 1.0;
    return c;
}

struct RegularizationRow {
    double gamma = 0.0;
    int rank_sb = 0;
    double kappa_sw_gamma = 0.0; // +inf when Sw + gamma I is numerically singular
    bool kappa_infinite = false;
    double gap_td = 0.0;         // lambda_r - lambda_{r+1} of Sb - (Sw + gamma I)
};

inline std::vector<RegularizationRow> regularization_report(const ScatterSet& ss, const std::vector<double>& gammas,
                                                            Index r, const RankTolerance& tol = {}) {
    const Index d = ss.Sb.dim();
    if (r < 1 || r >= d) throw Error(ErrorCode::InvalidInput, "regularization_report: need 1 <= r < d");
    std::vector<RegularizationRow> rows;
    const int rank_sb = numeric_rank(ss.Sb.matrix(), tol);
    const SymMatrix Id = SymMatrix::identity(d);
    for (double g : gammas) {
        if (!(g >= 0.0)) throw Error(ErrorCode::InvalidInput, "regularization_report: gamma must be >= 0");
        RegularizationRow row;
        row.gamma = g;
        row.rank_sb = rank_sb;
        const Vector ev = sym_eig(ss.Sw + g * Id).values;
        const double lmax = ev(0);
        const double lmin = ev(d - 1);
        const double floor = static_cast<double>(d) * std::numeric_limits<double>::epsilon() * std::abs(lmax);
        if (lmin <= floor) {
            row.kappa_infinite = true;
            row.kappa_sw_gamma = std::numeric_limits<double>::infinity();
        } else {
            row.kappa_sw_gamma = lmax / lmin;
        }
        const Vector td = sym_eig(ss.Sb - (ss.Sw + g * Id)).values;
        row.gap_td = td(r - 1) - td(r);
        rows.push_back(row);
    }
    return rows;
}

} // namespace mlda
