#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "mlda/error.hpp"
#include "mlda/spectral.hpp"
#include "mlda/synth.hpp"

namespace mlda {

enum class SigmaConvention {
    Full,    // singular values of the whole W^T A
    Support, // restricted to the labels where y_i and y_j differ
};

struct DistanceBudget {
    double signal = 0.0;         // ||W^T A delta||^2
    double C_w = 0.0;            // 2 tr(W^T Sigma_w W)
    double total_expected = 0.0; // signal + C_w
    double d_H = 0.0;
    double d_J = 0.0;
    double sigma_min = 0.0;      // inf_x ||W^T A x|| / ||x||
    double sigma_max = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

namespace detail {

inline void check_pair(const Matrix& W, const Matrix& A, const Vector& yi, const Vector& yj, Index sigma_dim) {
    if (W.rows() != A.rows()) throw Error(ErrorCode::InvalidInput, "W and A have different row counts");
    if (yi.size() != A.cols() || yj.size() != A.cols())
        throw Error(ErrorCode::InvalidInput, "label vectors do not match A");
    if (sigma_dim != W.rows()) throw Error(ErrorCode::InvalidInput, "Sigma_w dimension mismatch");
}

// Smallest gain of an r x L map over all of R^L; zero when r < L.
inline double min_gain(const Matrix& m) {
    if (m.cols() == 0) return 0.0;
    if (m.rows() < m.cols()) return 0.0;
    const Vector s = singular_values(m);
    return s(s.size() - 1);
}

} // namespace detail

inline DistanceBudget distance_budget(const Matrix& W, const Matrix& A, const Vector& yi, const Vector& yj,
                                      const SymMatrix& Sigma_w, SigmaConvention conv = SigmaConvention::Full) {
    detail::check_pair(W, A, yi, yj, Sigma_w.dim());
    const Vector delta = yi - yj;
    const Matrix WA = W.transpose() * A;
    DistanceBudget b;
    b.signal = (WA * delta).squaredNorm();
    b.C_w = 2.0 * Sigma_w.congruence(W).trace();
    b.total_expected = b.signal + b.C_w;
    const double inter = yi.dot(yj);
    b.d_H = yi.sum() + yj.sum() - 2.0 * inter;
    const double uni = yi.sum() + yj.sum() - inter;
    b.d_J = uni > 0 ? b.d_H / uni : 0.0;
    Matrix M = WA;
    if (conv == SigmaConvention::Support) {
        std::vector<Index> cols;
        for (Index l = 0; l < delta.size(); ++l)
            if (delta(l) != 0.0) cols.push_back(l);
        M.resize(WA.rows(), static_cast<Index>(cols.size()));
        for (size_t c = 0; c < cols.size(); ++c) M.col(static_cast<Index>(c)) = WA.col(cols[c]);
    }
    b.sigma_max = M.cols() ? spectral_norm(M) : 0.0;
    b.sigma_min = detail::min_gain(M);
    b.lower = b.sigma_min * b.sigma_min * b.d_H + b.C_w;
    b.upper = b.sigma_max * b.sigma_max * b.d_H + b.C_w;
    return b;
}

struct SnrReport {
    double value = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

/// Pairwise SNR with the orthonormal-projection bounds.
inline SnrReport snr(const DistanceBudget& budget, Index r, const SymMatrix& Sigma_w) {
    if (!(budget.C_w > 0.0)) throw Error(ErrorCode::DegenerateNoise, "projected noise energy is zero");
    const Vector ev = sym_eig(Sigma_w).values;
    const double lmax = ev(0);
    const double lmin = ev(ev.size() - 1);
    const double rr = static_cast<double>(r);
    SnrReport s;
    s.value = budget.signal / budget.C_w;
    s.lower = budget.sigma_min * budget.sigma_min * budget.d_H / (2.0 * rr * lmax);
    s.upper = lmin > 0 ? budget.sigma_max * budget.sigma_max * budget.d_H / (2.0 * rr * lmin)
                       : std::numeric_limits<double>::infinity();
    return s;
}

struct JaccardBound {
    double d_J = 0.0;
    double exact_factor = 0.0; // k_i + k_j - y_i^T y_j
    double weak_factor = 0.0;  // max(k_i, k_j)
    double exact = 0.0;        // sigma_min^2 * exact_factor * d_J
    double weakened = 0.0;     // sigma_min^2 * weak_factor * d_J
};

inline JaccardBound jaccard_lower(const DistanceBudget& budget, const Vector& yi, const Vector& yj) {
    const double ki = yi.sum();
    const double kj = yj.sum();
    if (ki < 1 || kj < 1) throw Error(ErrorCode::InvalidInput, "Jaccard bound needs non-empty label sets");
    JaccardBound j;
    const double inter = yi.dot(yj);
    j.exact_factor = ki + kj - inter;
    j.weak_factor = std::max(ki, kj);
    j.d_J = (ki + kj - 2.0 * inter) / j.exact_factor;
    const double s2 = budget.sigma_min * budget.sigma_min;
    j.exact = s2 * j.exact_factor * j.d_J;
    j.weakened = s2 * j.weak_factor * j.d_J;
    return j;
}

/// Population-orthogonality data for the optional identity check in tail_params.
struct StmlCheckInput {
    SymMatrix Sb_pop;
    double K_pop = 1.0;
};

struct TailParams {
    double V = 0.0;
    double B_tail = 0.0;
    SymMatrix Psi;
    double psi_norm = 0.0; // ||Psi||_2
    double psi_fro2 = 0.0; // ||Psi||_F^2
    double signal = 0.0;
    std::optional<double> stml_identity_residual;
    std::optional<Vector> stml_theta;
};

inline TailParams tail_params(const Matrix& W, const Matrix& A, const Vector& yi, const Vector& yj,
                              const SymMatrix& Sigma_w, const std::optional<StmlCheckInput>& stml = std::nullopt) {
    detail::check_pair(W, A, yi, yj, Sigma_w.dim());
    TailParams t;
    t.Psi = Sigma_w.congruence(W);
    const Vector ev = sym_eig(t.Psi).values;
    t.psi_norm = std::max(0.0, ev.cwiseAbs().maxCoeff());
    t.psi_fro2 = t.Psi.matrix().squaredNorm();
    t.signal = (W.transpose() * A * (yi - yj)).squaredNorm();
    t.B_tail = 4.0 * t.psi_norm;
    t.V = std::sqrt(16.0 * t.signal * t.psi_norm + 32.0 * t.psi_fro2);
    if (stml) {
        const SymMatrix proj = stml->Sb_pop.congruence(W);
        const Index r = W.cols();
        const Matrix expect = (Matrix::Identity(r, r) - proj.matrix()) / stml->K_pop;
        t.stml_identity_residual = (t.Psi.matrix() - expect).norm();
        t.stml_theta = sym_eig(proj).values;
    }
    return t;
}

inline double concentration_interval(const TailParams& p, double delta_prob, double c_scale = 1.0) {
    if (!(delta_prob > 0.0 && delta_prob < 1.0)) throw Error(ErrorCode::InvalidInput, "delta must lie in (0, 1)");
    if (!(c_scale > 0.0)) throw Error(ErrorCode::InvalidInput, "c_scale must be positive");
    const double lg = std::log(2.0 / delta_prob);
    return p.V * std::sqrt(lg / c_scale) + p.B_tail * lg / c_scale;
}

enum class ProjectionConstraint { None, Stiefel, TotalScatter };

struct InteractionBound {
    double naive_gap_bound = 0.0;  // allowance of the linear model: none
    double corrected_bound = 0.0;  // 2 smax(W^T A)||delta|| smax(W^T B)||dz|| + smax(W^T B)^2 ||dz||^2
    double z_norm = 0.0;
    double z_norm_bound = 0.0;     // sqrt(d_H * min(k_max - 1, L - 1))
    double exact_shift = 0.0;      // ||s + q||^2 - ||s||^2
    std::optional<double> stiefel_bound;
    std::optional<double> stml_bound;
};

/// `B_eff` is the interaction matrix already scaled by its strength.
/// `k_max` defaults to max(k_i, k_j); `lam_min_stml` is needed for the TotalScatter form.
inline InteractionBound interaction_bound(const Matrix& W, const Matrix& A, const Matrix& B_eff, const Vector& yi,
                                          const Vector& yj, ProjectionConstraint constraint = ProjectionConstraint::None,
                                          std::optional<double> k_max = std::nullopt, double lam_min_stml = 0.0) {
    const Index L = A.cols();
    if (W.rows() != A.rows() || yi.size() != L || yj.size() != L)
        throw Error(ErrorCode::InvalidInput, "interaction_bound: dimension mismatch");
    if (B_eff.rows() != A.rows() || B_eff.cols() != L * (L - 1) / 2)
        throw Error(ErrorCode::InvalidInput, "interaction_bound: B must be d x L(L-1)/2");
    const Vector delta = yi - yj;
    const Vector dz = pair_products(yi) - pair_products(yj);
    const double dn = delta.norm();
    InteractionBound out;
    out.z_norm = dz.norm();
    const double d_H = delta.cwiseAbs().sum();
    const double km = k_max.value_or(std::max(yi.sum(), yj.sum()));
    out.z_norm_bound = std::sqrt(d_H * std::min(km - 1.0, static_cast<double>(L) - 1.0));
    if (out.z_norm > out.z_norm_bound + 1e-12)
        throw Error(ErrorCode::InternalCheck, "pair-product difference exceeds its bound");

    const Matrix WA = W.transpose() * A;
    const Matrix WB = W.transpose() * B_eff;
    const double sa = WA.size() ? spectral_norm(WA) : 0.0;
    const double sb = WB.size() ? spectral_norm(WB) : 0.0;
    out.corrected_bound = 2.0 * sa * dn * sb * out.z_norm + sb * sb * out.z_norm * out.z_norm;
    const Vector s = WA * delta;
    const Vector q = WB * dz;
    out.exact_shift = (s + q).squaredNorm() - s.squaredNorm();

    if (constraint != ProjectionConstraint::None) {
        const double a = A.size() ? spectral_norm(A) : 0.0;
        const double b = B_eff.size() ? spectral_norm(B_eff) : 0.0;
        const double base = 2.0 * a * dn * b * out.z_norm + b * b * out.z_norm * out.z_norm;
        if (constraint == ProjectionConstraint::Stiefel) out.stiefel_bound = base;
        if (constraint == ProjectionConstraint::TotalScatter) {
            if (!(lam_min_stml > 0.0)) throw Error(ErrorCode::InvalidInput, "need lambda_min of St_ml > 0");
            out.stml_bound = base / lam_min_stml;
        }
    }
    return out;
}

} // namespace mlda
