#pragma once

#include <cmath>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "mlda/error.hpp"
#include "mlda/scatter.hpp"
#include "mlda/spectral.hpp"

namespace mlda {

/// Finite mixture over binary label patterns with exact moments.
struct LabelDistribution {
    std::vector<Vector> patterns;
    std::vector<double> probs;
    Vector pi;                    // marginals
    Matrix C;                     // E[y y^T]
    Matrix Sigma_y;               // C - pi pi^T
    std::vector<Matrix> cond_cov; // Cov(y | y_l = 1)
    double K_pop = 0.0;

    Index L() const { return pi.size(); }
    bool single_label() const {
        for (const auto& p : patterns)
            if (p.sum() != 1.0) return false;
        return true;
    }
};

inline LabelDistribution label_moments(const std::vector<Vector>& patterns, const std::vector<double>& probs) {
    if (patterns.empty() || patterns.size() != probs.size())
        throw Error(ErrorCode::InvalidInput, "pattern list and probabilities must be non-empty and aligned");
    const Index L = patterns.front().size();
    if (L < 1) throw Error(ErrorCode::InvalidInput, "patterns need at least one label");
    double total = 0.0;
    for (size_t p = 0; p < patterns.size(); ++p) {
        const Vector& y = patterns[p];
        if (y.size() != L) throw Error(ErrorCode::InvalidInput, "patterns have inconsistent lengths");
        for (Index l = 0; l < L; ++l)
            if (y(l) != 0.0 && y(l) != 1.0) throw Error(ErrorCode::InvalidInput, "pattern entries must be 0 or 1");
        if (y.sum() < 1) throw Error(ErrorCode::InvalidInput, "every pattern needs at least one label");
        if (!(probs[p] >= 0.0)) throw Error(ErrorCode::InvalidInput, "negative pattern probability");
        total += probs[p];
    }
    if (std::abs(total - 1.0) > 1e-12) throw Error(ErrorCode::InvalidInput, "pattern probabilities must sum to 1");

    LabelDistribution dist;
    dist.patterns = patterns;
    dist.probs = probs;
    dist.pi = Vector::Zero(L);
    dist.C = Matrix::Zero(L, L);
    for (size_t p = 0; p < patterns.size(); ++p) {
        dist.pi += probs[p] * patterns[p];
        dist.C += probs[p] * patterns[p] * patterns[p].transpose();
    }
    for (Index l = 0; l < L; ++l)
        if (!(dist.pi(l) > 0.0)) throw Error(ErrorCode::MissingLabel, "label " + std::to_string(l) + " has zero probability");
    dist.C = 0.5 * (dist.C + dist.C.transpose());
    dist.Sigma_y = dist.C - dist.pi * dist.pi.transpose();
    dist.K_pop = dist.pi.sum();
    dist.cond_cov.resize(L);
    for (Index l = 0; l < L; ++l) {
        Matrix second = Matrix::Zero(L, L);
        for (size_t p = 0; p < patterns.size(); ++p)
            if (patterns[p](l) == 1.0) second += probs[p] * patterns[p] * patterns[p].transpose();
        second /= dist.pi(l);
        const Vector m = dist.C.col(l) / dist.pi(l);
        dist.cond_cov[l] = second - m * m.transpose();
    }
    return dist;
}

/// Pattern frequencies of an observed label matrix, in order of first appearance.
inline LabelDistribution empirical_distribution(const LabelMatrix& labels) {
    std::map<std::vector<int>, size_t> index;
    std::vector<Vector> patterns;
    std::vector<double> counts;
    for (Index i = 0; i < labels.n(); ++i) {
        std::vector<int> key(static_cast<size_t>(labels.L()));
        for (Index l = 0; l < labels.L(); ++l) key[static_cast<size_t>(l)] = static_cast<int>(labels.bits()(i, l));
        auto it = index.find(key);
        if (it == index.end()) {
            index.emplace(key, patterns.size());
            patterns.push_back(labels.row(i));
            counts.push_back(1.0);
        } else {
            counts[it->second] += 1.0;
        }
    }
    for (auto& c : counts) c /= static_cast<double>(labels.n());
    double s = 0.0;
    for (double c : counts) s += c;
    counts.back() += 1.0 - s;
    return label_moments(patterns, counts);
}

/// Ground-truth parameters of the label-effect model.
struct ModelParams {
    Vector mu;         // d
    Matrix A;          // d x L
    Matrix B_inter;    // d x L(L-1)/2, lexicographic pairs; may be empty
    SymMatrix Sigma_w; // noise covariance
    double sigma = 0.0; // sub-Gaussian scale

    Index d() const { return A.rows(); }
    Index L() const { return A.cols(); }
};

inline ModelParams isotropic_model(const Matrix& A, double sigma_w) {
    ModelParams p;
    p.mu = Vector::Zero(A.rows());
    p.A = A;
    p.Sigma_w = SymMatrix((sigma_w * sigma_w) * Matrix::Identity(A.rows(), A.rows()));
    p.sigma = sigma_w;
    return p;
}

struct PopulationScatters {
    SymMatrix Sb_pop, Sw_pop, St_ml_pop, M_star;
    SymMatrix B_pi, W_pi, Q_pi;
    SymMatrix M_star_c, Sb_inf, Swc_pop, St_inf;
    double K_pop = 0.0;
};

inline PopulationScatters population_scatters(const ModelParams& params, const LabelDistribution& dist) {
    const Index d = params.d();
    const Index L = params.L();
    if (L != dist.L()) throw Error(ErrorCode::InvalidInput, "model and label distribution disagree on L");
    if (params.Sigma_w.dim() != d) throw Error(ErrorCode::InvalidInput, "Sigma_w dimension mismatch");
    if (!params.A.allFinite()) throw Error(ErrorCode::InvalidInput, "A has non-finite entries");
    if (!(sym_eig(params.Sigma_w).values(d - 1) > 0.0))
        throw Error(ErrorCode::InvalidCovariance, "Sigma_w is not positive definite");

    const Matrix& A = params.A;
    const Matrix& Sw = params.Sigma_w.matrix();
    const double K = dist.K_pop;
    const Matrix Dpi = dist.pi.asDiagonal();
    const Matrix Dinv = dist.pi.cwiseInverse().asDiagonal();

    Matrix W = Matrix::Zero(L, L);
    for (Index l = 0; l < L; ++l) W += dist.pi(l) * dist.cond_cov[static_cast<size_t>(l)];
    const Matrix B = dist.Sigma_y * Dinv * dist.Sigma_y;

    PopulationScatters pop;
    pop.K_pop = K;
    pop.Sb_pop = SymMatrix(A * Dpi * A.transpose());
    pop.Sw_pop = SymMatrix(K * Sw);
    pop.St_ml_pop = pop.Sb_pop + pop.Sw_pop;
    pop.M_star = pop.Sb_pop - pop.Sw_pop;
    pop.B_pi = SymMatrix(B);
    pop.W_pi = SymMatrix(W);
    pop.Q_pi = pop.B_pi - pop.W_pi;
    pop.M_star_c = SymMatrix(A * pop.Q_pi.matrix() * A.transpose() - K * Sw);
    pop.Sb_inf = SymMatrix(A * B * A.transpose());
    pop.Swc_pop = SymMatrix(A * W * A.transpose() + K * Sw);
    pop.St_inf = pop.Sb_inf + pop.Swc_pop;

    if (dist.single_label()) {
        const Vector api = A * dist.pi;
        const Matrix expect = pop.M_star.matrix() - api * api.transpose();
        const double scale = std::max(1.0, expect.norm());
        if ((pop.M_star_c.matrix() - expect).norm() > 1e-10 * scale)
            throw Error(ErrorCode::InternalCheck, "single-label centering identity violated");
    }
    return pop;
}

struct GapReport {
    Index r = 0;
    Vector eigvals_M_star_c;
    double gap_r = 0.0;          // of M*_c
    Vector eigvals_M_star;
    double gap_r_M_star = 0.0;   // of M*
    Vector theta;                // generalized eigenvalues of (Sb_inf, St_inf)
    double Delta_r = 0.0;
    bool tied = false;           // theta_r == theta_{r+1} up to 1e-12
    double kappa_St_inf = 0.0;
    double lam_min_St_inf = 0.0;
};

inline GapReport gaps(const PopulationScatters& pop, Index r) {
    const Index d = pop.St_inf.dim();
    if (r < 1 || r >= d) throw Error(ErrorCode::InvalidInput, "gaps requires 1 <= r < d");
    GapReport g;
    g.r = r;
    g.eigvals_M_star_c = sym_eig(pop.M_star_c).values;
    g.gap_r = std::max(0.0, g.eigvals_M_star_c(r - 1) - g.eigvals_M_star_c(r));
    g.eigvals_M_star = sym_eig(pop.M_star).values;
    g.gap_r_M_star = std::max(0.0, g.eigvals_M_star(r - 1) - g.eigvals_M_star(r));

    const EigenPair st = sym_eig(pop.St_inf);
    g.lam_min_St_inf = st.values(d - 1);
    const Matrix Wh = inverse_sqrt(pop.St_inf, 1e-12, ErrorCode::SingularTotalScatter);
    g.kappa_St_inf = st.values(0) / g.lam_min_St_inf;
    g.theta = sym_eig(SymMatrix(Wh * pop.Sb_inf.matrix() * Wh)).values;
    for (Index i = 0; i < d; ++i)
        if (g.theta(i) < 0.0 && g.theta(i) > -1e-12) g.theta(i) = 0.0;
    g.Delta_r = g.theta(r - 1) - g.theta(r);
    if (g.Delta_r <= 1e-12) {
        g.tied = true;
        g.Delta_r = 0.0;
    }
    return g;
}

/// Spectral norm of Gamma / n with Gamma = Y^T Y.
inline double gamma_norm(const LabelMatrix& labels) {
    return sym_eig(SymMatrix(labels.gram())).values(0) / static_cast<double>(labels.n());
}

} // namespace mlda
