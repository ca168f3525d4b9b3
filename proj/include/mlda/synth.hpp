#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mlda/error.hpp"
#include "mlda/population.hpp"
#include "mlda/scatter.hpp"
#include "mlda/spectral.hpp"

namespace mlda {

using Rng = std::mt19937_64;

enum class Purpose : std::uint64_t {
    Labels = 1,
    Effects = 2,
    Noise = 3,
    Pairs = 4,
    Probes = 5,
    Interactions = 6,
    Instance = 7,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Counter-based seed derivation: (base, experiment, trial, purpose) -> engine.
struct Seed {
    std::uint64_t base = 0;

    std::uint64_t derive(std::string_view experiment, std::uint64_t trial, Purpose purpose) const {
        std::uint64_t h = splitmix64(base);
        h = splitmix64(h ^ fnv1a(experiment));
        h = splitmix64(h ^ trial);
        h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
        return h;
    }

    Rng engine(std::string_view experiment, std::uint64_t trial, Purpose purpose) const {
        const std::uint64_t s = derive(experiment, trial, purpose);
        std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
        return Rng(seq);
    }
};

inline Matrix gaussian_matrix(Index rows, Index cols, double sd, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = sd * nd(rng);
    return m;
}

/// Haar-distributed point of St(d, r).
inline Frame random_stiefel(Index d, Index r, Rng& rng) { return orthonormalize(gaussian_matrix(d, r, 1.0, rng)); }

struct LabelScheme {
    enum class Kind { Single, UniformK, Variable };
    Kind kind = Kind::Single;
    Index L = 1;
    int k = 1;                                  // UniformK
    std::vector<std::pair<int, double>> mix;    // Variable: (cardinality, fraction)

    static LabelScheme single(Index L) { return {Kind::Single, L, 1, {}}; }
    static LabelScheme uniform(Index L, int k) { return {Kind::UniformK, L, k, {}}; }
    static LabelScheme variable(Index L, std::vector<std::pair<int, double>> mix) {
        return {Kind::Variable, L, 0, std::move(mix)};
    }

    double mean_cardinality() const {
        if (kind == Kind::Single) return 1.0;
        if (kind == Kind::UniformK) return k;
        double m = 0.0;
        for (auto [c, f] : mix) m += c * f;
        return m;
    }

    void validate() const {
        if (L < 1) throw Error(ErrorCode::InvalidScheme, "scheme needs L >= 1");
        if (kind == Kind::UniformK && (k < 1 || k > L))
            throw Error(ErrorCode::InvalidScheme, "cardinality must lie in [1, L]");
        if (kind == Kind::Variable) {
            if (mix.empty()) throw Error(ErrorCode::InvalidScheme, "variable scheme needs a non-empty mix");
            double s = 0.0;
            for (auto [c, f] : mix) {
                if (c < 1 || c > L) throw Error(ErrorCode::InvalidScheme, "cardinality must lie in [1, L]");
                if (!(f >= 0.0)) throw Error(ErrorCode::InvalidScheme, "negative mix fraction");
                s += f;
            }
            if (std::abs(s - 1.0) > 1e-9) throw Error(ErrorCode::InvalidScheme, "mix fractions must sum to 1");
        }
    }
};

namespace detail {

// Rows are reassigned in index order: a missing label takes the place of the
// most frequent label (ties: lowest label) in the first row that can give one up.
inline void force_all_labels(Matrix& Y) {
    const Index n = Y.rows();
    const Index L = Y.cols();
    std::vector<bool> used(static_cast<size_t>(n), false);
    for (Index l = 0; l < L; ++l) {
        Vector counts = Y.colwise().sum().transpose();
        if (counts(l) >= 1) continue;
        bool placed = false;
        for (Index i = 0; i < n && !placed; ++i) {
            if (used[static_cast<size_t>(i)]) continue;
            Index best = -1;
            for (Index m = 0; m < L; ++m)
                if (Y(i, m) == 1.0 && counts(m) >= 2 && (best < 0 || counts(m) > counts(best))) best = m;
            if (best < 0) continue;
            Y(i, best) = 0.0;
            Y(i, l) = 1.0;
            used[static_cast<size_t>(i)] = true;
            placed = true;
        }
        if (!placed) throw Error(ErrorCode::InvalidScheme, "cannot place every label; increase n");
    }
}

} // namespace detail

inline LabelMatrix gen_labels(const LabelScheme& scheme, Index n, Rng& rng) {
    scheme.validate();
    const Index L = scheme.L;
    if (n < L) throw Error(ErrorCode::InvalidScheme, "n must be at least L");
    Matrix Y = Matrix::Zero(n, L);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<int> idx(static_cast<size_t>(L));
    for (Index i = 0; i < n; ++i) {
        int card = 1;
        if (scheme.kind == LabelScheme::Kind::UniformK) {
            card = scheme.k;
        } else if (scheme.kind == LabelScheme::Kind::Variable) {
            const double u = unif(rng);
            double acc = 0.0;
            card = scheme.mix.back().first;
            for (auto [c, f] : scheme.mix) {
                acc += f;
                if (u < acc) {
                    card = c;
                    break;
                }
            }
        }
        // partial Fisher-Yates: uniform subset without replacement
        std::iota(idx.begin(), idx.end(), 0);
        for (int j = 0; j < card; ++j) {
            std::uniform_int_distribution<int> pick(j, static_cast<int>(L) - 1);
            std::swap(idx[static_cast<size_t>(j)], idx[static_cast<size_t>(pick(rng))]);
            Y(i, idx[static_cast<size_t>(j)]) = 1.0;
        }
    }
    detail::force_all_labels(Y);
    return build_labels(Y);
}

/// Pairwise products y_l * y_m for l < m in lexicographic order.
inline Vector pair_products(const Vector& y) {
    const Index L = y.size();
    Vector z(L * (L - 1) / 2);
    Index c = 0;
    for (Index l = 0; l < L; ++l)
        for (Index m = l + 1; m < L; ++m) z(c++) = y(l) * y(m);
    return z;
}

enum class NoiseKind { Gaussian, Rademacher };

/// Rows mu + A y_i + alpha * B z_i without noise.
inline Matrix mean_features(const LabelMatrix& labels, const ModelParams& params, double alpha = 0.0) {
    const Index n = labels.n();
    const Index d = params.d();
    if (params.L() != labels.L()) throw Error(ErrorCode::InvalidInput, "A has wrong number of columns");
    if (params.mu.size() != d) throw Error(ErrorCode::InvalidInput, "mu has wrong length");
    const Index P = labels.L() * (labels.L() - 1) / 2;
    const bool inter = alpha != 0.0 && params.B_inter.size() > 0;
    if (inter && (params.B_inter.rows() != d || params.B_inter.cols() != P))
        throw Error(ErrorCode::InvalidInput, "B_inter must be d x L(L-1)/2");
    Matrix X = labels.bits() * params.A.transpose();
    X.rowwise() += params.mu.transpose();
    if (inter) {
        Matrix Z(n, P);
        for (Index i = 0; i < n; ++i) Z.row(i) = pair_products(labels.row(i)).transpose();
        X += alpha * Z * params.B_inter.transpose();
    }
    return X;
}

/// Draws n noise vectors with covariance Sigma_w. Sigma_w may be singular (PSD).
inline Matrix noise_matrix(Index n, const SymMatrix& Sigma_w, Rng& rng, NoiseKind kind = NoiseKind::Gaussian) {
    const Index d = Sigma_w.dim();
    const EigenPair ep = sym_eig(Sigma_w);
    if (ep.values(d - 1) < -1e-12 * std::max(1.0, std::abs(ep.values(0))))
        throw Error(ErrorCode::InvalidCovariance, "noise covariance is not PSD");
    const Matrix root = ep.vectors * ep.values.cwiseMax(0.0).cwiseSqrt().asDiagonal() * ep.vectors.transpose();
    Matrix G(n, d);
    if (kind == NoiseKind::Gaussian) {
        std::normal_distribution<double> nd(0.0, 1.0);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < d; ++j) G(i, j) = nd(rng);
    } else {
        std::bernoulli_distribution coin(0.5);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < d; ++j) G(i, j) = coin(rng) ? 1.0 : -1.0;
    }
    return G * root;
}

inline Dataset gen_data(const LabelMatrix& labels, const ModelParams& params, double alpha, Rng& rng,
                        NoiseKind kind = NoiseKind::Gaussian) {
    if (params.Sigma_w.dim() != params.d()) throw Error(ErrorCode::InvalidInput, "Sigma_w dimension mismatch");
    Matrix X = mean_features(labels, params, alpha);
    X += noise_matrix(labels.n(), params.Sigma_w, rng, kind);
    return make_dataset(X, labels);
}

/// Random distinct index pairs (i, j), i != j.
inline std::vector<std::pair<Index, Index>> random_pairs(Index n, Index count, Rng& rng) {
    if (n < 2) throw Error(ErrorCode::InvalidInput, "need at least two samples for pairs");
    std::uniform_int_distribution<Index> pick(0, n - 1);
    std::vector<std::pair<Index, Index>> out;
    out.reserve(static_cast<size_t>(count));
    while (static_cast<Index>(out.size()) < count) {
        const Index i = pick(rng);
        const Index j = pick(rng);
        if (i != j) out.emplace_back(i, j);
    }
    return out;
}

} // namespace mlda
