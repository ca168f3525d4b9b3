#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "mlda/error.hpp"
#include "mlda/spectral.hpp"

namespace mlda {

/// Binary n x L label assignment with cached counts.
class LabelMatrix {
public:
    LabelMatrix() = default;

    Index n() const { return Y_.rows(); }
    Index L() const { return Y_.cols(); }
    const Matrix& bits() const { return Y_; }
    const Vector& n_ell() const { return n_ell_; }
    const Vector& k() const { return k_; }
    double K() const { return K_; }
    const Matrix& gram() const { return gram_; }
    bool one_in_colspace() const { return one_in_colspace_; }
    double k_max() const { return k_.maxCoeff(); }
    Vector row(Index i) const { return Y_.row(i).transpose(); }

    friend LabelMatrix build_labels(const Matrix& bits, const RankTolerance& tol);

private:
    Matrix Y_;
    Vector n_ell_;
    Vector k_;
    double K_ = 0.0;
    Matrix gram_;
    bool one_in_colspace_ = false;
};

/// Validates a 0/1 matrix and caches n_ell, k, K, the Gram matrix Y^T Y and
/// whether 1_n lies in col(Y).
inline LabelMatrix build_labels(const Matrix& bits, const RankTolerance& tol = {}) {
    if (bits.rows() < 1 || bits.cols() < 1) throw Error(ErrorCode::InvalidInput, "empty label matrix");
    for (Index i = 0; i < bits.rows(); ++i)
        for (Index j = 0; j < bits.cols(); ++j)
            if (bits(i, j) != 0.0 && bits(i, j) != 1.0)
                throw Error(ErrorCode::InvalidInput, "label entries must be 0 or 1");
    LabelMatrix lm;
    lm.Y_ = bits;
    lm.n_ell_ = bits.colwise().sum().transpose();
    lm.k_ = bits.rowwise().sum();
    for (Index l = 0; l < bits.cols(); ++l)
        if (lm.n_ell_(l) < 1) throw Error(ErrorCode::MissingLabel, "label " + std::to_string(l) + " has no samples");
    for (Index i = 0; i < bits.rows(); ++i)
        if (lm.k_(i) < 1) throw Error(ErrorCode::UnlabeledSample, "sample " + std::to_string(i) + " has no label");
    lm.K_ = lm.k_.sum();
    lm.gram_ = bits.transpose() * bits;
    Matrix aug(bits.rows(), bits.cols() + 1);
    aug << bits, Vector::Ones(bits.rows());
    lm.one_in_colspace_ = numeric_rank(aug, tol) == numeric_rank(bits, tol);
    return lm;
}

namespace detail {

// Neumaier-compensated column means over a subset of rows.
template <class RowPred>
Vector compensated_mean(const Matrix& X, RowPred take, double count) {
    const Index d = X.cols();
    Vector sum = Vector::Zero(d);
    Vector comp = Vector::Zero(d);
    for (Index i = 0; i < X.rows(); ++i) {
        if (!take(i)) continue;
        for (Index j = 0; j < d; ++j) {
            const double x = X(i, j);
            const double t = sum(j) + x;
            if (std::abs(sum(j)) >= std::abs(x))
                comp(j) += (sum(j) - t) + x;
            else
                comp(j) += (x - t) + sum(j);
            sum(j) = t;
        }
    }
    return (sum + comp) / count;
}

} // namespace detail

struct Dataset {
    Matrix X;            // n x d
    LabelMatrix labels;
    Vector mu;           // d
    Matrix mu_ell;       // L x d
    Matrix X_centered;   // H X

    Index n() const { return X.rows(); }
    Index d() const { return X.cols(); }
    Index L() const { return labels.L(); }
};

inline Dataset make_dataset(const Matrix& X, const LabelMatrix& labels) {
    if (X.rows() != labels.n()) throw Error(ErrorCode::InvalidInput, "feature and label row counts differ");
    if (X.cols() < 1) throw Error(ErrorCode::InvalidInput, "features need at least one column");
    if (!X.allFinite()) throw Error(ErrorCode::InvalidInput, "non-finite feature values");
    Dataset ds;
    ds.X = X;
    ds.labels = labels;
    ds.mu = detail::compensated_mean(X, [](Index) { return true; }, static_cast<double>(X.rows()));
    ds.mu_ell.resize(labels.L(), X.cols());
    const Matrix& Y = labels.bits();
    for (Index l = 0; l < labels.L(); ++l)
        ds.mu_ell.row(l) = detail::compensated_mean(X, [&](Index i) { return Y(i, l) == 1.0; }, labels.n_ell()(l)).transpose();
    ds.X_centered = X.rowwise() - ds.mu.transpose();
    return ds;
}

struct ScatterSet {
    SymMatrix Sb;     // between-class, multilabel
    SymMatrix Sw;     // within-class, multilabel
    SymMatrix St_ml;  // cardinality-weighted total scatter
    SymMatrix St;     // ordinary total scatter
    SymMatrix R;      // St_ml - St
    Matrix M;         // d x L factor, Sb = M M^T
    double partition_residual = 0.0; // ||St_ml - Sb - Sw||_F / ||St_ml||_F
    double factor_residual = 0.0;    // ||Sb - M M^T||_F / ||Sb||_F
};

namespace detail {

inline double rel_resid(const Matrix& a, const Matrix& b) {
    const double nb = b.norm();
    const double diff = (a - b).norm();
    return nb > 0 ? diff / nb : diff;
}

} // namespace detail

inline ScatterSet build_scatter(const Dataset& ds) {
    const Index d = ds.d();
    const Index L = ds.L();
    const Matrix& Xc = ds.X_centered;
    const Matrix& Y = ds.labels.bits();
    const Vector& n_ell = ds.labels.n_ell();
    const Vector& k = ds.labels.k();

    Matrix sb = Matrix::Zero(d, d);
    for (Index l = 0; l < L; ++l) {
        const Vector dev = ds.mu_ell.row(l).transpose() - ds.mu;
        sb.noalias() += n_ell(l) * dev * dev.transpose();
    }

    Matrix sw = Matrix::Zero(d, d);
    for (Index l = 0; l < L; ++l) {
        const Index nl = static_cast<Index>(n_ell(l));
        Matrix Z(nl, d);
        Index row = 0;
        for (Index i = 0; i < ds.n(); ++i)
            if (Y(i, l) == 1.0) Z.row(row++) = ds.X.row(i) - ds.mu_ell.row(l);
        sw.noalias() += Z.transpose() * Z;
    }

    const Matrix st = Xc.transpose() * Xc;
    const Matrix st_ml = Xc.transpose() * k.asDiagonal() * Xc;
    const Vector km1 = (k.array() - 1.0).matrix();
    const Matrix r = Xc.transpose() * km1.asDiagonal() * Xc;

    ScatterSet ss;
    ss.M = Xc.transpose() * Y * n_ell.cwiseSqrt().cwiseInverse().asDiagonal();
    ss.Sb = SymMatrix(sb);
    ss.Sw = SymMatrix(sw);
    ss.St = SymMatrix(st);
    ss.St_ml = SymMatrix(st_ml);
    ss.R = SymMatrix(r);
    ss.partition_residual = detail::rel_resid(sb + sw, st_ml);
    ss.factor_residual = detail::rel_resid(ss.M * ss.M.transpose(), sb);
    if (!(ss.partition_residual <= 1e-8) || !(ss.factor_residual <= 1e-8))
        throw Error(ErrorCode::InternalCheck, "scatter cross-checks failed");
    return ss;
}

struct RankReport {
    int rank_sb = 0;
    int rank_XtY = 0;
    int rank_Y = 0;
    int rank_HY = 0;
    int bound = 0;
    bool one_in_colspace = false;
    bool excess = false;
    bool consistent = false; // rank_sb == rank_XtY
};

inline RankReport rank_analysis(const Dataset& ds, const ScatterSet& ss, const RankTolerance& tol = {}) {
    const Matrix& Y = ds.labels.bits();
    RankReport rep;
    rep.rank_sb = numeric_rank(ss.Sb.matrix(), tol);
    rep.rank_XtY = numeric_rank(ds.X_centered.transpose() * Y, tol);
    rep.rank_Y = numeric_rank(Y, tol);
    const Matrix HY = Y.rowwise() - Y.colwise().mean();
    rep.rank_HY = numeric_rank(HY, tol);
    rep.one_in_colspace = ds.labels.one_in_colspace();
    const int n = static_cast<int>(ds.n());
    const int d = static_cast<int>(ds.d());
    rep.bound = std::min({d, n - 1, rep.rank_Y - (rep.one_in_colspace ? 1 : 0)});
    rep.excess = rep.rank_sb > static_cast<int>(ds.L()) - 1;
    rep.consistent = rep.rank_sb == rep.rank_XtY;
    return rep;
}

struct ResidualBound {
    double lhs = 0.0; // ||R||_2
    double rhs = 0.0; // max_i (k_i - 1) * lambda_max(S_t^(K))
};

inline ResidualBound residual_bound(const Dataset& ds, const ScatterSet& ss) {
    const Vector& k = ds.labels.k();
    const Index d = ds.d();
    Matrix stk = Matrix::Zero(d, d);
    for (Index i = 0; i < ds.n(); ++i)
        if (k(i) > 1) stk.noalias() += ds.X_centered.row(i).transpose() * ds.X_centered.row(i);
    ResidualBound b;
    b.lhs = sym_eig(ss.R).values.cwiseAbs().maxCoeff();
    b.rhs = (k.maxCoeff() - 1.0) * std::max(0.0, sym_eig(SymMatrix(stk)).values(0));
    return b;
}

} // namespace mlda
