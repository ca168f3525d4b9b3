#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include <Eigen/Dense>

#include "mlda/error.hpp"

namespace mlda {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace detail {

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

} // namespace detail

/// Real symmetric matrix. The stored entries are exactly symmetric.
class SymMatrix {
public:
    SymMatrix() = default;

    explicit SymMatrix(const Matrix& m) {
        if (m.rows() != m.cols())
            throw Error(ErrorCode::InvalidInput, "SymMatrix requires a square matrix");
        if (m.rows() < 1)
            throw Error(ErrorCode::InvalidInput, "SymMatrix requires dim >= 1");
        m_ = 0.5 * (m + m.transpose());
    }

    static SymMatrix zero(Index d) { return SymMatrix(Matrix::Zero(d, d)); }
    static SymMatrix identity(Index d) { return SymMatrix(Matrix::Identity(d, d)); }

    Index dim() const { return m_.rows(); }
    bool empty() const { return m_.size() == 0; }
    const Matrix& matrix() const { return m_; }
    double operator()(Index i, Index j) const { return m_(i, j); }

    friend SymMatrix operator+(const SymMatrix& a, const SymMatrix& b) { return SymMatrix(a.m_ + b.m_); }
    friend SymMatrix operator-(const SymMatrix& a, const SymMatrix& b) { return SymMatrix(a.m_ - b.m_); }
    friend SymMatrix operator*(double s, const SymMatrix& a) { return SymMatrix(s * a.m_); }

    /// Congruence W^T S W.
    SymMatrix congruence(const Matrix& W) const { return SymMatrix(W.transpose() * m_ * W); }

    double trace() const { return m_.trace(); }
    double frobenius() const { return m_.norm(); }

private:
    Matrix m_;
};

/// Orthonormal d x r frame, a point on the Stiefel manifold.
class Frame {
public:
    static constexpr double kOrthoTol = 1e-10;

    Frame() = default;

    /// Wraps columns that are already orthonormal; throws otherwise.
    static Frame from_orthonormal(const Matrix& cols) {
        if (cols.cols() < 1 || cols.rows() < cols.cols())
            throw Error(ErrorCode::InvalidInput, "Frame requires 1 <= r <= d");
        const Index r = cols.cols();
        const double res = (cols.transpose() * cols - Matrix::Identity(r, r)).norm();
        if (!(res <= kOrthoTol))
            throw Error(ErrorCode::InvalidInput, "columns are not orthonormal");
        Frame f;
        f.cols_ = cols;
        return f;
    }

    Index ambient_dim() const { return cols_.rows(); }
    Index rank() const { return cols_.cols(); }
    const Matrix& columns() const { return cols_; }

private:
    Matrix cols_;
};

struct EigenPair {
    Vector values;  // descending
    Matrix vectors; // columns aligned with values
};

namespace detail {

// Largest-magnitude entry positive, ties go to the lowest index.
inline void fix_sign(Eigen::Ref<Vector> v) {
    const double mx = v.cwiseAbs().maxCoeff();
    if (mx == 0.0) return;
    const double tie = 1e-12 * mx;
    for (Index i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) >= mx - tie) {
            if (v(i) < 0) v = -v;
            return;
        }
    }
}

} // namespace detail

inline EigenPair sym_eig(const SymMatrix& S) {
    if (S.empty()) throw Error(ErrorCode::InvalidInput, "sym_eig on empty matrix");
    if (!detail::all_finite(S.matrix())) throw Error(ErrorCode::InvalidInput, "sym_eig: non-finite entries");
    Eigen::SelfAdjointEigenSolver<Matrix> es(S.matrix());
    if (es.info() != Eigen::Success) throw Error(ErrorCode::InvalidInput, "sym_eig: solver failed");
    const Index d = S.dim();
    EigenPair out;
    out.values = es.eigenvalues().reverse();
    out.vectors = es.eigenvectors().rowwise().reverse();
    for (Index j = 0; j < d; ++j) detail::fix_sign(out.vectors.col(j));
    return out;
}

/// Tolerance policy for numeric_rank. Default: max(rows, cols) * eps * sigma_max.
struct RankTolerance {
    std::optional<double> absolute;
    std::optional<double> relative; // multiplies sigma_max

    double resolve(Index rows, Index cols, double sigma_max) const {
        if (absolute) return *absolute;
        if (relative) return *relative * sigma_max;
        return static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() * sigma_max;
    }
};

inline Vector singular_values(const Matrix& m) {
    if (m.size() == 0) return Vector();
    if (std::min(m.rows(), m.cols()) <= 16) {
        Eigen::JacobiSVD<Matrix> svd(m);
        return svd.singularValues();
    }
    Eigen::BDCSVD<Matrix> svd(m);
    return svd.singularValues();
}

inline int numeric_rank(const Matrix& m, const RankTolerance& tol = {}) {
    if (m.size() == 0) throw Error(ErrorCode::InvalidInput, "numeric_rank on empty matrix");
    if (!detail::all_finite(m)) throw Error(ErrorCode::InvalidInput, "numeric_rank: non-finite entries");
    const Vector s = singular_values(m);
    const double t = tol.resolve(m.rows(), m.cols(), s.size() ? s(0) : 0.0);
    int r = 0;
    for (Index i = 0; i < s.size(); ++i)
        if (s(i) > t) ++r;
    return r;
}

/// Sine of the largest principal angle between span(U) and span(V).
/// Evaluated as ||(I - U U^T) V||_2, which equals sqrt(1 - sigma_min(U^T V)^2)
/// but keeps full accuracy for nearly coincident subspaces.
inline double principal_angle_sin(const Frame& U, const Frame& V) {
    if (U.ambient_dim() != V.ambient_dim() || U.rank() != V.rank())
        throw Error(ErrorCode::InvalidInput, "principal_angle_sin: frame shapes differ");
    const Matrix& u = U.columns();
    const Matrix& v = V.columns();
    const Matrix resid = v - u * (u.transpose() * v);
    const Vector s = singular_values(resid);
    const double val = s.size() ? s(0) : 0.0;
    return std::clamp(val, 0.0, 1.0);
}

/// Orthonormal basis of span(W) via Householder QR, with diag(R) > 0.
inline Frame orthonormalize(const Matrix& W, const RankTolerance& tol = {}) {
    const Index r = W.cols();
    if (r < 1) throw Error(ErrorCode::InvalidInput, "orthonormalize: r = 0 requested");
    if (W.rows() < r) throw Error(ErrorCode::RankDeficient, "orthonormalize: more columns than rows");
    if (numeric_rank(W, tol) != r) throw Error(ErrorCode::RankDeficient, "orthonormalize: input is rank deficient");
    Eigen::HouseholderQR<Matrix> qr(W);
    Matrix Q = qr.householderQ() * Matrix::Identity(W.rows(), r);
    const Matrix R = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    for (Index j = 0; j < r; ++j)
        if (R(j, j) < 0) Q.col(j) = -Q.col(j);
    // one re-orthogonalization pass keeps the Gram residual near eps
    Eigen::HouseholderQR<Matrix> qr2(Q);
    Matrix Q2 = qr2.householderQ() * Matrix::Identity(W.rows(), r);
    const Matrix R2 = qr2.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    for (Index j = 0; j < r; ++j)
        if (R2(j, j) < 0) Q2.col(j) = -Q2.col(j);
    return Frame::from_orthonormal(Q2);
}

/// Leading r eigenvectors of S as a frame, plus the full descending spectrum.
struct TopEigenspace {
    Frame frame;
    Vector spectrum;
    double gap = 0.0;           // lambda_r - lambda_{r+1}; +inf when r == d
    bool degenerate_gap = false; // gap within 1e-12 relative to the spectral scale
};

inline TopEigenspace top_eigenspace(const SymMatrix& S, Index r) {
    if (r < 1) throw Error(ErrorCode::InvalidInput, "rank r = 0 requested");
    if (r > S.dim()) throw Error(ErrorCode::InvalidInput, "rank r exceeds dimension");
    const EigenPair ep = sym_eig(S);
    TopEigenspace t;
    t.frame = Frame::from_orthonormal(ep.vectors.leftCols(r));
    t.spectrum = ep.values;
    if (r == S.dim()) {
        t.gap = std::numeric_limits<double>::infinity();
    } else {
        t.gap = ep.values(r - 1) - ep.values(r);
        const double scale = std::max(1.0, ep.values.cwiseAbs().maxCoeff());
        t.degenerate_gap = t.gap <= 1e-12 * scale;
    }
    return t;
}

/// Symmetric inverse square root. Throws `code` when lambda_min <= floor_rel * lambda_max.
inline Matrix inverse_sqrt(const SymMatrix& S, double floor_rel = 1e-12,
                           ErrorCode code = ErrorCode::SingularTotalScatter) {
    const EigenPair ep = sym_eig(S);
    const double lmax = ep.values(0);
    const double lmin = ep.values(ep.values.size() - 1);
    if (!(lmax > 0.0) || lmin <= floor_rel * lmax)
        throw Error(code, "matrix is not positive definite above the whitening floor");
    const Vector inv = ep.values.cwiseSqrt().cwiseInverse();
    return ep.vectors * inv.asDiagonal() * ep.vectors.transpose();
}

inline double spectral_norm(const Matrix& m) {
    const Vector s = singular_values(m);
    return s.size() ? s(0) : 0.0;
}

} // namespace mlda
