#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mlda/spectral.hpp"

using namespace mlda;

namespace {

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = g(rng);
    return m;
}

SymMatrix random_sym(Index d, std::mt19937_64& rng) {
    const Matrix m = random_matrix(d, d, rng);
    return SymMatrix(m + m.transpose());
}

// Shifted power iteration with deflation; the shift keeps every eigenvalue of B non-negative
// so the deflated direction (set to 0) never dominates again.
Vector power_oracle(const Matrix& S) {
    const Index d = S.rows();
    const double c = S.norm() + 1.0;
    Matrix B = S + c * Matrix::Identity(d, d);
    std::vector<double> vals;
    for (Index k = 0; k < d; ++k) {
        Vector v = Vector::LinSpaced(d, 1.0, 2.0);
        v.normalize();
        double lam = 0.0;
        for (int it = 0; it < 200000; ++it) {
            Vector w = B * v;
            w.normalize();
            const double next = w.dot(B * w);
            const bool stable = std::abs(next - lam) <= 1e-15 * std::abs(next) && (w - v).norm() < 1e-10;
            v = w;
            lam = next;
            if (stable) break;
        }
        vals.push_back(lam - c);
        B -= lam * v * v.transpose();
    }
    std::sort(vals.rbegin(), vals.rend());
    return Eigen::Map<Vector>(vals.data(), d);
}

Frame span_of(std::initializer_list<std::initializer_list<double>> cols, Index d) {
    Matrix m(d, static_cast<Index>(cols.size()));
    Index j = 0;
    for (auto c : cols) {
        Index i = 0;
        for (double x : c) m(i++, j) = x;
        ++j;
    }
    return orthonormalize(m);
}

} // namespace

TEST(SymMatrix, SymmetrizesOnConstruction) {
    Matrix m(2, 2);
    m << 1, 2, 4, 3;
    const SymMatrix s(m);
    EXPECT_EQ(s(0, 1), s(1, 0));
    EXPECT_DOUBLE_EQ(s(0, 1), 3.0);
}

TEST(SymMatrix, RejectsNonSquareAndEmpty) {
    EXPECT_THROW(SymMatrix(Matrix(2, 3)), Error);
    EXPECT_THROW(SymMatrix(Matrix(0, 0)), Error);
}

TEST(SymEig, IdentityGivesUnitSpectrumAndPermutationVectors) {
    const EigenPair ep = sym_eig(SymMatrix::identity(3));
    EXPECT_TRUE(ep.values.isApprox(Vector::Ones(3)));
    const Matrix P = ep.vectors.cwiseAbs();
    for (Index j = 0; j < 3; ++j) {
        EXPECT_NEAR(P.col(j).maxCoeff(), 1.0, 1e-15);
        EXPECT_GT(ep.vectors.col(j).maxCoeff(), 0.0);
    }
    EXPECT_NEAR((P.transpose() * P - Matrix::Identity(3, 3)).norm(), 0.0, 1e-15);
}

TEST(SymEig, DiagonalOrderedDescendingWithAxisVectors) {
    const Vector diag = (Vector(3) << 3, 1, 2).finished();
    const EigenPair ep = sym_eig(SymMatrix(Matrix(diag.asDiagonal())));
    EXPECT_DOUBLE_EQ(ep.values(0), 3);
    EXPECT_DOUBLE_EQ(ep.values(1), 2);
    EXPECT_DOUBLE_EQ(ep.values(2), 1);
    Matrix expect = Matrix::Zero(3, 3);
    expect(0, 0) = 1;
    expect(2, 1) = 1;
    expect(1, 2) = 1;
    EXPECT_NEAR((ep.vectors - expect).norm(), 0.0, 1e-15);
}

TEST(SymEig, RandomReconstruction) {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 50; ++t) {
        const SymMatrix S = random_sym(5, rng);
        const EigenPair ep = sym_eig(S);
        const Matrix rec = ep.vectors * ep.values.asDiagonal() * ep.vectors.transpose();
        EXPECT_LE((rec - S.matrix()).norm(), 1e-8 * std::max(1.0, S.frobenius()));
        for (Index i = 0; i + 1 < 5; ++i) EXPECT_GE(ep.values(i), ep.values(i + 1));
        EXPECT_NEAR((ep.vectors.transpose() * ep.vectors - Matrix::Identity(5, 5)).norm(), 0.0, 1e-12);
    }
}

TEST(SymEig, SignConventionLargestEntryPositive) {
    std::mt19937_64 rng(12);
    for (int t = 0; t < 50; ++t) {
        const EigenPair ep = sym_eig(random_sym(6, rng));
        for (Index j = 0; j < 6; ++j) {
            Index arg = 0;
            ep.vectors.col(j).cwiseAbs().maxCoeff(&arg);
            EXPECT_GT(ep.vectors(arg, j), 0.0);
        }
    }
}

TEST(SymEig, SignTieGoesToLowestIndex) {
    Matrix m(2, 2);
    m << 0, 1, 1, 0; // eigenvectors (1,1)/sqrt2 and (1,-1)/sqrt2: both entries tie in magnitude
    const EigenPair ep = sym_eig(SymMatrix(m));
    EXPECT_GT(ep.vectors(0, 0), 0.0);
    EXPECT_GT(ep.vectors(0, 1), 0.0);
}

TEST(SymEig, NonFiniteRejected) {
    Matrix m = Matrix::Identity(2, 2);
    m(0, 0) = std::nan("");
    try {
        sym_eig(SymMatrix(m));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidInput);
    }
}

TEST(SymEig, MatchesPowerIterationOracle) {
    std::mt19937_64 rng(13);
    for (Index d = 1; d <= 4; ++d) {
        for (int t = 0; t < 25; ++t) {
            const SymMatrix S = random_sym(d, rng);
            const Vector expect = power_oracle(S.matrix());
            const Vector got = sym_eig(S).values;
            for (Index i = 0; i < d; ++i) EXPECT_NEAR(got(i), expect(i), 1e-6) << "d=" << d << " i=" << i;
        }
    }
}

TEST(NumericRank, RankOneOuterProduct) {
    const Vector u = (Vector(3) << 1, -2, 0.5).finished();
    const Vector v = (Vector(4) << 3, 1, 0, 2).finished();
    EXPECT_EQ(numeric_rank(u * v.transpose()), 1);
}

TEST(NumericRank, ZeroMatrix) { EXPECT_EQ(numeric_rank(Matrix::Zero(3, 4)), 0); }

TEST(NumericRank, DependentColumns) {
    std::mt19937_64 rng(14);
    Matrix m(4, 3);
    m.leftCols(2) = random_matrix(4, 2, rng);
    m.col(2) = m.col(0) + m.col(1);
    EXPECT_EQ(numeric_rank(m), 2);
}

TEST(NumericRank, ToleranceOverride) {
    Matrix m = Matrix::Identity(3, 3);
    m(2, 2) = 1e-6;
    EXPECT_EQ(numeric_rank(m), 3);
    RankTolerance tol;
    tol.relative = 1e-4;
    EXPECT_EQ(numeric_rank(m, tol), 2);
    RankTolerance abs;
    abs.absolute = 2.0;
    EXPECT_EQ(numeric_rank(m, abs), 0);
}

TEST(NumericRank, EmptyRejected) {
    try {
        numeric_rank(Matrix(0, 3));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidInput);
    }
}

TEST(PrincipalAngle, IdenticalIsZero) {
    std::mt19937_64 rng(15);
    const Frame U = orthonormalize(random_matrix(6, 2, rng));
    EXPECT_LE(principal_angle_sin(U, U), 1e-15);
}

TEST(PrincipalAngle, OrthogonalAxesGiveOne) {
    EXPECT_NEAR(principal_angle_sin(span_of({{1, 0, 0}}, 3), span_of({{0, 1, 0}}, 3)), 1.0, 1e-15);
}

TEST(PrincipalAngle, FortyFiveDegrees) {
    const double s = principal_angle_sin(span_of({{1, 0, 0}}, 3), span_of({{1, 1, 0}}, 3));
    EXPECT_NEAR(s, std::sqrt(2.0) / 2.0, 1e-15);
}

TEST(PrincipalAngle, AgreesWithSingularValueForm) {
    std::mt19937_64 rng(16);
    for (int t = 0; t < 100; ++t) {
        const Frame U = orthonormalize(random_matrix(7, 3, rng));
        const Frame V = orthonormalize(random_matrix(7, 3, rng));
        const Vector s = singular_values(U.columns().transpose() * V.columns());
        const double smin = s(s.size() - 1);
        EXPECT_NEAR(principal_angle_sin(U, V), std::sqrt(std::max(0.0, 1.0 - smin * smin)), 1e-10);
    }
}

TEST(PrincipalAngle, SymmetricAndBasisInvariant) {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 100; ++t) {
        const Matrix a = random_matrix(6, 3, rng);
        const Frame U = orthonormalize(a);
        const Frame V = orthonormalize(random_matrix(6, 3, rng));
        EXPECT_NEAR(principal_angle_sin(U, V), principal_angle_sin(V, U), 1e-12);
        const Frame U2 = orthonormalize(a * random_matrix(3, 3, rng));
        EXPECT_LE(principal_angle_sin(U, U2), 1e-10);
    }
}

TEST(PrincipalAngle, RankMismatchRejected) {
    std::mt19937_64 rng(18);
    EXPECT_THROW(principal_angle_sin(orthonormalize(random_matrix(5, 2, rng)), orthonormalize(random_matrix(5, 3, rng))),
                 Error);
}

TEST(Orthonormalize, OrthonormalInputReturnedUpToSign) {
    std::mt19937_64 rng(19);
    const Matrix q = Eigen::HouseholderQR<Matrix>(random_matrix(5, 5, rng)).householderQ();
    const Matrix W = q.leftCols(3);
    const Frame F = orthonormalize(W);
    for (Index j = 0; j < 3; ++j) EXPECT_NEAR(std::abs(F.columns().col(j).dot(W.col(j))), 1.0, 1e-12);
}

TEST(Orthonormalize, GramSchmidtForced) {
    const Frame F = span_of({{1, 0, 0}, {1, 1, 0}}, 3);
    EXPECT_LE(principal_angle_sin(F, span_of({{1, 0, 0}, {0, 1, 0}}, 3)), 1e-15);
}

TEST(Orthonormalize, RandomResidualAndSpan) {
    std::mt19937_64 rng(20);
    for (int t = 0; t < 100; ++t) {
        const Matrix W = random_matrix(6, 3, rng);
        const Frame F = orthonormalize(W);
        EXPECT_LE((F.columns().transpose() * F.columns() - Matrix::Identity(3, 3)).norm(), 1e-12);
        const Matrix resid = W - F.columns() * (F.columns().transpose() * W);
        EXPECT_LE(resid.norm(), 1e-10 * W.norm());
    }
}

TEST(Orthonormalize, RankDeficientAndZeroRankRejected) {
    Matrix W(3, 2);
    W << 1, 2, 1, 2, 1, 2;
    try {
        orthonormalize(W);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::RankDeficient);
    }
    try {
        orthonormalize(Matrix(3, 0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidInput);
    }
}

TEST(FrameCheck, RejectsNonOrthonormal) {
    Matrix m(2, 1);
    m << 1, 1;
    EXPECT_THROW(Frame::from_orthonormal(m), Error);
}

TEST(TopEigenspace, GapAndDegeneracy) {
    const Vector diag = (Vector(4) << 5, 3, 3, 1).finished();
    const SymMatrix S(Matrix(diag.asDiagonal()));
    const TopEigenspace t1 = top_eigenspace(S, 1);
    EXPECT_DOUBLE_EQ(t1.gap, 2.0);
    EXPECT_FALSE(t1.degenerate_gap);
    EXPECT_TRUE(top_eigenspace(S, 2).degenerate_gap);
    EXPECT_TRUE(std::isinf(top_eigenspace(S, 4).gap));
    EXPECT_THROW(top_eigenspace(S, 0), Error);
    EXPECT_THROW(top_eigenspace(S, 5), Error);
}

TEST(InverseSqrt, InvertsAndRejectsSingular) {
    std::mt19937_64 rng(21);
    const Matrix a = random_matrix(4, 4, rng);
    const SymMatrix S(a * a.transpose() + Matrix::Identity(4, 4));
    const Matrix h = inverse_sqrt(S);
    EXPECT_LE((h * S.matrix() * h - Matrix::Identity(4, 4)).norm(), 1e-10);
    const SymMatrix sing(Matrix(Vector::Ones(3).asDiagonal()) - Matrix(Vector::Unit(3, 2).asDiagonal()));
    try {
        inverse_sqrt(sing);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SingularTotalScatter);
    }
}

TEST(Interlacing, ProjectedSingularValuesInterlace) {
    std::mt19937_64 rng(22);
    for (int t = 0; t < 150; ++t) {
        const Index d = 4 + t % 5, L = 2 + t % 4, r = 1 + t % d;
        const Matrix A = random_matrix(d, L, rng);
        const Frame W = orthonormalize(random_matrix(d, r, rng));
        const Vector sa = singular_values(A);
        const Vector sw = singular_values(W.columns().transpose() * A);
        EXPECT_LE(sw(0), sa(0) + 1e-10);
        for (Index i = 0; i < sw.size(); ++i) {
            EXPECT_LE(sw(i), sa(i) + 1e-10);
            const Index j = i + d - r;
            const double lower = j < sa.size() ? sa(j) : 0.0;
            EXPECT_GE(sw(i), lower - 1e-10);
        }
    }
}
