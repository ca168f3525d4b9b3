#include <cmath>
#include <set>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "mlda/synth.hpp"

using namespace mlda;

namespace {

void expect_valid(const LabelMatrix& lab) {
    const Matrix& Y = lab.bits();
    for (Index i = 0; i < Y.rows(); ++i)
        for (Index j = 0; j < Y.cols(); ++j) ASSERT_TRUE(Y(i, j) == 0.0 || Y(i, j) == 1.0);
    EXPECT_GE(lab.n_ell().minCoeff(), 1.0);
    EXPECT_GE(lab.k().minCoeff(), 1.0);
    EXPECT_DOUBLE_EQ(lab.K(), lab.n_ell().sum());
    EXPECT_DOUBLE_EQ(lab.K(), lab.k().sum());
}

} // namespace

TEST(GenLabels, SingleScheme) {
    Rng rng(1);
    const LabelMatrix lab = gen_labels(LabelScheme::single(6), 100, rng);
    EXPECT_EQ(lab.k(), Vector::Ones(100));
    EXPECT_TRUE(lab.one_in_colspace());
}

TEST(GenLabels, UniformScheme) {
    Rng rng(2);
    const LabelMatrix lab = gen_labels(LabelScheme::uniform(6, 3), 100, rng);
    EXPECT_EQ(lab.k(), Vector::Constant(100, 3.0));
}

TEST(GenLabels, VariableMixFractions) {
    Rng rng(3);
    const LabelMatrix lab = gen_labels(LabelScheme::variable(5, {{1, 0.8}, {2, 0.2}}), 1000, rng);
    const double frac2 = (lab.k().array() == 2.0).cast<double>().sum() / 1000.0;
    EXPECT_NEAR(frac2, 0.2, 0.03);
}

TEST(GenLabels, InfeasibleSchemes) {
    Rng rng(4);
    auto code_of = [&](const LabelScheme& s, Index n) {
        try {
            gen_labels(s, n, rng);
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::InternalCheck;
    };
    EXPECT_EQ(code_of(LabelScheme::uniform(3, 4), 10), ErrorCode::InvalidScheme);
    EXPECT_EQ(code_of(LabelScheme::variable(3, {{1, 0.5}, {5, 0.5}}), 10), ErrorCode::InvalidScheme);
    EXPECT_EQ(code_of(LabelScheme::variable(3, {{1, 0.5}, {2, 0.4}}), 10), ErrorCode::InvalidScheme);
    EXPECT_EQ(code_of(LabelScheme::single(8), 5), ErrorCode::InvalidScheme);
}

TEST(GenLabels, AllLabelsForcedPresentWithoutChangingCardinality) {
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
        const Index L = 3 + t % 8;
        const LabelScheme sc = t % 3 == 0   ? LabelScheme::single(L)
                               : t % 3 == 1 ? LabelScheme::uniform(L, 2)
                                            : LabelScheme::variable(L, {{1, 0.6}, {3, 0.4}});
        const LabelMatrix lab = gen_labels(sc, L + t % 5, rng);
        expect_valid(lab);
        if (sc.kind == LabelScheme::Kind::UniformK) {
            EXPECT_EQ(lab.k().maxCoeff(), 2.0);
        }
        if (sc.kind == LabelScheme::Kind::Single) {
            EXPECT_EQ(lab.k().maxCoeff(), 1.0);
        }
    }
}

TEST(ForceAllLabels, ReassignsLowestIndexRows) {
    Matrix Y = Matrix::Zero(4, 3);
    Y(0, 0) = Y(1, 0) = Y(2, 0) = Y(3, 1) = 1;
    detail::force_all_labels(Y);
    Matrix expect = Matrix::Zero(4, 3);
    expect(0, 2) = expect(1, 0) = expect(2, 0) = expect(3, 1) = 1;
    EXPECT_EQ(Y, expect);
}

TEST(Seed, SameTripleSameStreamDistinctTriplesDiffer) {
    const Seed s{42};
    Rng a = s.engine("exp", 3, Purpose::Noise), b = s.engine("exp", 3, Purpose::Noise);
    for (int i = 0; i < 100; ++i) ASSERT_EQ(a(), b());
    std::set<std::uint64_t> firsts;
    for (std::uint64_t t = 0; t < 50; ++t)
        for (Purpose p : {Purpose::Labels, Purpose::Effects, Purpose::Noise, Purpose::Pairs})
            firsts.insert(s.engine("exp", t, p)());
    EXPECT_EQ(firsts.size(), 200u);
    EXPECT_NE(s.engine("exp", 0, Purpose::Noise)(), s.engine("other", 0, Purpose::Noise)());
    EXPECT_NE(Seed{1}.derive("exp", 0, Purpose::Noise), Seed{2}.derive("exp", 0, Purpose::Noise));
}

TEST(Seed, StreamsUncorrelated) {
    const Seed s{7};
    Rng a = s.engine("x", 0, Purpose::Noise), b = s.engine("x", 1, Purpose::Noise);
    const Matrix ga = gaussian_matrix(20000, 1, 1.0, a), gb = gaussian_matrix(20000, 1, 1.0, b);
    const double corr = ga.col(0).dot(gb.col(0)) / std::sqrt(ga.squaredNorm() * gb.squaredNorm());
    EXPECT_LT(std::abs(corr), 4.0 / std::sqrt(20000.0));
}

TEST(GenData, ZeroInteractionMatchesLinearModel) {
    Rng r0(6);
    const LabelMatrix lab = gen_labels(LabelScheme::uniform(4, 2), 50, r0);
    ModelParams p = isotropic_model(gaussian_matrix(5, 4, 2.0, r0), 1.0);
    ModelParams q = p;
    q.B_inter = gaussian_matrix(5, 6, 3.0, r0);
    Rng a(7), b(7);
    EXPECT_EQ(gen_data(lab, p, 0.0, a).X, gen_data(lab, q, 0.0, b).X);
}

TEST(GenData, NoiselessLimitIsExact) {
    Rng r0(8);
    const LabelMatrix lab = gen_labels(LabelScheme::variable(4, {{1, 0.5}, {2, 0.5}}), 30, r0);
    ModelParams p = isotropic_model(gaussian_matrix(3, 4, 1.0, r0), 0.0);
    p.mu = (Vector(3) << 1, -2, 0.5).finished();
    const Dataset ds = gen_data(lab, p, 0.0, r0);
    for (Index i = 0; i < 30; ++i) EXPECT_EQ(ds.X.row(i).transpose(), p.mu + p.A * lab.row(i));
}

TEST(GenData, InteractionTermAdded) {
    Rng r0(9);
    const LabelMatrix lab = gen_labels(LabelScheme::uniform(3, 2), 20, r0);
    ModelParams p = isotropic_model(gaussian_matrix(2, 3, 1.0, r0), 0.0);
    p.B_inter = gaussian_matrix(2, 3, 1.0, r0);
    const Matrix X = mean_features(lab, p, 0.5);
    for (Index i = 0; i < 20; ++i) {
        const Vector expect = p.A * lab.row(i) + 0.5 * p.B_inter * pair_products(lab.row(i));
        EXPECT_LE((X.row(i).transpose() - expect).norm(), 1e-14);
    }
}

TEST(GenData, SampleMeanConvergesForFixedPattern) {
    const Index n = 100000, d = 4;
    const LabelMatrix lab = build_labels(Matrix::Ones(n, 3));
    Rng r0(10);
    ModelParams p = isotropic_model(gaussian_matrix(d, 3, 1.0, r0), 0.7);
    const Dataset ds = gen_data(lab, p, 0.0, r0);
    const Vector expect = p.mu + p.A * Vector::Ones(3);
    for (Index j = 0; j < d; ++j) EXPECT_LE(std::abs(ds.mu(j) - expect(j)), 4.0 * 0.7 / std::sqrt(double(n)));
}

TEST(NoiseMatrix, CovarianceMatchesForBothKinds) {
    Rng r0(11);
    const Matrix g = gaussian_matrix(3, 3, 1.0, r0);
    const SymMatrix S(g * g.transpose() + Matrix::Identity(3, 3));
    for (NoiseKind kind : {NoiseKind::Gaussian, NoiseKind::Rademacher}) {
        const Index n = 200000;
        const Matrix E = noise_matrix(n, S, r0, kind);
        const Matrix cov = E.transpose() * E / double(n);
        EXPECT_LE((cov - S.matrix()).norm(), 0.05 * S.frobenius());
        EXPECT_LE(E.colwise().mean().norm(), 0.02 * std::sqrt(S.trace()));
    }
}

TEST(NoiseMatrix, ZeroCovarianceGivesZeroNoise) {
    Rng r0(12);
    EXPECT_EQ(noise_matrix(10, SymMatrix::zero(3), r0).norm(), 0.0);
}

TEST(PairProducts, Examples) {
    EXPECT_EQ(pair_products((Vector(3) << 1, 1, 0).finished()), (Vector(3) << 1, 0, 0).finished());
    EXPECT_EQ(pair_products(Vector::Unit(5, 2)), Vector::Zero(10));
    EXPECT_EQ(pair_products(Vector::Ones(4)), Vector::Ones(6));
    // lexicographic order (1,2),(1,3),(1,4),(2,3),(2,4),(3,4)
    EXPECT_EQ(pair_products((Vector(4) << 0, 1, 0, 1).finished()), (Vector(6) << 0, 0, 0, 0, 1, 0).finished());
}

TEST(PairProducts, DifferenceBoundedByHammingAndCardinality) {
    Rng rng(13);
    const LabelScheme schemes[] = {LabelScheme::single(6), LabelScheme::uniform(6, 3),
                                   LabelScheme::variable(6, {{1, 0.4}, {2, 0.3}, {4, 0.3}})};
    int checked = 0;
    for (const auto& sc : schemes) {
        const LabelMatrix lab = gen_labels(sc, 500, rng);
        const double kmax = lab.k_max();
        for (const auto& [i, j] : random_pairs(500, 3334, rng)) {
            const Vector yi = lab.row(i), yj = lab.row(j);
            const double dh = (yi - yj).cwiseAbs().sum();
            const double lhs = (pair_products(yi) - pair_products(yj)).norm();
            EXPECT_LE(lhs, std::sqrt(dh * std::min(kmax - 1.0, 5.0)) + 1e-12);
            ++checked;
        }
    }
    EXPECT_GE(checked, 10000);
}

TEST(Determinism, IndependentOfThreads) {
    const Seed s{99};
    auto make = [&](std::uint64_t trial) {
        Rng rl = s.engine("det", trial, Purpose::Labels);
        const LabelMatrix lab = gen_labels(LabelScheme::variable(5, {{1, 0.5}, {2, 0.5}}), 80, rl);
        Rng re = s.engine("det", trial, Purpose::Effects);
        const ModelParams p = isotropic_model(gaussian_matrix(6, 5, 2.0, re), 1.0);
        Rng rn = s.engine("det", trial, Purpose::Noise);
        return gen_data(lab, p, 0.0, rn).X;
    };
    std::vector<Matrix> serial;
    for (std::uint64_t t = 0; t < 8; ++t) serial.push_back(make(t));
    std::vector<Matrix> threaded(8);
    std::vector<std::thread> pool;
    for (std::uint64_t t = 0; t < 8; ++t) pool.emplace_back([&, t] { threaded[t] = make(t); });
    for (auto& th : pool) th.join();
    for (size_t t = 0; t < 8; ++t) EXPECT_EQ(serial[t], threaded[t]);
}

TEST(RandomPairs, DistinctIndices) {
    Rng rng(14);
    for (const auto& [i, j] : random_pairs(3, 500, rng)) {
        EXPECT_NE(i, j);
        EXPECT_LT(i, 3);
        EXPECT_LT(j, 3);
    }
    EXPECT_THROW(random_pairs(1, 2, rng), Error);
}

TEST(RandomStiefel, Orthonormal) {
    Rng rng(15);
    const Frame F = random_stiefel(8, 3, rng);
    EXPECT_LE((F.columns().transpose() * F.columns() - Matrix::Identity(3, 3)).norm(), 1e-12);
}
