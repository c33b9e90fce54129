#include <gtest/gtest.h>

#include <cmath>

#include "mndbn/mixed_norm.hpp"
#include "test_support.hpp"

using namespace mndbn;
using namespace mndbn::testing;

namespace {

PenaltyConfig penalty(double lambda, std::size_t j, std::size_t g, double a = 0.0) {
    return make_penalty(PenaltySpec{lambda, g, a, default_norm_floor}, j);
}

Matrix binary_patterns(std::size_t n, std::size_t width, Rng& rng) {
    // Four prototypes with 10% bit noise.
    Matrix protos(4, width);
    for (double& v : protos.flat()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    Matrix out(n, width);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < width; ++c) {
            const double v = protos(r % 4, c);
            out(r, c) = rng.uniform() < 0.1 ? 1.0 - v : v;
        }
    return out;
}

}  // namespace

TEST(MixedNorm, HandValues) {
    const auto one = penalty(1.0, 2, 2);
    EXPECT_EQ(mixed_norm(Vector{0.0, 0.0}, one), 0.0);
    EXPECT_NEAR(mixed_norm(Vector{0.6, 0.8}, one), 1.0, 1e-15);
    const auto pairs = penalty(1.0, 4, 2);
    EXPECT_NEAR(mixed_norm(Vector{0.6, 0.8, 0.3, 0.4}, pairs), 1.5, 1e-15);
}

TEST(MixedNorm, SingleGroupIsEuclideanNorm) {
    Rng rng(1);
    const Vector h = random_unit_interval(12, rng);
    EXPECT_NEAR(mixed_norm(h, penalty(1.0, 12, 0)), norm2(h), 1e-14);
}

TEST(MixedNorm, UnitGroupsGiveL1) {
    Rng rng(2);
    const Vector h = random_unit_interval(9, rng);
    double l1 = 0.0;
    for (double v : h) l1 += v;
    EXPECT_NEAR(mixed_norm(h, penalty(1.0, 9, 1)), l1, 1e-14);
}

TEST(MixedNorm, OverlapCountsSharedUnitsTwice) {
    const auto p = penalty(1.0, 4, 2, 0.5);
    const Vector h{0.3, 0.4, 0.0, 0.0};
    // groups {0,1}, {1,2}, {2,3}
    EXPECT_NEAR(mixed_norm(h, p), 0.5 + 0.4 + 0.0, 1e-15);
}

TEST(MixedNorm, SaturatedUnitsContributeNoGradient) {
    Rbm m(3, 4);
    m.a_hid.assign(4, -40.0);
    const auto cfg = penalty(1.0, 4, 2);
    const PenaltyGrad g = penalty_grad(m, Vector{1, 1, 1}, cfg);
    for (double v : g.gw.flat()) EXPECT_LT(std::abs(v), 1e-15);
    for (double v : g.ga) EXPECT_LT(std::abs(v), 1e-15);
    for (double v : penalty_unit_scales(Vector{1.0, 1.0, 0.0, 0.0}, cfg)) EXPECT_EQ(v, 0.0);
}

TEST(MixedNorm, UnitGroupScaleIsSigmoidDerivative) {
    Rng rng(3);
    const Rbm m = gaussian_rbm(5, 3, 1.0, rng);
    const Vector x = random_unit_interval(5, rng);
    const PenaltyGrad g = penalty_grad(m, x, penalty(1.0, 3, 1));
    const Vector p = prob_h_given_x(m, x);
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_NEAR(g.ga[j], p[j] * (1 - p[j]), 1e-15);
        for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(g.gw(i, j), p[j] * (1 - p[j]) * x[i], 1e-15);
    }
}

TEST(MixedNorm, GradientMatchesFiniteDifferences) {
    Rng rng(4);
    for (const auto& cfg : {penalty(1.0, 6, 3), penalty(1.0, 6, 2, 0.5), penalty(1.0, 6, 0)}) {
        Rbm m = gaussian_rbm(6, 6, 1.0, rng);
        const Vector x = random_unit_interval(6, rng);
        const PenaltyGrad g = penalty_grad(m, x, cfg);
        auto f = [&] { return mixed_norm(prob_h_given_x(m, x), cfg); };
        for (std::size_t k = 0; k < m.w.size(); ++k)
            EXPECT_LT(relative_error(g.gw.flat()[k], central_difference(f, m.w.flat()[k])), 1e-6);
        for (std::size_t j = 0; j < 6; ++j)
            EXPECT_LT(relative_error(g.ga[j], central_difference(f, m.a_hid[j])), 1e-6);
    }
}

TEST(MixedNorm, BatchGradientIsRowMean) {
    Rng rng(5);
    const Rbm m = gaussian_rbm(4, 6, 1.0, rng);
    const auto cfg = penalty(1.0, 6, 3);
    Matrix batch(3, 4);
    for (double& v : batch.flat()) v = rng.uniform();
    const PenaltyGrad mean = penalty_grad(m, batch, cfg);
    PenaltyGrad ref{Matrix(4, 6), Vector(6, 0.0)};
    for (std::size_t l = 0; l < 3; ++l) {
        const PenaltyGrad g = penalty_grad(m, batch.row(l), cfg);
        axpy(1.0 / 3, g.gw, ref.gw);
        axpy(1.0 / 3, g.ga, ref.ga);
    }
    for (std::size_t k = 0; k < ref.gw.size(); ++k) EXPECT_NEAR(mean.gw.flat()[k], ref.gw.flat()[k], 1e-15);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(mean.ga[j], ref.ga[j], 1e-15);
}

TEST(MixedNorm, ConfigValidation) {
    EXPECT_THROW(penalty(-1.0, 6, 3), config_error);
    EXPECT_THROW(penalty(1.0, 6, 4), config_error);
    EXPECT_THROW(make_penalty(PenaltySpec{1.0, 3, 0.0, 1e-3}, 6), config_error);
    EXPECT_THROW(penalty_grad(Rbm(3, 4), Vector(3), penalty(1.0, 6, 3)), contract_error);
}

TEST(RegularizedUpdate, ZeroLambdaIsPlainCd) {
    Rng mrng(6);
    const Rbm start = gaussian_rbm(8, 6, 0.1, mrng);
    Matrix batch(5, 8);
    for (double& v : batch.flat()) v = mrng.uniform();

    Rbm a = start, b = start;
    CdStats va = CdStats::zeros_like(a), vb = CdStats::zeros_like(b);
    Rng ra(77), rb(77);
    regularized_update(a, batch, penalty(0.0, 6, 2), 1, 0.1, 0.5, va, ra);
    apply_update(b, cd_step(b, batch, 1, rb), 0.1, 0.5, vb);
    EXPECT_EQ(a, b);
    EXPECT_EQ(ra, rb);
}

TEST(RegularizedUpdate, PenaltyStepUsesUpdatedParameters) {
    Rng mrng(7);
    const Rbm start = gaussian_rbm(8, 6, 0.1, mrng);
    Matrix batch(5, 8);
    for (double& v : batch.flat()) v = mrng.uniform();
    const auto cfg = penalty(0.3, 6, 3);

    Rbm a = start, b = start;
    CdStats va = CdStats::zeros_like(a), vb = CdStats::zeros_like(b);
    Rng ra(5), rb(5);
    regularized_update(a, batch, cfg, 1, 0.1, 0.5, va, ra);
    apply_update(b, cd_step(b, batch, 1, rb), 0.1, 0.5, vb);
    const Vector b_vis_after_cd = b.b_vis;
    const PenaltyGrad g = penalty_grad(b, batch, cfg);
    axpy(-0.1 * 0.3, g.gw, b.w);
    axpy(-0.1 * 0.3, g.ga, b.a_hid);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.b_vis, b_vis_after_cd);
}

TEST(RegularizedUpdate, IdenticalRowsMatchSingleRowPenalty) {
    Rng mrng(8);
    const Rbm m = gaussian_rbm(5, 4, 1.0, mrng);
    const Vector x = random_unit_interval(5, mrng);
    Matrix batch(4, 5);
    for (std::size_t r = 0; r < 4; ++r) std::copy(x.begin(), x.end(), batch.row(r).begin());
    const auto cfg = penalty(1.0, 4, 2);
    const PenaltyGrad one = penalty_grad(m, x, cfg);
    const PenaltyGrad four = penalty_grad(m, batch, cfg);
    for (std::size_t k = 0; k < one.gw.size(); ++k) EXPECT_NEAR(four.gw.flat()[k], one.gw.flat()[k], 1e-15);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(four.ga[j], one.ga[j], 1e-15);
}

TEST(RegularizedUpdate, PenaltyLowersMixedNormOfActivations) {
    Rng drng(9);
    const Matrix data = binary_patterns(200, 20, drng);
    TrainParams params;
    params.epochs = 20;
    params.batch_size = 20;
    params.lr = 0.1;

    Rng r0(10), r1(10);
    const auto plain = train_mnrbm(data, 20, penalty(0.0, 20, 5), params, r0);
    const auto sparse = train_mnrbm(data, 20, penalty(0.1, 20, 5), params, r1);
    const auto cfg = penalty(1.0, 20, 5);
    EXPECT_LT(mean_mixed_norm(sparse.model, data, cfg), mean_mixed_norm(plain.model, data, cfg));
    double a_plain = 0, a_sparse = 0;
    for (double v : mean_activation(plain.model, data)) a_plain += v;
    for (double v : mean_activation(sparse.model, data)) a_sparse += v;
    EXPECT_LT(a_sparse, a_plain);
}

TEST(Training, LogLengthAndDeterminism) {
    Rng drng(11);
    const Matrix data = binary_patterns(60, 12, drng);
    TrainParams params;
    params.epochs = 4;
    params.batch_size = 16;
    Rng a(3), b(3);
    std::vector<std::size_t> seen;
    const auto ra = train_mnrbm(data, 6, penalty(0.05, 6, 3), params, a,
                                [&](const EpochLog& e) { seen.push_back(e.epoch); });
    const auto rb = train_mnrbm(data, 6, penalty(0.05, 6, 3), params, b);
    ASSERT_EQ(ra.log.size(), 4u);
    EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3, 4}));
    EXPECT_EQ(ra.model, rb.model);
    for (std::size_t e = 0; e < 4; ++e) {
        EXPECT_EQ(ra.log[e].recon_error, rb.log[e].recon_error);
        EXPECT_EQ(ra.log[e].mixed_norm_value, rb.log[e].mixed_norm_value);
    }
    EXPECT_LT(ra.log.back().recon_error, ra.log.front().recon_error);
}

TEST(Training, RejectsMismatchedPartitionAndEmptyData) {
    TrainParams params;
    Rng rng(1);
    EXPECT_THROW(train_mnrbm(Matrix(4, 3), 6, penalty(0.1, 8, 4), params, rng), config_error);
    EXPECT_THROW(train_mnrbm(Matrix(0, 3), 6, penalty(0.1, 6, 3), params, rng), config_error);
    params.lr = 0.0;
    EXPECT_THROW(train_mnrbm(Matrix(4, 3), 6, penalty(0.1, 6, 3), params, rng), config_error);
}

TEST(Training, MomentumSchedule) {
    TrainParams p;
    EXPECT_EQ(p.momentum_at(0), 0.5);
    EXPECT_EQ(p.momentum_at(4), 0.5);
    EXPECT_EQ(p.momentum_at(5), 0.9);
}

TEST(Training, StrongerPenaltyLowersActivationMonotonically) {
    Rng drng(12);
    const Matrix data = binary_patterns(200, 16, drng);
    TrainParams params;
    params.epochs = 10;
    params.batch_size = 20;
    double prev = 2.0;
    for (double lambda : {0.0, 1.0, 5.0}) {
        Rng rng(13);
        const auto r = train_mnrbm(data, 12, penalty(lambda, 12, 4), params, rng);
        double mean = 0.0;
        for (double v : mean_activation(r.model, data)) mean += v / 12;
        EXPECT_LT(mean, prev) << "lambda " << lambda;
        prev = mean;
    }
}
