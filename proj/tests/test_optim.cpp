#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <map>

#include <qdport/optim.hpp>

#include "golden_traces.hpp"

using namespace qdport;

using qdtest::golden;
using qdtest::quadratic_grad;
using qdtest::run_trace;
using qdtest::Trace;

class GoldenTrace : public ::testing::TestWithParam<std::string> {};

TEST_P(GoldenTrace, FirstThreeStepsMatch) {
    const std::string name = GetParam();
    const Trace got = name == "sgd_momentum" ? run_trace(OptimizerKind::sgd, 0.9) : run_trace(parse_optimizer(name));
    const Trace& want = golden().at(name);
    for (int s = 0; s < 3; ++s)
        for (int i = 0; i < 2; ++i) EXPECT_NEAR(got[s][i], want[s][i], 1e-12) << name << " step " << s + 1;
}

INSTANTIATE_TEST_SUITE_P(AllGradientKinds, GoldenTrace,
                         ::testing::Values("sgd", "sgd_momentum", "adam", "adamw", "adamax", "nadam", "radam", "rmsprop",
                                           "adagrad", "rprop"));

TEST(Optim, AdamMatchesHandFormula) {
    // Bias-corrected Adam written out directly.
    const double b1 = 0.9, b2 = 0.999, lr = 0.1, eps = 1e-8;
    double th0 = 0.5, th1 = 0.5, m0 = 0, m1 = 0, v0 = 0, v1 = 0;
    const Trace got = run_trace(OptimizerKind::adam);
    for (int t = 1; t <= 3; ++t) {
        const double g0 = 2 * (th0 - 1), g1 = 6 * (th1 + 2);
        m0 = b1 * m0 + (1 - b1) * g0;
        m1 = b1 * m1 + (1 - b1) * g1;
        v0 = b2 * v0 + (1 - b2) * g0 * g0;
        v1 = b2 * v1 + (1 - b2) * g1 * g1;
        th0 -= lr * (m0 / (1 - std::pow(b1, t))) / (std::sqrt(v0 / (1 - std::pow(b2, t))) + eps);
        th1 -= lr * (m1 / (1 - std::pow(b1, t))) / (std::sqrt(v1 / (1 - std::pow(b2, t))) + eps);
        EXPECT_NEAR(got[t - 1][0], th0, 1e-15);
        EXPECT_NEAR(got[t - 1][1], th1, 1e-15);
    }
}

TEST(Optim, SgdExample) {
    Hyper hp;
    hp.lr = 0.1;
    OptimizerState st;
    std::vector<double> th{1.0};
    step(OptimizerKind::sgd, th, std::vector<double>{0.5}, st, hp);
    EXPECT_DOUBLE_EQ(th[0], 0.95);
}

TEST(Optim, AdamFirstStepIsLearningRate) {
    Hyper hp;
    hp.lr = 0.001;
    OptimizerState st;
    std::vector<double> th{0.0};
    step(OptimizerKind::adam, th, std::vector<double>{2.0}, st, hp);
    EXPECT_NEAR(th[0], -0.001, 1e-6);
}

TEST(Optim, RpropSignFlipTrace) {
    // Hand trace with lr 0.1: steps 0.1, 0.12, then a flip halves the step to 0.06 and leaves θ
    // alone; the cleared memory makes the next step a plain 0.06 move.
    Hyper hp;
    hp.lr = 0.1;
    OptimizerState st;
    std::vector<double> th{0.0};
    const double expected[] = {-0.1, -0.22, -0.22, -0.16};
    const double steps[] = {0.1, 0.12, 0.06, 0.06};
    const double grads[] = {1.0, 1.0, -1.0, -1.0};
    for (int i = 0; i < 4; ++i) {
        step(OptimizerKind::rprop, th, std::vector<double>{grads[i]}, st, hp);
        EXPECT_NEAR(th[0], expected[i], 1e-15) << "step " << i + 1;
        EXPECT_NEAR(st.fourth[0], steps[i], 1e-15) << "step " << i + 1;
    }
}

TEST(Optim, RpropStepBounds) {
    Hyper hp;
    hp.lr = 40.0;
    OptimizerState st;
    std::vector<double> th{0.0};
    for (int i = 0; i < 5; ++i) step(OptimizerKind::rprop, th, std::vector<double>{1.0}, st, hp);
    EXPECT_EQ(st.fourth[0], 50.0);
    hp.lr = 1e-6;
    OptimizerState st2;
    double g = 1.0;
    for (int i = 0; i < 6; ++i, g = -g) step(OptimizerKind::rprop, th, std::vector<double>{g}, st2, hp);
    EXPECT_GE(st2.fourth[0], 1e-6);
}

TEST(Optim, ZeroGradientOnlyWeightDecayMoves) {
    for (OptimizerKind k : kAllOptimizers) {
        if (k == OptimizerKind::cmaes) continue;
        Hyper hp;
        OptimizerState st;
        std::vector<double> th{0.3, -1.2};
        for (int i = 0; i < 3; ++i) step(k, th, std::vector<double>{0.0, 0.0}, st, hp);
        if (k == OptimizerKind::adamw) {
            EXPECT_NEAR(th[0], 0.3 * std::pow(1.0 - hp.lr * hp.weight_decay, 3), 1e-15);
        } else {
            EXPECT_EQ(th[0], 0.3) << to_string(k);
            EXPECT_EQ(th[1], -1.2) << to_string(k);
        }
    }
}

TEST(Optim, QuadraticSanityForEveryKind) {
    for (OptimizerKind k : kAllOptimizers) {
        if (k == OptimizerKind::cmaes) continue;
        Hyper hp;
        OptimizerState st;
        std::vector<double> th{1.0};
        for (int i = 0; i < 200; ++i) step(k, th, std::vector<double>{2.0 * th[0]}, st, hp);
        EXPECT_LT(std::abs(th[0]), 0.1) << to_string(k);
    }
}

TEST(Optim, DeterministicAndErrors) {
    Hyper hp;
    OptimizerState a, b;
    std::vector<double> x{0.1, 0.2}, y{0.1, 0.2};
    for (int i = 0; i < 5; ++i) {
        step(OptimizerKind::nadam, x, quadratic_grad(x), a, hp);
        step(OptimizerKind::nadam, y, quadratic_grad(y), b, hp);
    }
    EXPECT_EQ(x, y);
    EXPECT_TRUE(a == b);
    EXPECT_THROW(step(OptimizerKind::adam, x, std::vector<double>{1.0, std::nan("")}, a, hp), NumericalError);
    EXPECT_THROW(step(OptimizerKind::adam, x, std::vector<double>{1.0}, a, hp), DataError);
    EXPECT_THROW(step(OptimizerKind::cmaes, x, std::vector<double>{1.0, 1.0}, a, hp), ConfigError);
    EXPECT_THROW(parse_optimizer("lbfgs"), ConfigError);
    for (OptimizerKind k : kAllOptimizers) EXPECT_EQ(parse_optimizer(to_string(k)), k);
}

TEST(Optim, HyperValidation) {
    Hyper hp;
    hp.lr = 0.0;
    EXPECT_THROW(hp.validate(), ConfigError);
    hp = {};
    hp.beta1 = 1.0;
    EXPECT_THROW(hp.validate(), ConfigError);
    hp = {};
    hp.eps = 0.0;
    EXPECT_THROW(hp.validate(), ConfigError);
}

TEST(CmaEs, SphereConvergesAndCovarianceStaysPositiveDefinite) {
    auto sphere = [](std::span<const double> x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return s;
    };
    double min_eig = 1.0;
    const CmaesResult res = cmaes_run(sphere, std::vector<double>(5, 1.0), 16, 200, 2024, 0.5,
                                      [&](const CmaEs& es, std::size_t) {
                                          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(es.covariance());
                                          min_eig = std::min(min_eig, eig.eigenvalues().minCoeff());
                                          EXPECT_TRUE(es.covariance().isApprox(es.covariance().transpose()));
                                      });
    EXPECT_LT(res.best_value, 1e-10);
    EXPECT_GT(min_eig, 0.0);
    EXPECT_EQ(res.history.size(), 200u);
    EXPECT_EQ(res.evaluations, 16u * 200u);
    for (const auto& h : res.history) EXPECT_GT(h.min_eigenvalue, 0.0);
}

TEST(CmaEs, OneDimensionalQuadratic) {
    const CmaesResult res =
        cmaes_run([](std::span<const double> x) { return (x[0] - 3.0) * (x[0] - 3.0); }, {0.0}, 8, 150, 7, 1.0);
    EXPECT_NEAR(res.final_mean[0], 3.0, 1e-6);
}

TEST(CmaEs, PreconditionsAndDeterminism) {
    EXPECT_THROW(CmaEs({0.0, 0.0}, 0.5, 2, 1), ConfigError);
    EXPECT_EQ(CmaEs::default_popsize(10), 4u + static_cast<std::size_t>(std::floor(3.0 * std::log(10.0))));
    auto f = [](std::span<const double> x) { return x[0] * x[0] + 2 * x[1] * x[1]; };
    const auto a = cmaes_run(f, {1.0, 1.0}, 6, 30, 5);
    const auto b = cmaes_run(f, {1.0, 1.0}, 6, 30, 5);
    EXPECT_EQ(a.best_x, b.best_x);
    EXPECT_EQ(a.best_value, b.best_value);
    EXPECT_THROW(cmaes_run([](std::span<const double>) { return std::nan(""); }, {1.0}, 4, 3, 1), NumericalError);
}
