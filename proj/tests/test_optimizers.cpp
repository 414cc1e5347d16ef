#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "gazefl/optimizers.hpp"

using namespace gazefl;

namespace {

GradFn<double> quadratic_grad() {
  return [](std::span<const double> p) { return ParamVector<double>(p.begin(), p.end()); };
}

}  // namespace

TEST(Nesterov, HandIteratedQuadratic) {
  ParamVector<double> theta{1.0};
  auto s = SgdNesterovState<double>::zeros(1, 0.1, 0.9);
  sgd_nesterov_step(theta, s, quadratic_grad());
  EXPECT_NEAR(s.velocity[0], 0.1, 1e-15);
  EXPECT_NEAR(theta[0], 0.9, 1e-15);
  sgd_nesterov_step(theta, s, quadratic_grad());
  EXPECT_NEAR(s.velocity[0], 0.171, 1e-15);
  EXPECT_NEAR(theta[0], 0.729, 1e-15);
}

TEST(Nesterov, GradientIsTakenAtLookahead) {
  ParamVector<double> theta{2.0};
  auto s = SgdNesterovState<double>::zeros(1, 0.5, 0.5);
  s.velocity[0] = 1.0;
  std::vector<double> seen;
  sgd_nesterov_step<double>(theta, s, [&](std::span<const double> p) {
    seen.push_back(p[0]);
    return ParamVector<double>{0.0};
  });
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_EQ(seen[0], 1.5);
}

TEST(Nesterov, ZeroLearningRateFreezesFromRest) {
  ParamVector<double> theta{0.3, -1.2};
  auto s = SgdNesterovState<double>::zeros(2, 0.0, 0.9);
  sgd_nesterov_step(theta, s, quadratic_grad());
  EXPECT_EQ(theta, (ParamVector<double>{0.3, -1.2}));
  EXPECT_EQ(s.velocity, (ParamVector<double>{0.0, 0.0}));
}

TEST(Nesterov, ZeroMomentumIsPlainSgd) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0.0, 1.0);
  ParamVector<double> theta{d(rng), d(rng), d(rng)};
  auto s = SgdNesterovState<double>::zeros(3, 0.05, 0.0);
  const auto grad = [](std::span<const double> p) {
    return ParamVector<double>{std::sin(p[0]), p[1] * p[1], 3.0 * p[2]};
  };
  for (int step = 0; step < 20; ++step) {
    auto expected = theta;
    const auto g = grad(theta);
    for (std::size_t i = 0; i < 3; ++i) expected[i] -= 0.05 * g[i];
    sgd_nesterov_step<double>(theta, s, grad);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(theta[i], expected[i]);
  }
}

TEST(Nesterov, ConvergesMonotonicallyOnQuadratic) {
  // J = h theta^2 / 2 with lr * h below 1 - 4 momentum / (1 + momentum)^2,
  // where the iteration has real eigenvalues and does not overshoot.
  constexpr double h = 0.1;
  const GradFn<double> grad = [](std::span<const double> p) {
    return ParamVector<double>{h * p[0]};
  };
  ParamVector<double> theta{5.0};
  auto s = SgdNesterovState<double>::zeros(1, 0.01, 0.9);
  double prev = std::abs(theta[0]);
  for (int step = 0; step < 1000; ++step) {
    sgd_nesterov_step(theta, s, grad);
    const double dist = std::abs(theta[0]);
    ASSERT_LE(dist, prev) << "step " << step;
    prev = dist;
  }
  EXPECT_LT(prev, 5e-3);
}

TEST(Nesterov, UnitCurvatureOscillatesButConverges) {
  ParamVector<double> theta{5.0};
  auto s = SgdNesterovState<double>::zeros(1, 0.01, 0.9);
  for (int step = 0; step < 1000; ++step) sgd_nesterov_step(theta, s, quadratic_grad());
  EXPECT_LT(std::abs(theta[0]), 1e-6);
}

TEST(Nesterov, NonFiniteGradientNamesLayer) {
  ParamBlock a{"conv1.weight", 0, 2}, b{"conv1.bias", 2, 1};
  const ParamLayout layout{a, b};
  ParamVector<double> theta{0.0, 0.0, 0.0};
  auto s = SgdNesterovState<double>::zeros(3, 0.1, 0.9);
  const GradFn<double> bad = [](std::span<const double>) {
    return ParamVector<double>{0.0, 0.0, std::numeric_limits<double>::infinity()};
  };
  try {
    sgd_nesterov_step(theta, s, bad, &layout);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_EQ(e.index(), 2u);
    EXPECT_NE(std::string(e.what()).find("conv1.bias"), std::string::npos) << e.what();
  }
}

TEST(LrSchedule, StepDecay) {
  LrSchedule s{1e-5, 0.1, {50}};
  EXPECT_EQ(s.lr_at_round(0), 1e-5);
  EXPECT_EQ(s.lr_at_round(49), 1e-5);
  EXPECT_NEAR(s.lr_at_round(50), 1e-6, 1e-21);
  EXPECT_NEAR(s.lr_at_round(500), 1e-6, 1e-21);

  LrSchedule constant{0.02, 0.1, {}};
  for (std::uint64_t r : {0u, 7u, 1000u}) EXPECT_EQ(constant.lr_at_round(r), 0.02);
  LrSchedule unit{0.02, 1.0, {1, 2, 3}};
  for (std::uint64_t r : {0u, 2u, 9u}) EXPECT_EQ(unit.lr_at_round(r), 0.02);

  LrSchedule two{1.0, 0.5, {10, 20}};
  EXPECT_EQ(two.lr_at_round(25), 0.25);
}

TEST(LrSchedule, Validation) {
  EXPECT_NO_THROW((LrSchedule{1e-3, 1.0, {}}.validate()));
  EXPECT_THROW((LrSchedule{1e-3, 0.0, {}}.validate()), std::invalid_argument);
  EXPECT_THROW((LrSchedule{1e-3, 1.5, {}}.validate()), std::invalid_argument);
  EXPECT_THROW((LrSchedule{1e-3, 0.1, {5, 5}}.validate()), std::invalid_argument);
  EXPECT_THROW((LrSchedule{0.0, 0.1, {}}.validate()), std::invalid_argument);
}

TEST(Adam, FirstStepMagnitude) {
  ParamVector<double> w{0.0};
  auto s = AdamState<double>::zeros(1, {0.001, 0.9, 0.999, 1e-8});
  const std::vector<double> g{1.0};
  adam_step<double>(w, s, g);
  EXPECT_NEAR(w[0], -0.001 / (1.0 + 1e-8), 1e-18);
  EXPECT_EQ(s.t, 1u);
}

TEST(Adam, ZeroGradientLeavesParams) {
  ParamVector<double> w{0.5, -0.25};
  auto s = AdamState<double>::zeros(2, {});
  const std::vector<double> g{0.0, 0.0};
  for (int i = 0; i < 10; ++i) adam_step<double>(w, s, g);
  EXPECT_EQ(w, (ParamVector<double>{0.5, -0.25}));
}

TEST(Adam, FirstStepOpposesGradientSign) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(0.0, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double gv = d(rng);
    if (gv == 0.0) continue;
    ParamVector<double> w{0.0};
    auto s = AdamState<double>::zeros(1, {});
    const std::vector<double> g{gv};
    adam_step<double>(w, s, g);
    EXPECT_EQ(std::signbit(w[0]), !std::signbit(gv));
  }
}

TEST(Adam, StepIsBoundedByLearningRate) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> scale(0.0, 3.0);
  const AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  auto s = AdamState<double>::zeros(16, cfg);
  ParamVector<double> w(16, 0.0);
  for (int step = 0; step < 500; ++step) {
    std::vector<double> g(16);
    for (auto& v : g) v = scale(rng) * std::exp(scale(rng));
    const auto before = w;
    adam_step<double>(w, s, g);
    for (std::size_t i = 0; i < w.size(); ++i) {
      // Bias-corrected |m_hat| / sqrt(u_hat) <= (1 - b1) / sqrt(1 - b2) in the worst case.
      const double bound = cfg.lr * (1.0 - cfg.beta1) / std::sqrt(1.0 - cfg.beta2) * 1.0001;
      ASSERT_LE(std::abs(w[i] - before[i]), std::max(bound, cfg.lr * 1.0001));
      ASSERT_GE(s.u[i], 0.0);
    }
  }
}

TEST(Adam, RejectsBadInput) {
  ParamVector<double> w{0.0, 0.0};
  auto s = AdamState<double>::zeros(2, {});
  const std::vector<double> short_grad{1.0};
  EXPECT_THROW(adam_step<double>(w, s, short_grad), std::invalid_argument);
  const std::vector<double> nan_grad{1.0, std::numeric_limits<double>::quiet_NaN()};
  EXPECT_THROW(adam_step<double>(w, s, nan_grad), NonFiniteError);
}

TEST(FedAvg, Examples) {
  const std::vector<double> a{1.0}, b{3.0};
  const std::vector<WeightedParams<double>> ups{{0, a, 1}, {1, b, 3}};
  EXPECT_EQ(fedavg_aggregate<double>(ups), (ParamVector<double>{2.5}));
  EXPECT_EQ(fedavg_aggregate<double>(ups, Weighting::Uniform), (ParamVector<double>{2.0}));

  const std::vector<double> only{0.1, 0.2, 0.3};
  const std::vector<WeightedParams<double>> single{{4, only, 17}};
  EXPECT_EQ(fedavg_aggregate<double>(single), only);

  const std::vector<float> same{0.7f, -0.3f};
  const std::vector<WeightedParams<float>> twins{{0, same, 5}, {1, same, 9}, {2, same, 2}};
  EXPECT_EQ(fedavg_aggregate<float>(twins), (ParamVector<float>(same)));
}

TEST(FedAvg, Errors) {
  const std::vector<WeightedParams<double>> none;
  EXPECT_THROW(fedavg_aggregate<double>(none), AggregationError);
  const std::vector<double> a{1.0}, b{1.0, 2.0};
  const std::vector<WeightedParams<double>> mismatch{{0, a, 1}, {1, b, 1}};
  EXPECT_THROW(fedavg_aggregate<double>(mismatch), AggregationError);
  const std::vector<WeightedParams<double>> zero{{0, a, 0}};
  EXPECT_THROW(fedavg_aggregate<double>(zero), AggregationError);
}

TEST(FedAvg, PermutationInvariantAndBounded) {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::uniform_int_distribution<std::uint64_t> n(1, 1000);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + trial % 9, len = 13;
    std::vector<std::vector<float>> locals(k, std::vector<float>(len));
    std::vector<WeightedParams<float>> ups;
    for (std::size_t c = 0; c < k; ++c) {
      for (auto& v : locals[c]) v = d(rng);
      ups.push_back({static_cast<std::uint32_t>(c), locals[c], n(rng)});
    }
    const auto ref = fedavg_aggregate<float>(ups);
    std::shuffle(ups.begin(), ups.end(), rng);
    EXPECT_EQ(fedavg_aggregate<float>(ups), ref);
    for (std::size_t i = 0; i < len; ++i) {
      float lo = locals[0][i], hi = locals[0][i];
      for (const auto& l : locals) {
        lo = std::min(lo, l[i]);
        hi = std::max(hi, l[i]);
      }
      EXPECT_GE(ref[i], lo);
      EXPECT_LE(ref[i], hi);
    }
  }
}

TEST(PseudoGradient, Examples) {
  const std::vector<double> server{1.0}, local{0.8};
  const std::vector<WeightedParams<double>> one{{0, local, 10}};
  EXPECT_NEAR(pseudo_gradient<double>(server, one)[0], 0.2, 1e-15);

  const std::vector<double> s3{0.5, -2.0, 7.0};
  const std::vector<WeightedParams<double>> unchanged{{0, s3, 3}, {1, s3, 8}};
  EXPECT_EQ(pseudo_gradient<double>(s3, unchanged), (ParamVector<double>(3, 0.0)));
}

TEST(PseudoGradient, EqualsServerMinusAverage) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> d(0.0f, 2.0f);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 1 + trial % 6;
    std::vector<float> server(9);
    for (auto& v : server) v = d(rng);
    std::vector<std::vector<float>> locals(k, std::vector<float>(9));
    std::vector<WeightedParams<float>> ups;
    for (std::size_t c = 0; c < k; ++c) {
      for (auto& v : locals[c]) v = d(rng);
      ups.push_back({static_cast<std::uint32_t>(k - c), locals[c], 1 + c * 7});
    }
    const auto pg = pseudo_gradient<float>(server, ups);
    const auto avg = fedavg_aggregate<float>(ups);
    for (std::size_t i = 0; i < 9; ++i) {
      EXPECT_NEAR(pg[i], server[i] - avg[i], 4 * std::numeric_limits<float>::epsilon() *
                                                 (std::abs(server[i]) + std::abs(avg[i])));
    }
  }
}

TEST(PseudoGradient, ServerLengthMismatchThrows) {
  const std::vector<double> server{1.0, 2.0}, local{1.0};
  const std::vector<WeightedParams<double>> ups{{0, local, 1}};
  EXPECT_THROW(pseudo_gradient<double>(server, ups), AggregationError);
}

TEST(FedAdam, ZeroPseudoGradientKeepsServerBitIdentical) {
  std::vector<float> server{0.125f, -3.5f, 1e-7f};
  const auto start = server;
  auto s = AdamState<float>::zeros(3, {});
  for (int round = 0; round < 50; ++round) {
    const auto copy = server;
    const std::vector<WeightedParams<float>> ups{{0, copy, 4}, {1, copy, 9}};
    const auto pg = pseudo_gradient<float>(server, ups);
    adam_step<float>(server, s, pg);
  }
  EXPECT_EQ(server, start);
}
