#include <gtest/gtest.h>

#include <cmath>
#include <bit>
#include <limits>

#include "datlas/losses.hpp"
#include "datlas/rng.hpp"

namespace datlas {
namespace {

constexpr double kHalfLn2Pi = 0.918938533204672742;

TEST(GaussianNll, ClosedForms) {
  EXPECT_NEAR(gaussian_nll(0, 0, 1), kHalfLn2Pi, 1e-12);
  EXPECT_NEAR(gaussian_nll(0.918, 0.918, 1), kHalfLn2Pi, 1e-12);
  EXPECT_NEAR(gaussian_nll(-17.3, -17.3, 1), kHalfLn2Pi, 1e-12);
  EXPECT_NEAR(gaussian_nll(2, 0, 2), std::log(2.0) + 0.5 + kHalfLn2Pi, 1e-12);
  EXPECT_NEAR(gaussian_nll(2, 0, 2), 2.112, 1e-3);
  EXPECT_THROW(gaussian_nll(0, 0, 0), ContractViolation);
  EXPECT_THROW(gaussian_nll(0, 0, -1), ContractViolation);
}

TEST(BernoulliNll, ClosedFormsAndClamp) {
  EXPECT_NEAR(bernoulli_nll(1, 0.5), std::log(2.0), 1e-12);
  EXPECT_NEAR(bernoulli_nll(1, 0.75), -std::log(0.75), 1e-12);
  EXPECT_NEAR(bernoulli_nll(1, 0.75), 0.287682, 1e-6);
  const double clamped = bernoulli_nll(0, 1e-9);
  EXPECT_TRUE(std::isfinite(clamped));
  EXPECT_NEAR(clamped, 1e-9, 1e-15);
  EXPECT_NEAR(bernoulli_nll(0, 0.0), 1e-9, 1e-15);
  EXPECT_TRUE(std::isfinite(bernoulli_nll(1, 0.0)));
  EXPECT_LT(bernoulli_nll(1, 0.0), 20.8);
  EXPECT_THROW(bernoulli_nll(0.5, 0.5), ContractViolation);
  EXPECT_THROW(bernoulli_nll(2, 0.5), ContractViolation);
}

TEST(ExponentialNll, ClosedForms) {
  EXPECT_NEAR(exponential_nll(2, 1, 1), 2.0, 1e-12);
  EXPECT_NEAR(exponential_nll(3, 0, 0.5), 1.5, 1e-12);
  EXPECT_NEAR(exponential_nll(0, 1, 2), -std::log(2.0), 1e-12);
  EXPECT_THROW(exponential_nll(1, 1, 0), ContractViolation);
  EXPECT_THROW(exponential_nll(1, 0.5, 1), ContractViolation);
}

TEST(ExponentialNll, MinimisedAtInverseTime) {
  for (double T : {0.25, 1.0, 2.5, 7.0}) {
    double best = std::numeric_limits<double>::infinity(), arg = 0;
    for (int i = 1; i <= 200000; ++i) {
      const double lam = i * 1e-4;
      const double v = exponential_nll(T, 1, lam);
      if (v < best) {
        best = v;
        arg = lam;
      }
    }
    EXPECT_NEAR(arg, 1.0 / T, 1e-4) << "T=" << T;
  }
}

TEST(CombinedLoss, Examples) {
  const TaskLosses l{1, 2, 3};
  EXPECT_EQ(combined_loss(l, {1, 1, 1}), 6.0);
  EXPECT_EQ(combined_loss(l, {1, 1, 3.0 * 22}), 201.0);
  EXPECT_EQ(combined_loss(TaskLosses{}, {1, 1, 1}), 0.0);
  EXPECT_THROW(combined_loss(l, {1, 0, 1}), ContractViolation);
}

// Random instance with the given dimensions and roughly half the
// longitudinal targets masked out.
struct Instance {
  DistributionParams out;
  TargetBundle t;
};

Instance random_instance(Rng& rng, std::size_t C, std::size_t D, std::size_t M) {
  Instance in;
  for (std::size_t k = 0; k < C; ++k) {
    in.out.mu.push_back(rng.normal());
    in.out.sigma.push_back(rng.uniform(0.1, 3.0));
    in.t.continuous.push_back(rng.normal(0, 2));
    in.t.continuous_mask.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
  }
  for (std::size_t k = 0; k < D; ++k) {
    in.out.p.push_back(rng.uniform(0.01, 0.99));
    in.t.binary.push_back(rng.bernoulli(0.4) ? 1.0 : 0.0);
    in.t.binary_mask.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
  }
  for (std::size_t m = 0; m < M; ++m) {
    in.out.lambda.push_back(rng.uniform(0.05, 2.0));
    in.t.event_time.push_back(rng.uniform(0.0, 5.0));
    in.t.event_indicator.push_back(rng.bernoulli(0.3) ? 1.0 : 0.0);
  }
  return in;
}

TEST(TaskLosses, AllMasksZeroGivesZero) {
  Rng rng(1);
  auto in = random_instance(rng, 3, 4, 0);
  for (double& m : in.t.continuous_mask) m = 0;
  for (double& m : in.t.binary_mask) m = 0;
  const auto l = task_losses(in.out, in.t);
  EXPECT_EQ(l.continuous, 0.0);
  EXPECT_EQ(l.binary, 0.0);
  EXPECT_EQ(l.survival, 0.0);
}

TEST(TaskLosses, SingleObservedContinuous) {
  Rng rng(2);
  auto in = random_instance(rng, 3, 2, 0);
  in.t.continuous_mask = {0, 1, 0};
  in.t.binary_mask = {0, 0};
  const auto l = task_losses(in.out, in.t);
  EXPECT_EQ(l.continuous, gaussian_nll(in.t.continuous[1], in.out.mu[1], in.out.sigma[1]));
  EXPECT_EQ(l.binary, 0.0);
  EXPECT_EQ(l.survival, 0.0);
}

TEST(TaskLosses, DecompositionMatchesBruteForce) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t C = 1 + rng.below(6), D = 1 + rng.below(8), M = 1 + rng.below(4);
    const auto in = random_instance(rng, C, D, M);
    double brute = 0.0;
    for (std::size_t k = 0; k < C; ++k) {
      if (in.t.continuous_mask[k] == 1.0) {
        const double r = in.t.continuous[k] - in.out.mu[k];
        const double s = in.out.sigma[k];
        brute += 0.5 * std::log(2 * M_PI) + std::log(s) + r * r / (2 * s * s);
      }
    }
    for (std::size_t k = 0; k < D; ++k) {
      if (in.t.binary_mask[k] == 1.0) {
        const double b = in.t.binary[k], p = in.out.p[k];
        brute -= b * std::log(p) + (1 - b) * std::log(1 - p);
      }
    }
    for (std::size_t m = 0; m < M; ++m) {
      brute -= in.t.event_indicator[m] * std::log(in.out.lambda[m]) - in.out.lambda[m] * in.t.event_time[m];
    }
    const double got = combined_loss(task_losses(in.out, in.t), {1, 1, 1});
    ASSERT_NEAR(got, brute, 1e-12 * std::max(1.0, std::fabs(brute)));
  }
}

TEST(TaskLosses, DimensionMismatch) {
  Rng rng(4);
  auto in = random_instance(rng, 2, 2, 1);
  in.t.continuous.push_back(0.0);
  EXPECT_THROW(task_losses(in.out, in.t), ContractViolation);
}

// Graph losses: value equals the plain version, adjoints equal central
// differences, and masked targets do not influence anything.
struct GraphLossRun {
  double value;
  std::vector<double> dmu, dsigma, dp, dlambda;
};

GraphLossRun run_graph(const Instance& in) {
  Graph g;
  const auto mu = g.constant(std::span<const double>(in.out.mu));
  const auto sigma = g.constant(std::span<const double>(in.out.sigma));
  const auto p = g.constant(std::span<const double>(in.out.p));
  const auto lambda = g.constant(std::span<const double>(in.out.lambda));
  const auto lc = graph_loss::gaussian(g, mu, sigma, in.t.continuous, in.t.continuous_mask);
  const auto lb = graph_loss::bernoulli(g, p, in.t.binary, in.t.binary_mask);
  const auto lt = graph_loss::exponential(g, lambda, in.t.event_time, in.t.event_indicator);
  const auto total = g.add(g.add(lc, lb), lt);
  g.backward(total);
  auto vec = [&](Graph::Node n) {
    const auto v = g.grad(n).values();
    return std::vector<double>(v.begin(), v.end());
  };
  return {g.scalar(total), vec(mu), vec(sigma), vec(p), vec(lambda)};
}

TEST(GraphLoss, ValueAndAdjointsMatch) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto in = random_instance(rng, 3, 4, 2);
    const auto run = run_graph(in);
    EXPECT_NEAR(run.value, combined_loss(task_losses(in.out, in.t), {1, 1, 1}), 1e-12);
    const double h = 1e-6;
    auto fd = [&](std::vector<double>& v, std::size_t k) {
      const double saved = v[k];
      v[k] = saved + h;
      const double up = combined_loss(task_losses(in.out, in.t), {1, 1, 1});
      v[k] = saved - h;
      const double down = combined_loss(task_losses(in.out, in.t), {1, 1, 1});
      v[k] = saved;
      return (up - down) / (2 * h);
    };
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(run.dmu[k], fd(in.out.mu, k), 1e-6);
      EXPECT_NEAR(run.dsigma[k], fd(in.out.sigma, k), 1e-6);
    }
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(run.dp[k], fd(in.out.p, k), 1e-5);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(run.dlambda[k], fd(in.out.lambda, k), 1e-6);
  }
}

TEST(GraphLoss, MaskedTargetsAreInert) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto in = random_instance(rng, 4, 5, 1);
    in.t.continuous_mask[0] = 0;
    in.t.binary_mask[0] = 0;
    const auto before = run_graph(in);
    in.t.continuous[0] = std::numeric_limits<double>::quiet_NaN();
    in.t.binary[0] = 7.0;
    const auto after = run_graph(in);
    EXPECT_EQ(std::bit_cast<std::uint64_t>(before.value), std::bit_cast<std::uint64_t>(after.value));
    EXPECT_EQ(before.dmu, after.dmu);
    EXPECT_EQ(before.dsigma, after.dsigma);
    EXPECT_EQ(before.dp, after.dp);
    EXPECT_EQ(before.dlambda, after.dlambda);
    EXPECT_EQ(before.dmu[0], 0.0);
    EXPECT_EQ(before.dp[0], 0.0);
  }
}

TEST(Losses, FiniteOverContractDomain) {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    ASSERT_TRUE(std::isfinite(gaussian_nll(rng.normal(0, 100), rng.normal(0, 100), std::exp(rng.uniform(-13, 5)))));
    ASSERT_TRUE(std::isfinite(bernoulli_nll(rng.bernoulli(0.5) ? 1 : 0, rng.uniform())));
    ASSERT_TRUE(std::isfinite(exponential_nll(rng.uniform(0, 50), rng.bernoulli(0.5) ? 1 : 0,
                                              std::exp(rng.uniform(-13, 5)))));
  }
}

}  // namespace
}  // namespace datlas
