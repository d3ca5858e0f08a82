#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "datlas/inference.hpp"

namespace datlas {
namespace {

DistributionParams with_lambda(std::vector<double> lambda) {
  DistributionParams d;
  d.lambda = std::move(lambda);
  return d;
}

NetworkConfig small_config(double dropout) {
  NetworkConfig c;
  c.num_covariates = 2;
  c.num_continuous = 2;
  c.num_binary = 2;
  c.num_events = 1;
  c.state_size = 5;
  c.dropout_rate = dropout;
  return c;
}

ModelParams small_params(double dropout, std::uint64_t seed = 1) {
  Rng rng(seed);
  return init_params(small_config(dropout), rng);
}

std::vector<double> history(const NetworkConfig& c, std::size_t steps, std::uint64_t seed = 2) {
  Rng rng(seed);
  std::vector<double> h(c.input_width() * steps);
  for (double& v : h) v = rng.normal();
  return h;
}

TEST(Survival, ClosedForms) {
  const std::vector<DistributionParams> one{with_lambda({0.2})};
  const double t5[] = {5.0};
  EXPECT_NEAR(survival_curve(one, t5)[0][0], 0.367879, 1e-6);
  EXPECT_NEAR(event_risk(one, 5.0)[0], 0.632121, 1e-6);
  const std::vector<DistributionParams> two{with_lambda({0.1}), with_lambda({0.3})};
  const double t2[] = {2.0};
  EXPECT_NEAR(survival_curve(two, t2)[0][0], (std::exp(-0.2) + std::exp(-0.6)) / 2, 1e-15);
  EXPECT_NEAR(survival_curve(two, t2)[0][0], 0.683771, 1e-6);
}

TEST(Survival, StartsAtOneAndNeverIncreases) {
  Rng rng(4);
  const double taus[] = {0, 0.5, 1, 2, 3, 4, 5, 10};
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<DistributionParams> s;
    const std::size_t J = 1 + rng.below(20);
    for (std::size_t j = 0; j < J; ++j) s.push_back(with_lambda({rng.exponential() * 2, rng.uniform(1e-6, 5.0)}));
    const auto S = survival_curve(s, taus);
    for (const auto& curve : S) {
      EXPECT_EQ(curve[0], 1.0);
      for (std::size_t k = 1; k < curve.size(); ++k) {
        EXPECT_LE(curve[k], curve[k - 1]);
        EXPECT_GE(curve[k], 0.0);
      }
    }
    const auto risk = event_risk(s, 3.0);
    EXPECT_NEAR(risk[0], 1.0 - S[0][4], 1e-12);
  }
}

TEST(Survival, RejectsNonPositiveHazard) {
  const std::vector<DistributionParams> s{with_lambda({0.0})};
  const double t[] = {1.0};
  EXPECT_THROW(survival_curve(s, t), ContractViolation);
}

TEST(Survival, MeanHazardSwitchIsNeverAbove) {
  const std::vector<DistributionParams> s{with_lambda({0.1}), with_lambda({0.9})};
  const double t[] = {2.0};
  const double avg = survival_curve(s, t)[0][0];
  const double plug = survival_curve(s, t, SurvivalAverage::mean_hazard)[0][0];
  EXPECT_NEAR(plug, std::exp(-1.0), 1e-15);
  EXPECT_GT(avg, plug);
}

TEST(Expectation, MeansOfSamples) {
  DistributionParams a{{1.0, 5.0}, {1.0, 1.0}, {0.2}, {0.1}};
  DistributionParams b{{3.0, 7.0}, {1.0, 1.0}, {0.4}, {0.1}};
  const std::vector<DistributionParams> single{a};
  EXPECT_EQ(expected_longitudinal(single).mu, a.mu);
  EXPECT_EQ(expected_longitudinal(single).p, a.p);
  const std::vector<DistributionParams> pair{a, b};
  const auto e = expected_longitudinal(pair);
  EXPECT_EQ(e.mu, (std::vector<double>{2.0, 6.0}));
  EXPECT_NEAR(e.p[0], 0.3, 1e-15);
}

TEST(Expectation, MatchesIndependentSummation) {
  const auto p = small_params(0.3);
  const auto h = history(p.config, 4);
  const auto samples = mc_sample(p, h, 2.0, 300, 9);
  const auto e = expected_longitudinal(samples);
  for (std::size_t k = 0; k < e.mu.size(); ++k) {
    std::vector<double> v;
    for (const auto& s : samples) v.push_back(s.mu[k]);
    std::sort(v.begin(), v.end());
    const long double oracle = std::accumulate(v.rbegin(), v.rend(), 0.0L) / 300.0L;
    EXPECT_NEAR(e.mu[k], static_cast<double>(oracle), 1e-12 * std::max(1.0, std::fabs(e.mu[k])));
  }
}

TEST(McSample, NoDropoutGivesIdenticalSamples) {
  const auto p = small_params(0.0);
  const auto h = history(p.config, 3);
  const auto s = mc_sample(p, h, 1.0, 300, 5);
  for (const auto& d : s) {
    EXPECT_EQ(d.mu, s[0].mu);
    EXPECT_EQ(d.p, s[0].p);
    EXPECT_EQ(d.lambda, s[0].lambda);
  }
  EXPECT_EQ(s[0].mu, forward(p, h, 1.0).mu);
}

TEST(McSample, SeedDeterminesSamplesForAnyThreadCount) {
  const auto p = small_params(0.3);
  const auto h = history(p.config, 3);
  const auto a = mc_sample(p, h, 2.0, 50, 11, 1);
  const auto b = mc_sample(p, h, 2.0, 50, 11, 4);
  const auto c = mc_sample(p, h, 2.0, 50, 12, 1);
  bool differs = false;
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a[j].mu, b[j].mu);
    EXPECT_EQ(a[j].lambda, b[j].lambda);
    differs = differs || a[j].mu != c[j].mu;
  }
  EXPECT_TRUE(differs);
  EXPECT_THROW(mc_sample(p, h, 2.0, 0, 11), ContractViolation);
}

TEST(McSample, HorizonBatchMatchesSingleHorizonCalls) {
  const auto p = small_params(0.3);
  const auto h = history(p.config, 3);
  const double taus[] = {1.0, 3.0};
  const auto batch = mc_sample_horizons(p, h, taus, 20, 8);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto single = mc_sample(p, h, taus[k], 20, 8);
    for (std::size_t j = 0; j < 20; ++j) {
      EXPECT_EQ(batch[k][j].mu, single[j].mu);
      EXPECT_EQ(batch[k][j].lambda, single[j].lambda);
    }
  }
}

TEST(McSample, VarianceOfMeanShrinksLikeOneOverJ) {
  const auto p = small_params(0.4);
  const auto h = history(p.config, 3);
  auto spread = [&](std::size_t J) {
    std::vector<double> means;
    for (std::uint64_t r = 0; r < 60; ++r) means.push_back(expected_longitudinal(mc_sample(p, h, 1.0, J, 1000 + r)).mu[0]);
    const double m = std::accumulate(means.begin(), means.end(), 0.0) / 60.0;
    double v = 0.0;
    for (double x : means) v += (x - m) * (x - m);
    return v / 59.0;
  };
  const double ratio = spread(10) / spread(40);
  EXPECT_GT(ratio, 4.0 / 3.0);
  EXPECT_LT(ratio, 12.0);
}

TEST(Quantile, LinearInterpolationBetweenOrderStatistics) {
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.05), 1.15);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.95), 3.85);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_EQ(quantile({7}, 0.3), 7.0);
  EXPECT_EQ(quantile({1, 2}, 0.0), 1.0);
  EXPECT_EQ(quantile({1, 2}, 1.0), 2.0);
  EXPECT_THROW(quantile({}, 0.5), ContractViolation);
  EXPECT_THROW(quantile({1}, 1.5), ContractViolation);
}

TEST(Forecast, BandsAndRangesHold) {
  const auto p = small_params(0.3);
  const auto h = history(p.config, 4);
  const auto f = forecast(p, h, 5, 200, 3);
  ASSERT_EQ(f.size(), 5u);
  double previous = 1.0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    EXPECT_EQ(f[k].tau, static_cast<double>(k + 1));
    for (const auto& b : f[k].mu) {
      EXPECT_LE(b.lo, b.mean);
      EXPECT_LE(b.mean, b.hi);
    }
    for (const auto& b : f[k].p) {
      EXPECT_GT(b.mean, 0.0);
      EXPECT_LT(b.mean, 1.0);
      EXPECT_LE(b.lo, b.hi);
    }
    EXPECT_LE(f[k].survival[0].mean, previous);
    previous = f[k].survival[0].mean;
    EXPECT_NEAR(f[k].risk[0], 1.0 - f[k].survival[0].mean, 1e-12);
  }
  const auto again = forecast(p, h, 5, 200, 3, 3);
  EXPECT_EQ(again[4].mu[1].hi, f[4].mu[1].hi);
  EXPECT_EQ(again[2].survival[0].mean, f[2].survival[0].mean);
}

TEST(Screening, RowCountAndBandOrder) {
  const auto p = small_params(0.3);
  const auto h = history(p.config, 6);
  const auto rows = screening_profile(p, h, 1, 5, 100, 4);
  ASSERT_EQ(rows.size(), 6u + 5u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].extrapolated, i >= 6);
    EXPECT_LE(rows[i].estimate.lo, rows[i].estimate.mean);
    EXPECT_LE(rows[i].estimate.mean, rows[i].estimate.hi);
  }
  EXPECT_EQ(rows[3].step, 3u);
  EXPECT_EQ(rows[3].tau, 0.0);
  EXPECT_EQ(rows[7].step, 5u);
  EXPECT_EQ(rows[7].tau, 2.0);
  EXPECT_THROW(screening_profile(p, h, 2, 5, 10, 4), ContractViolation);
  EXPECT_THROW(screening_profile(p, std::span<const double>(), 0, 5, 10, 4), ContractViolation);
}

TEST(Screening, NoDropoutCollapsesBands) {
  const auto p = small_params(0.0);
  const auto h = history(p.config, 3);
  for (const auto& r : screening_profile(p, h, 0, 2, 30, 1)) {
    EXPECT_EQ(r.estimate.lo, r.estimate.mean);
    EXPECT_EQ(r.estimate.hi, r.estimate.mean);
  }
}

}  // namespace
}  // namespace datlas
