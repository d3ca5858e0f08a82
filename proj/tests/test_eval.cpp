#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "datlas/eval.hpp"

namespace datlas {
namespace {

double auroc_by_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double hits = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      hits += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return hits / pairs;
}

// Every distinct score is a threshold; predicted positive means score >= it.
double auprc_by_thresholds(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double positives = 0.0;
  for (int l : y) positives += l;
  double area = 0.0, previous = 0.0;
  for (double th : thresholds) {
    double tp = 0.0, predicted = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= th) {
        predicted += 1.0;
        tp += y[i];
      }
    const double recall = tp / positives;
    area += (recall - previous) * tp / predicted;
    previous = recall;
  }
  return area;
}

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Both classes present; about half the instances have heavy ties.
Instance random_instance(Rng& rng) {
  Instance in;
  const std::size_t n = 2 + rng.below(49);
  const bool ties = rng.bernoulli(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = rng.uniform();
    in.scores.push_back(ties ? std::floor(s * 5.0) / 5.0 : s);
    in.labels.push_back(rng.bernoulli(0.3) ? 1 : 0);
  }
  in.labels[0] = 1;
  in.labels[1] = 0;
  return in;
}

TEST(Mse, Examples) {
  const std::vector<double> a{1, 2}, z{0, 0};
  EXPECT_EQ(mse(a, a), 0.0);
  EXPECT_EQ(mse(a, z), 2.5);
  const std::vector<double> b{1, 9}, mask{1, 0};
  EXPECT_EQ(mse(b, z, mask), 1.0);
  const std::vector<double> none{0, 0};
  EXPECT_THROW(mse(b, z, none), UndefinedMetric);
  EXPECT_THROW(mse(std::vector<double>{1}, z), ContractViolation);
}

TEST(Mse, NonNegativeAndZeroOnlyWhenEqual) {
  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> p(10), t(10), m(10);
    for (std::size_t i = 0; i < 10; ++i) {
      p[i] = rng.normal();
      t[i] = rng.bernoulli(0.5) ? p[i] : rng.normal();
      m[i] = rng.bernoulli(0.7) ? 1.0 : 0.0;
    }
    m[0] = 1.0;
    bool equal = true;
    for (std::size_t i = 0; i < 10; ++i) equal = equal && (m[i] == 0.0 || p[i] == t[i]);
    const double v = mse(p, t, m);
    EXPECT_GE(v, 0.0);
    EXPECT_EQ(v == 0.0, equal);
  }
}

TEST(Auroc, Examples) {
  EXPECT_EQ(auroc(std::vector<double>{0.9, 0.8, 0.1}, std::vector<int>{1, 0, 0}), 1.0);
  EXPECT_EQ(auroc(std::vector<double>{0.1, 0.8, 0.9}, std::vector<int>{1, 0, 0}), 0.0);
  EXPECT_EQ(auroc(std::vector<double>{0.4, 0.4, 0.4, 0.4}, std::vector<int>{1, 0, 1, 0}), 0.5);
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedMetric);
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), UndefinedMetric);
}

TEST(Auprc, Examples) {
  EXPECT_EQ(auprc(std::vector<double>{0.9, 0.8, 0.3, 0.1}, std::vector<int>{1, 1, 0, 0}), 1.0);
  for (std::size_t n : {2u, 5u, 17u}) {
    std::vector<double> s;
    std::vector<int> y(n, 0);
    for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<double>(n - i));
    y[n - 1] = 1;
    EXPECT_NEAR(auprc(s, y), 1.0 / static_cast<double>(n), 1e-15);
  }
  // All tied: one threshold, precision = prevalence.
  EXPECT_NEAR(auprc(std::vector<double>{1, 1, 1, 1}, std::vector<int>{1, 0, 0, 0}), 0.25, 1e-15);
  EXPECT_THROW(auprc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), UndefinedMetric);
}

TEST(CurveMetrics, MatchBruteForceOracles) {
  Rng rng(2024);
  for (int rep = 0; rep < 100; ++rep) {
    const auto in = random_instance(rng);
    EXPECT_NEAR(auroc(in.scores, in.labels), auroc_by_pairs(in.scores, in.labels), 1e-12);
    EXPECT_NEAR(auprc(in.scores, in.labels), auprc_by_thresholds(in.scores, in.labels), 1e-12);
  }
}

TEST(CurveMetrics, RangesAndInvariances) {
  Rng rng(77);
  for (int rep = 0; rep < 100; ++rep) {
    auto in = random_instance(rng);
    const double a = auroc(in.scores, in.labels);
    const double p = auprc(in.scores, in.labels);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    std::vector<double> ex, af;
    for (double s : in.scores) {
      ex.push_back(std::exp(s));
      af.push_back(3.0 * s - 7.0);
    }
    EXPECT_NEAR(auroc(ex, in.labels), a, 1e-12);
    EXPECT_NEAR(auroc(af, in.labels), a, 1e-12);
    std::set<double> distinct(in.scores.begin(), in.scores.end());
    if (distinct.size() == in.scores.size()) {
      auto flipped = in.labels;
      for (int& l : flipped) l = 1 - l;
      EXPECT_NEAR(a + auroc(in.scores, flipped), 1.0, 1e-12);
    }
  }
}

TEST(Summary, MeanAndSampleSd) {
  EXPECT_EQ(mean_of({1, 2, 3}), 2.0);
  EXPECT_EQ(sd_of({1, 2, 3}), 1.0);
  EXPECT_EQ(sd_of({4}), 0.0);
}

TEST(EventLabel, WithinFollowUpOrAbsent) {
  PatientTrajectory p;
  p.steps = 6;
  p.exit_time = 5.4;
  p.occurrences = {{5.4}, {}};
  EXPECT_EQ(event_label(p, 0, 2.0, 5.0), 1);
  EXPECT_EQ(event_label(p, 0, 2.0, 3.0), 0);
  EXPECT_EQ(event_label(p, 1, 2.0, 3.0), 0);
  EXPECT_EQ(event_label(p, 1, 2.0, 4.0), std::nullopt);
}

struct Fixture {
  Cohort test;
  ModelParams params;
};

Fixture untrained(double dropout) {
  auto cohort = generate_cohort(high_risk_preset(), 120, 8, 4);
  auto net = cohort.schema.network_config();
  net.dropout_rate = dropout;
  Rng rng(5);
  auto params = init_params(net, rng);
  const auto stats = compute_stats(cohort);
  params.scaling = standardization_from(cohort, stats);
  return {std::move(cohort), std::move(params)};
}

TEST(EvaluateModel, NoDropoutGivesZeroSpread) {
  const auto f = untrained(0.0);
  EvalConfig ec;
  ec.samples = 5;
  ec.repetitions = 3;
  const auto r = evaluate_model(f.params, f.test, ec);
  ASSERT_FALSE(r.cells.empty());
  for (const auto& c : r.cells) EXPECT_EQ(c.sd, 0.0) << c.variable << " " << c.horizon << " " << c.metric;
  ec.repetitions = 1;
  for (const auto& c : evaluate_model(f.params, f.test, ec).cells) EXPECT_EQ(c.sd, 0.0);
}

TEST(EvaluateModel, MortalityRowsPerHorizonAndDeterminism) {
  const auto f = untrained(0.3);
  EvalConfig ec;
  ec.samples = 20;
  ec.repetitions = 2;
  ec.seed = 8;
  const auto r = evaluate_model(f.params, f.test, ec);
  for (std::size_t k = 1; k <= 5; ++k) {
    const auto* a = r.find("death", k, "auroc");
    const auto* p = r.find("death", k, "auprc");
    ASSERT_NE(a, nullptr) << k;
    ASSERT_NE(p, nullptr) << k;
    EXPECT_GE(a->mean, 0.0);
    EXPECT_LE(a->mean, 1.0);
    EXPECT_GE(a->sd, 0.0);
    ASSERT_NE(r.find("fev1", k, "mse"), nullptr);
  }
  EXPECT_EQ(r.find("fev1", 1, "auroc"), nullptr);
  ec.threads = 3;
  const auto again = evaluate_model(f.params, f.test, ec);
  ASSERT_EQ(again.cells.size(), r.cells.size());
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    EXPECT_EQ(again.cells[i].mean, r.cells[i].mean);
    EXPECT_EQ(again.cells[i].sd, r.cells[i].sd);
  }
  const auto groups = group_summary(r);
  for (const auto& g : groups) EXPECT_GE(g.sd, 0.0);
  EXPECT_TRUE(std::any_of(groups.begin(), groups.end(), [](const GroupSummary& g) {
    return g.kind == VariableKind::binary && g.metric == "auprc" && g.variables == 6;
  }));
}

TEST(EvaluateModel, UndefinedCellsAreAbsent) {
  auto truth = high_risk_preset();
  truth.events[0].baseline_hazard = 1e-9;
  truth.events[0].association = 0.0;
  for (double& b : truth.events[0].covariate_effects) b = 0.0;
  const auto cohort = generate_cohort(truth, 30, 6, 1);
  auto net = cohort.schema.network_config();
  Rng rng(1);
  auto params = init_params(net, rng);
  params.scaling = standardization_from(cohort, compute_stats(cohort));
  EvalConfig ec;
  ec.samples = 3;
  ec.repetitions = 1;
  const auto r = evaluate_model(params, cohort, ec);
  EXPECT_EQ(r.find("death", 1, "auroc"), nullptr);
  EXPECT_NE(r.find("fev1", 1, "mse"), nullptr);
}

TEST(OracleRisk, SumsTheHazardGrid) {
  PatientTrajectory p;
  p.latent.grid_steps = 4;
  p.latent.hazard = {0.1, 0.2, 0.3, 0.4};
  EXPECT_NEAR(oracle_event_risk(p, 0, 1, 2), 1.0 - std::exp(-0.5), 1e-15);
  EXPECT_NEAR(oracle_event_risk(p, 0, 3, 2), 1.0 - std::exp(-0.8), 1e-15);
}

// The generator's own hazard is the Bayes score for mortality, so a fitted
// model should not beat it.
TEST(OracleRisk, DominatesFittedModels) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto split = split_cohort(generate_cohort(high_risk_preset(), 300, 8, seed), seed);
    TrainConfig tc;
    tc.minibatch_size = 64;
    tc.learning_rate = 5e-3;
    tc.max_epochs = 4;
    tc.seed = seed;
    const auto fitted = fit(split, tc);
    EvalConfig ec;
    ec.samples = 30;
    ec.repetitions = 1;
    ec.tau_max = 1;
    const auto r = evaluate_model(fitted.params, split.test, ec);
    const auto oracle = oracle_event_scores(split.test, 0, 1);
    ASSERT_TRUE(oracle.auroc[0].has_value());
    ASSERT_NE(r.find("death", 1, "auroc"), nullptr);
    EXPECT_GE(*oracle.auroc[0], r.find("death", 1, "auroc")->mean) << "seed " << seed;
  }
}

TEST(Missingness, PairedRowsPerGamma) {
  const auto cohort = generate_cohort(cf_like_preset(), 60, 6, 2);
  TrainConfig tc;
  tc.minibatch_size = 32;
  tc.max_epochs = 1;
  tc.rho_max = 4;
  tc.seed = 3;
  EvalConfig ec;
  ec.samples = 5;
  ec.repetitions = 1;
  ec.tau_max = 2;
  const auto rows = missingness_experiment(cohort, {0.0, 0.5}, tc, ec);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].gamma, 0.0);
  EXPECT_EQ(rows[0].mode, TrainMode::multitask);
  EXPECT_EQ(rows[1].mode, TrainMode::multioutput);
  EXPECT_EQ(rows[3].gamma, 0.5);
  for (const auto& r : rows) {
    EXPECT_GT(r.mse, 0.0);
    EXPECT_GE(r.binary_auroc, 0.0);
    EXPECT_LE(r.binary_auroc, 1.0);
  }
  EXPECT_THROW(missingness_experiment(cohort, {1.0}, tc, ec), ContractViolation);
}

}  // namespace
}  // namespace datlas
