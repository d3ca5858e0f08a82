#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "datlas/cohort.hpp"
#include "datlas/errors.hpp"
#include "datlas/inference.hpp"
#include "datlas/training.hpp"

namespace datlas {

inline double mse(std::span<const double> predictions, std::span<const double> truths, std::span<const double> mask) {
  DATLAS_REQUIRE(predictions.size() == truths.size() && mask.size() == truths.size(), "mse: length mismatch");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double r = predictions[i] - truths[i];
    s += r * r;
    ++n;
  }
  if (n == 0) throw UndefinedMetric("mse: no observed pairs");
  return s / static_cast<double>(n);
}

inline double mse(std::span<const double> predictions, std::span<const double> truths) {
  return mse(predictions, truths, std::vector<double>(truths.size(), 1.0));
}

// Mann-Whitney statistic with ties counted as one half, via midranks.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  DATLAS_REQUIRE(scores.size() == labels.size(), "auroc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positives = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) {
        positives += 1.0;
        rank_sum += midrank;
      }
    i = j;
  }
  const double negatives = static_cast<double>(n) - positives;
  if (positives == 0.0 || negatives == 0.0) throw UndefinedMetric("auroc: needs both classes");
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

// Average precision: sum over distinct descending thresholds of
// (recall gain) x precision, with tied scores forming one threshold.
inline double auprc(std::span<const double> scores, std::span<const int> labels) {
  DATLAS_REQUIRE(scores.size() == labels.size(), "auprc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double total_pos = 0.0;
  for (int l : labels) total_pos += l == 1 ? 1.0 : 0.0;
  if (total_pos == 0.0) throw UndefinedMetric("auprc: needs at least one positive");
  double tp = 0.0, seen = 0.0, area = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) tp += labels[order[k]] == 1 ? 1.0 : 0.0;
    seen += static_cast<double>(j - i);
    const double recall = tp / total_pos;
    area += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return area;
}

// ---------------------------------------------------------------------------

enum class VariableKind { continuous, binary, event };

inline const char* to_string(VariableKind k) {
  switch (k) {
    case VariableKind::continuous: return "continuous";
    case VariableKind::binary: return "binary";
    case VariableKind::event: return "event";
  }
  return "?";
}

struct MetricCell {
  std::string variable;
  VariableKind kind = VariableKind::continuous;
  std::size_t horizon = 0;
  std::string metric;  // mse, auroc, auprc
  double mean = 0.0;
  double sd = 0.0;     // across repetitions
  std::size_t count = 0;  // evaluated pairs
};

// Cells that are undefined on the data are absent.
struct MetricReport {
  std::size_t repetitions = 0;
  std::size_t tau_max = 0;
  std::vector<MetricCell> cells;

  const MetricCell* find(const std::string& variable, std::size_t horizon, const std::string& metric) const {
    for (const auto& c : cells)
      if (c.variable == variable && c.horizon == horizon && c.metric == metric) return &c;
    return nullptr;
  }
};

struct EvalConfig {
  std::size_t tau_max = 5;
  std::size_t samples = kDefaultMcSamples;
  std::size_t repetitions = 3;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// Clamped to the value range so repeated identical values come back exactly.
inline double mean_of(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return std::clamp(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()), *lo, *hi);
}

// Sample standard deviation; zero for a single value or identical values.
inline double sd_of(const std::vector<double>& v) {
  if (v.size() < 2 || std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; })) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Mortality label at horizon tau from anchor: 1 if the event happens within
// tau, 0 if the patient is still under follow-up at tau, absent otherwise.
inline std::optional<int> event_label(const PatientTrajectory& p, std::size_t event, double anchor, double tau) {
  const auto e = event_target(p, event, anchor);
  if (e.time <= tau) return e.observed ? std::optional<int>(1) : std::nullopt;
  return 0;
}

// Generator-side risk of event m within tau of an integer anchor, from the
// latent hazard grid. Used as the Bayes score when judging fitted models.
inline double oracle_event_risk(const PatientTrajectory& p, std::size_t event, std::size_t anchor, std::size_t tau) {
  DATLAS_REQUIRE(!p.latent.empty(), "oracle_event_risk: patient has no latent record");
  const std::size_t M = p.latent.hazard.size() / p.latent.grid_steps;
  DATLAS_REQUIRE(event < M, "oracle_event_risk: unknown event");
  double cumulative = 0.0;
  for (std::size_t t = anchor; t < anchor + tau; ++t)
    cumulative += p.latent.hazard[std::min(t, p.latent.grid_steps - 1) * M + event];
  return 1.0 - std::exp(-cumulative);
}

// AUROC and AUPRC of the oracle risk on the anchors and labels used by
// evaluate_model. Undefined horizons are left empty.
struct OracleScores {
  std::vector<std::optional<double>> auroc, auprc;  // per horizon
};

inline OracleScores oracle_event_scores(const Cohort& test, std::size_t event, std::size_t tau_max) {
  OracleScores out{std::vector<std::optional<double>>(tau_max), std::vector<std::optional<double>>(tau_max)};
  for (std::size_t k = 1; k <= tau_max; ++k) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& p : test.patients)
      for (std::size_t t = 1; t < p.steps; ++t) {
        const auto label = event_label(p, event, static_cast<double>(t), static_cast<double>(k));
        if (!label) continue;
        scores.push_back(oracle_event_risk(p, event, t, k));
        labels.push_back(*label);
      }
    try {
      out.auroc[k - 1] = auroc(scores, labels);
      out.auprc[k - 1] = auprc(scores, labels);
    } catch (const UndefinedMetric&) {
    }
  }
  return out;
}

// Predictions for every test anchor (1..last step) and horizon 1..tau_max.
// Collected per repetition so metrics can be summarised across them.
struct EvalPairs {
  // [variable][horizon-1] -> (prediction, truth)
  std::vector<std::vector<std::vector<double>>> pred, truth;
};

inline MetricReport evaluate_model(const ModelParams& params, const Cohort& test, const EvalConfig& ec) {
  DATLAS_REQUIRE(!test.patients.empty(), "evaluate_model: empty test cohort");
  DATLAS_REQUIRE(ec.tau_max >= 1 && ec.repetitions >= 1 && ec.samples >= 1, "evaluate_model: invalid settings");
  const Schema& s = test.schema;
  const auto stats = stats_from_scaling(s, params.scaling);
  const auto inputs = impute_for_input(test, stats);
  const std::size_t C = s.continuous().size(), D = s.binary().size(), M = s.events().size();
  const std::size_t nv = C + D + M;
  const std::size_t width = s.input_columns().size();

  struct Anchor {
    std::size_t patient, step;
  };
  std::vector<Anchor> anchors;
  for (std::size_t i = 0; i < test.patients.size(); ++i)
    for (std::size_t t = 1; t < test.patients[i].steps; ++t) anchors.push_back({i, t});

  std::vector<double> taus;
  for (std::size_t k = 1; k <= ec.tau_max; ++k) taus.push_back(static_cast<double>(k));

  // per repetition, per variable, per horizon: metric values
  std::vector<std::vector<std::vector<std::optional<double>>>> rep_values(
      ec.repetitions, std::vector<std::vector<std::optional<double>>>(nv * 3, std::vector<std::optional<double>>(ec.tau_max)));
  std::vector<std::vector<std::size_t>> counts(nv, std::vector<std::size_t>(ec.tau_max, 0));

  for (std::size_t rep = 0; rep < ec.repetitions; ++rep) {
    const std::uint64_t rep_seed = Rng(ec.seed, rep).next_u64();
    std::vector<std::vector<HorizonForecast>> forecasts(anchors.size());
    parallel_for(anchors.size(), ec.threads, [&](std::size_t a) {
      const auto& an = anchors[a];
      const auto history = std::span<const double>(inputs[an.patient]).first((an.step + 1) * width);
      const auto samples = mc_sample_horizons(params, history, taus, ec.samples, Rng(rep_seed, a).next_u64());
      for (std::size_t k = 0; k < taus.size(); ++k) forecasts[a].push_back(summarize_samples(samples[k], taus[k]));
    });
    for (std::size_t k = 0; k < ec.tau_max; ++k) {
      for (std::size_t v = 0; v < nv; ++v) {
        std::vector<double> pred, truth;
        std::vector<int> labels;
        for (std::size_t a = 0; a < anchors.size(); ++a) {
          const auto& p = test.patients[anchors[a].patient];
          const std::size_t target = anchors[a].step + k + 1;
          const auto& f = forecasts[a][k];
          if (v < C + D) {
            const std::size_t var = v < C ? s.continuous()[v] : s.binary()[v - C];
            if (target >= p.steps || !is_observed(s, p, target, var)) continue;
            pred.push_back(v < C ? f.mu[v].mean : f.p[v - C].mean);
            truth.push_back(value_at(s, p, target, var));
            labels.push_back(truth.back() == 1.0 ? 1 : 0);
          } else {
            const auto label = event_label(p, v - C - D, static_cast<double>(anchors[a].step), taus[k]);
            if (!label) continue;
            pred.push_back(f.risk[v - C - D]);
            labels.push_back(*label);
          }
        }
        counts[v][k] = pred.size();
        auto& cells = rep_values[rep];
        auto attempt = [&](std::size_t slot, auto metric) {
          try {
            cells[v * 3 + slot][k] = metric();
          } catch (const UndefinedMetric&) {
          }
        };
        if (v < C) {
          attempt(0, [&] { return mse(pred, truth); });
        } else {
          attempt(1, [&] { return auroc(pred, labels); });
          attempt(2, [&] { return auprc(pred, labels); });
        }
      }
    }
  }

  MetricReport report;
  report.repetitions = ec.repetitions;
  report.tau_max = ec.tau_max;
  const char* names[3] = {"mse", "auroc", "auprc"};
  for (std::size_t v = 0; v < nv; ++v) {
    const std::size_t var = v < C ? s.continuous()[v] : (v < C + D ? s.binary()[v - C] : s.events()[v - C - D]);
    const VariableKind kind = v < C ? VariableKind::continuous : (v < C + D ? VariableKind::binary : VariableKind::event);
    for (std::size_t slot = 0; slot < 3; ++slot)
      for (std::size_t k = 0; k < ec.tau_max; ++k) {
        std::vector<double> vals;
        for (std::size_t rep = 0; rep < ec.repetitions; ++rep)
          if (rep_values[rep][v * 3 + slot][k]) vals.push_back(*rep_values[rep][v * 3 + slot][k]);
        if (vals.size() != ec.repetitions) continue;
        report.cells.push_back({s[var].name, kind, k + 1, names[slot], mean_of(vals), sd_of(vals), counts[v][k]});
      }
  }
  return report;
}

// Mean and SD across variables of one kind, per horizon and metric.
struct GroupSummary {
  VariableKind kind = VariableKind::continuous;
  std::size_t horizon = 0;
  std::string metric;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t variables = 0;
};

inline std::vector<GroupSummary> group_summary(const MetricReport& r) {
  std::map<std::tuple<int, std::size_t, std::string>, std::vector<double>> groups;
  for (const auto& c : r.cells) groups[{static_cast<int>(c.kind), c.horizon, c.metric}].push_back(c.mean);
  std::vector<GroupSummary> out;
  for (const auto& [key, vals] : groups)
    out.push_back({static_cast<VariableKind>(std::get<0>(key)), std::get<1>(key), std::get<2>(key), mean_of(vals),
                   sd_of(vals), vals.size()});
  return out;
}

// ---------------------------------------------------------------------------

struct MissingnessRow {
  double gamma = 0.0;
  TrainMode mode = TrainMode::multitask;
  // Continuous MSE in training-variance units, averaged over variables and
  // horizons, so variables on different scales weigh equally.
  double mse = 0.0;
  double binary_auroc = 0.0;     // mean over defined binary cells
  double mortality_auroc = 0.0;  // mean over defined horizons
};

inline MissingnessRow summarize_for_missingness(const MetricReport& r, const Schema& s, const VariableStats& train,
                                                double gamma, TrainMode mode) {
  MissingnessRow row{gamma, mode, 0.0, 0.0, 0.0};
  std::vector<double> m, b, e;
  for (const auto& c : r.cells) {
    if (c.kind == VariableKind::continuous && c.metric == "mse") {
      const double sd = train.sd[*s.find(c.variable)];
      m.push_back(c.mean / (sd * sd));
    } else if (c.kind == VariableKind::binary && c.metric == "auroc") {
      b.push_back(c.mean);
    } else if (c.kind == VariableKind::event && c.metric == "auroc") {
      e.push_back(c.mean);
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  row.mse = m.empty() ? nan : mean_of(m);
  row.binary_auroc = b.empty() ? nan : mean_of(b);
  row.mortality_auroc = e.empty() ? nan : mean_of(e);
  return row;
}

// Splits once, thins training and validation patients at each gamma, trains
// one model per mode, and scores both on the untouched test patients.
inline std::vector<MissingnessRow> missingness_experiment(const Cohort& cohort, const std::vector<double>& gammas,
                                                          const TrainConfig& base, const EvalConfig& ec) {
  for (double g : gammas) DATLAS_REQUIRE(g >= 0.0 && g < 1.0, "missingness_experiment: gamma must lie in [0, 1)");
  const auto split = split_cohort(cohort, base.seed);
  std::vector<MissingnessRow> rows;
  for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
    const std::uint64_t thin_seed = Rng(base.seed, 100 + gi).next_u64();
    CohortSplit thinned{apply_missingness(split.train, gammas[gi], thin_seed),
                        apply_missingness(split.validation, gammas[gi], thin_seed ^ 0x9e3779b97f4a7c15ULL), split.test};
    for (TrainMode mode : {TrainMode::multitask, TrainMode::multioutput}) {
      TrainConfig tc = base;
      tc.mode = mode;
      const auto result = fit(thinned, tc);
      const auto report = evaluate_model(result.params, thinned.test, ec);
      rows.push_back(summarize_for_missingness(report, cohort.schema, compute_stats(thinned.train), gammas[gi], mode));
    }
  }
  return rows;
}

}  // namespace datlas
