#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "datlas/cohort.hpp"
#include "datlas/errors.hpp"
#include "datlas/graph.hpp"
#include "datlas/losses.hpp"
#include "datlas/model.hpp"
#include "datlas/optim.hpp"
#include "datlas/parallel.hpp"
#include "datlas/rng.hpp"

namespace datlas {

enum class TrainMode { multitask, multioutput };
enum class Ablation { none, no_task_layers, no_horizon_input, mlp_base };
enum class Task { continuous = 0, binary = 1, survival = 2 };

inline const char* to_string(TrainMode m) { return m == TrainMode::multitask ? "multitask" : "multioutput"; }

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::no_task_layers: return "no-task-layers";
    case Ablation::no_horizon_input: return "no-horizon-input";
    case Ablation::mlp_base: return "mlp-base";
  }
  return "?";
}

inline std::optional<TrainMode> parse_mode(std::string_view s) {
  if (s == "multitask") return TrainMode::multitask;
  if (s == "multioutput") return TrainMode::multioutput;
  return std::nullopt;
}

inline std::optional<Ablation> parse_ablation(std::string_view s) {
  for (Ablation a : {Ablation::none, Ablation::no_task_layers, Ablation::no_horizon_input, Ablation::mlp_base})
    if (s == to_string(a)) return a;
  return std::nullopt;
}

inline std::optional<TemporalKind> parse_temporal(std::string_view s) {
  for (TemporalKind k : {TemporalKind::srn, TemporalKind::lstm, TemporalKind::mlp})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

struct TrainConfig {
  std::size_t minibatch_size = 256;
  double learning_rate = 1e-4;
  double max_grad_norm = 0.5;
  double dropout_rate = 0.3;
  std::size_t state_multiple = 1;  // state size = multiple x input width
  double survival_weight_multiple = 3.0;  // alpha_T = multiple x (C + D)
  std::size_t max_epochs = 50;
  TrainMode mode = TrainMode::multitask;
  std::size_t rho_max = 8;
  std::size_t tau_max = 5;
  TemporalKind temporal = TemporalKind::lstm;
  Ablation ablation = Ablation::none;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const {
    DATLAS_REQUIRE(minibatch_size >= 1, "train config: minibatch_size must be positive");
    DATLAS_REQUIRE(learning_rate >= 0.0 && std::isfinite(learning_rate), "train config: learning_rate must be >= 0");
    DATLAS_REQUIRE(max_grad_norm > 0.0, "train config: max_grad_norm must be positive");
    DATLAS_REQUIRE(dropout_rate >= 0.0 && dropout_rate < 1.0, "train config: dropout_rate must lie in [0, 1)");
    DATLAS_REQUIRE(state_multiple >= 1, "train config: state_multiple must be positive");
    DATLAS_REQUIRE(survival_weight_multiple > 0.0, "train config: survival weight must be positive");
    DATLAS_REQUIRE(max_epochs >= 1, "train config: max_epochs must be positive");
    DATLAS_REQUIRE(rho_max >= 1 && tau_max >= 1, "train config: rho_max and tau_max must be positive");
  }
};

// Architecture variants compared against the full network.
inline NetworkConfig build_ablation(NetworkConfig c, Ablation kind) {
  switch (kind) {
    case Ablation::none: break;
    case Ablation::no_task_layers: c.task_layers = false; break;
    case Ablation::no_horizon_input: c.horizon_input = false; break;
    case Ablation::mlp_base: c.temporal = TemporalKind::mlp; break;
  }
  return c;
}

inline NetworkConfig network_config(const Schema& schema, const TrainConfig& tc) {
  NetworkConfig c = schema.network_config();
  c.state_size = tc.state_multiple * c.input_width();
  c.dropout_rate = tc.dropout_rate;
  c.temporal = tc.temporal;
  c = build_ablation(c, tc.ablation);
  c.validate();
  return c;
}

inline double survival_weight(const NetworkConfig& c, const TrainConfig& tc) {
  return tc.survival_weight_multiple * static_cast<double>(c.longitudinal_width());
}

// Without the horizon input only one-step windows make sense.
inline std::size_t effective_tau_max(const TrainConfig& tc) {
  return tc.ablation == Ablation::no_horizon_input ? 1 : tc.tau_max;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss_continuous = 0.0;  // mean per window over the epoch's minibatches
  double loss_binary = 0.0;
  double loss_survival = 0.0;
  double validation_survival_ll = 0.0;  // mean per validation window
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_validation = -std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  std::vector<Task> sampled_tasks;        // per iteration (multitask)
  std::vector<double> sampled_losses;     // objective value per iteration
  std::vector<double> gradient_norms;     // after clipping, per iteration
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

struct WindowGradient {
  TaskLosses losses;  // unweighted, for reporting
  double objective = 0.0;
};

// Objective of one window on the reverse-mode graph; adds its parameter
// gradient to `grads`. `task` selects the multitask loss; without it the
// full unweighted sum is used.
inline WindowGradient window_gradient(const ModelParams& params, const DropoutMaskSet& masks,
                                      std::span<const double> history, double tau, const TargetBundle& t,
                                      std::optional<Task> task, double alpha_survival, Graph& g,
                                      std::span<Tensor> grads) {
  g.clear();
  GraphOps ops(g, params);
  Network<GraphOps> net(ops, params, masks);
  const auto h = net.encode(history);
  const auto out = net.heads(h, tau);
  Graph::Node loss{};
  if (!task) {
    loss = g.add(g.add(graph_loss::gaussian(g, out.mu, out.sigma, t.continuous, t.continuous_mask),
                       graph_loss::bernoulli(g, out.p, t.binary, t.binary_mask)),
                 graph_loss::exponential(g, out.lambda, t.event_time, t.event_indicator));
  } else if (*task == Task::continuous) {
    loss = graph_loss::gaussian(g, out.mu, out.sigma, t.continuous, t.continuous_mask);
  } else if (*task == Task::binary) {
    loss = graph_loss::bernoulli(g, out.p, t.binary, t.binary_mask);
  } else {
    loss = g.scale(graph_loss::exponential(g, out.lambda, t.event_time, t.event_indicator), alpha_survival);
  }
  WindowGradient r;
  r.objective = g.scalar(loss);
  r.losses = task_losses(net.read(out), t);
  if (std::isfinite(r.objective)) {
    g.backward(loss);
    g.accumulate_parameter_grads(grads);
  }
  return r;
}

// Mean survival log-likelihood over windows with deterministic passes.
inline double validation_survival_ll(const ModelParams& params, const WindowSet& windows, std::size_t threads = 1) {
  DATLAS_REQUIRE(windows.size() > 0, "validation: no windows");
  std::vector<double> ll(windows.size());
  const auto masks = DropoutMaskSet::ones(params.config);
  parallel_for(windows.size(), threads, [&](std::size_t i) {
    const auto& w = windows.windows[i];
    const auto out = forward(params, masks, windows.history(w), static_cast<double>(w.horizon));
    double s = 0.0;
    for (std::size_t m = 0; m < out.lambda.size(); ++m)
      s -= exponential_nll(w.targets.event_time[m], w.targets.event_indicator[m], out.lambda[m]);
    ll[i] = s;
  });
  double total = 0.0;
  for (double v : ll) total += v;
  return total / static_cast<double>(ll.size());
}

// Minibatch training: uniform sampling with replacement, one task loss per
// iteration in multitask mode, clipped Adam updates, per-epoch validation,
// and the best-epoch snapshot returned.
inline TrainResult train(const WindowSet& train_windows, const WindowSet& val_windows, const TrainConfig& tc,
                         const NetworkConfig& net, const Standardization& scaling) {
  tc.validate();
  net.validate();
  DATLAS_REQUIRE(train_windows.size() > 0 && val_windows.size() > 0, "train: window sets must be nonempty");
  DATLAS_REQUIRE(train_windows.input_width == net.input_width(), "train: window width does not match the network");
  const auto start = std::chrono::steady_clock::now();

  Rng init_rng(tc.seed, 1);
  TrainResult result{init_params(net, init_rng), {}};
  ModelParams& params = result.params;
  params.scaling = scaling;
  ModelParams best = params;

  Rng sampler(tc.seed, 2);
  const std::uint64_t dropout_seed = Rng(tc.seed, 3).next_u64();
  const double alpha = survival_weight(net, tc);
  const std::size_t batch = tc.minibatch_size;
  const std::size_t per_epoch = (train_windows.size() + batch - 1) / batch;
  const std::size_t workers = std::min(resolve_threads(tc.threads), batch);

  std::vector<std::vector<Tensor>> window_grads(batch, params.zeros_like());
  std::vector<Graph> graphs(workers);
  std::vector<WindowGradient> parts(batch);
  std::vector<std::size_t> picks(batch);
  std::vector<Tensor> grads = params.zeros_like();
  AdamState adam;

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t it = 0; it < per_epoch; ++it) {
      const std::size_t iteration = result.report.iterations;
      for (auto& p : picks) p = sampler.below(train_windows.size());
      std::optional<Task> task;
      if (tc.mode == TrainMode::multitask) {
        task = static_cast<Task>(sampler.below(3));
        result.report.sampled_tasks.push_back(*task);
      }
      parallel_for(workers, workers, [&](std::size_t w) {
        for (std::size_t b = batch * w / workers; b < batch * (w + 1) / workers; ++b) {
          for (Tensor& t : window_grads[b]) t.fill(0.0);
          Rng drop(dropout_seed, iteration * batch + b);
          const auto masks = DropoutMaskSet::sample(net, drop);
          const auto& win = train_windows.windows[picks[b]];
          parts[b] = window_gradient(params, masks, train_windows.history(win), static_cast<double>(win.horizon),
                                     win.targets, task, alpha, graphs[w], window_grads[b]);
        }
      });
      double objective = 0.0;
      for (Tensor& t : grads) t.fill(0.0);
      for (std::size_t b = 0; b < batch; ++b) {
        objective += parts[b].objective;
        rec.loss_continuous += parts[b].losses.continuous;
        rec.loss_binary += parts[b].losses.binary;
        rec.loss_survival += parts[b].losses.survival;
        for (std::size_t k = 0; k < grads.size(); ++k) {
          auto dst = grads[k].values();
          const auto src = window_grads[b][k].values();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
      }
      ++result.report.iterations;
      if (!std::isfinite(objective)) throw TrainingDiverged("training loss is not finite", iteration + 1);
      clip_global_norm(grads, tc.max_grad_norm);
      const double norm = global_norm(grads);
      if (!std::isfinite(norm)) throw TrainingDiverged("gradient is not finite", iteration + 1);
      result.report.sampled_losses.push_back(objective);
      result.report.gradient_norms.push_back(norm);
      adam_step(params.tensors, grads, adam, tc.learning_rate);
    }
    const double seen = static_cast<double>(per_epoch * batch);
    rec.loss_continuous /= seen;
    rec.loss_binary /= seen;
    rec.loss_survival /= seen;
    rec.validation_survival_ll = validation_survival_ll(params, val_windows, tc.threads);
    if (!std::isfinite(rec.validation_survival_ll))
      throw TrainingDiverged("validation survival log-likelihood is not finite", result.report.iterations);
    if (rec.validation_survival_ll > result.report.best_validation) {
      result.report.best_validation = rec.validation_survival_ll;
      result.report.best_epoch = epoch;
      best = params;
    }
    result.report.epochs.push_back(rec);
  }
  params = std::move(best);
  result.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// Everything derived from the training split before optimisation starts.
struct PreparedData {
  NetworkConfig network;
  VariableStats stats;
  Standardization scaling;
  WindowSet train;
  WindowSet validation;
};

inline PreparedData prepare(const CohortSplit& split, const TrainConfig& tc) {
  tc.validate();
  PreparedData d;
  d.network = network_config(split.train.schema, tc);
  d.stats = compute_stats(split.train);
  d.scaling = standardization_from(split.train, d.stats);
  const WindowSpec spec{tc.rho_max, effective_tau_max(tc), d.network.horizon_input,
                        tc.mode == TrainMode::multioutput};
  d.train = make_windows(split.train, d.stats, spec);
  d.validation = make_windows(split.validation, d.stats, {spec.rho_max, spec.tau_max, spec.horizon_input, false});
  return d;
}

inline TrainResult fit(const CohortSplit& split, const TrainConfig& tc) {
  const auto d = prepare(split, tc);
  return train(d.train, d.validation, tc, d.network, d.scaling);
}

// Candidate values per hyperparameter; defaults are the tuning ranges.
struct SearchSpace {
  std::vector<std::size_t> state_multiple{1, 2, 3, 4, 5};
  std::vector<double> survival_weight_multiple{1, 2, 3, 4, 5};
  std::vector<double> max_grad_norm{0.5, 1.0, 1.5, 2.0};
  std::vector<double> learning_rate{1e-3, 5e-3, 1e-4};
  std::vector<std::size_t> minibatch_size{64, 128, 256};
  std::vector<double> dropout_rate{0.2, 0.3, 0.4, 0.5};
};

struct SearchTrial {
  TrainConfig config;
  double score = -std::numeric_limits<double>::infinity();  // best validation survival log-likelihood
  std::size_t best_epoch = 0;
  bool diverged = false;
};

struct SearchResult {
  SearchTrial best;
  std::vector<SearchTrial> trials;  // in sampling order
};

inline TrainConfig sample_config(const TrainConfig& base, const SearchSpace& space, Rng& rng) {
  auto pick = [&](const auto& v) {
    DATLAS_REQUIRE(!v.empty(), "random_search: empty range");
    return v[rng.below(v.size())];
  };
  TrainConfig c = base;
  c.state_multiple = pick(space.state_multiple);
  c.survival_weight_multiple = pick(space.survival_weight_multiple);
  c.max_grad_norm = pick(space.max_grad_norm);
  c.learning_rate = pick(space.learning_rate);
  c.minibatch_size = pick(space.minibatch_size);
  c.dropout_rate = pick(space.dropout_rate);
  return c;
}

// Every trial trains with base.seed, so re-training the winner with the
// same seed reproduces its score. Ties keep the earlier trial.
inline SearchResult random_search(const CohortSplit& split, const TrainConfig& base, const SearchSpace& space,
                                  std::size_t n_trials, std::uint64_t search_seed) {
  DATLAS_REQUIRE(n_trials >= 1, "random_search: need at least one trial");
  Rng rng(search_seed, 4);
  SearchResult out;
  for (std::size_t i = 0; i < n_trials; ++i) {
    SearchTrial trial;
    trial.config = sample_config(base, space, rng);
    try {
      const auto r = fit(split, trial.config);
      trial.score = r.report.best_validation;
      trial.best_epoch = r.report.best_epoch;
    } catch (const TrainingDiverged&) {
      trial.diverged = true;
    }
    if (i == 0 || trial.score > out.best.score) out.best = trial;
    out.trials.push_back(trial);
  }
  return out;
}

}  // namespace datlas
