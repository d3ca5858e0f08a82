// datlas command-line interface.
//
//   datlas generate  --patients N --steps T --seed S --out DIR [--preset cf-like]
//   datlas train     --data DIR [--mode ...] [--cell ...] [--ablation ...] --out DIR
//   datlas tune      --data DIR --trials 20 --out DIR
//   datlas predict   --data DIR --checkpoint FILE --out DIR
//   datlas screen    --data DIR --checkpoint FILE --patient ID --target VAR --out DIR
//   datlas evaluate  --data DIR --checkpoint FILE --out DIR
//   datlas experiment-missingness --data DIR --gammas 0,0.25,0.5,0.75 --out DIR
//
// Every command also takes --seed, --threads and --config FILE. The config
// file holds `key = value` lines using the long flag names; flags given on
// the command line win. Each run writes config.txt, which is itself a valid
// config file for the same command.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "datlas/datlas.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace datlas;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string text(double v) { return csv::format(v); }
std::string text(const std::string& v) { return v; }
std::string text(bool v) { return v ? "true" : "false"; }
template <class T>
  requires std::is_integral_v<T>
std::string text(T v) {
  return std::to_string(v);
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// A subcommand plus the resolved value of every setting, in declaration
// order, for the config echo.
class Command {
 public:
  Command(CLI::App& app, const std::string& name, const std::string& description)
      : sub_(app.add_subcommand(name, description)), name_(name) {}

  template <class T>
  CLI::Option* option(const std::string& key, T& target, const std::string& help, bool echoed = true) {
    if (echoed) echo_.emplace_back(key, [&target] { return text(target); });
    return sub_->add_option("--" + key, target, help)->capture_default_str();
  }

  CLI::App* app() const { return sub_; }
  const std::string& name() const { return name_; }

  std::string echo() const {
    std::string out = "# datlas " + name_ + "\n";
    for (const auto& [key, value] : echo_) out += key + " = " + value() + "\n";
    return out;
  }

 private:
  CLI::App* sub_;
  std::string name_;
  std::vector<std::pair<std::string, std::function<std::string()>>> echo_;
};

// ---------------------------------------------------------------------------
// Settings shared between commands

struct Common {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out;
  std::string config;
};

void add_common(Command& c, Common& s, bool needs_out = true) {
  c.option("seed", s.seed, "random seed (falls back to DATLAS_SEED)");
  c.option("threads", s.threads, "worker threads, 0 = all cores; results do not depend on it");
  // Left out of the echo so a rerun can target any directory.
  auto* out = c.option("out", s.out, "output directory", false);
  if (needs_out) out->required();
  c.app()->add_option("--config", s.config, "file of `key = value` settings");
}

struct TrainFlags {
  std::string data;
  std::string mode = "multitask";
  std::string cell = "lstm";
  std::string ablation = "none";
  TrainConfig tc;
  std::uint64_t split_seed = 0;
};

void add_train_flags(Command& c, TrainFlags& f, bool with_mode = true) {
  c.option("data", f.data, "cohort directory")->required();
  if (with_mode) c.option("mode", f.mode, "multitask | multioutput");
  c.option("cell", f.cell, "srn | lstm");
  c.option("ablation", f.ablation, "none | no-task-layers | no-horizon-input | mlp-base");
  c.option("minibatch", f.tc.minibatch_size, "windows per iteration");
  c.option("lr", f.tc.learning_rate, "Adam learning rate");
  c.option("clip", f.tc.max_grad_norm, "global gradient norm bound");
  c.option("dropout", f.tc.dropout_rate, "dropout rate");
  c.option("state-multiple", f.tc.state_multiple, "state size as a multiple of the input width");
  c.option("survival-weight", f.tc.survival_weight_multiple, "survival loss weight as a multiple of C + D");
  c.option("epochs", f.tc.max_epochs, "training epochs");
  c.option("rho-max", f.tc.rho_max, "longest history in a training window");
  c.option("tau-max", f.tc.tau_max, "longest horizon in a training window");
  c.option("split-seed", f.split_seed, "seed of the 60/20/20 patient split");
}

struct EvalFlags {
  std::size_t horizon = 5;
  std::size_t samples = kDefaultMcSamples;
  std::size_t repetitions = 3;
};

void add_eval_flags(Command& c, EvalFlags& f) {
  c.option("horizon", f.horizon, "largest horizon tau");
  c.option("samples", f.samples, "Monte Carlo dropout samples");
  c.option("repetitions", f.repetitions, "evaluation repetitions with fresh Monte Carlo seeds");
}

// ---------------------------------------------------------------------------
// Helpers

Cohort read_cohort(const std::string& dir) {
  const auto paths = cohort_paths(dir);
  if (!fs::exists(paths.data) || !fs::exists(paths.schema))
    throw std::runtime_error("'" + dir + "' does not hold cohort.csv and schema.csv");
  return load_cohort(paths.data, paths.schema);
}

void prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory '" + dir + "'");
}

std::string in_dir(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

void write_json(const std::string& path, const json& j) { csv::write_text(path, j.dump(2) + "\n"); }

TrainConfig resolve(const TrainFlags& f, const Common& c) {
  TrainConfig tc = f.tc;
  const auto mode = parse_mode(f.mode);
  if (!mode) throw UsageError("unknown --mode '" + f.mode + "' (valid: multitask, multioutput)");
  const auto cell = parse_temporal(f.cell);
  if (!cell || *cell == TemporalKind::mlp) throw UsageError("unknown --cell '" + f.cell + "' (valid: srn, lstm)");
  const auto ablation = parse_ablation(f.ablation);
  if (!ablation)
    throw UsageError("unknown --ablation '" + f.ablation +
                     "' (valid: none, no-task-layers, no-horizon-input, mlp-base)");
  tc.mode = *mode;
  tc.temporal = *cell;
  tc.ablation = *ablation;
  tc.seed = c.seed;
  tc.threads = c.threads;
  try {
    tc.validate();
  } catch (const ContractViolation& e) {
    throw UsageError(e.what());
  }
  return tc;
}

json config_json(const TrainConfig& tc) {
  return {{"mode", to_string(tc.mode)},
          {"cell", to_string(tc.temporal)},
          {"ablation", to_string(tc.ablation)},
          {"minibatch", tc.minibatch_size},
          {"lr", tc.learning_rate},
          {"clip", tc.max_grad_norm},
          {"dropout", tc.dropout_rate},
          {"state_multiple", tc.state_multiple},
          {"survival_weight", tc.survival_weight_multiple},
          {"epochs", tc.max_epochs},
          {"rho_max", tc.rho_max},
          {"tau_max", effective_tau_max(tc)},
          {"seed", tc.seed}};
}

std::string list(const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) s += (i ? ", " : "") + names[i];
  return s;
}

std::size_t patient_index(const Cohort& c, std::int64_t id) {
  if (const auto i = c.find_patient(id)) return *i;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < c.patients.size() && i < 10; ++i) ids.push_back(std::to_string(c.patients[i].id));
  std::string valid = list(ids);
  if (c.patients.size() > 10)
    valid += ", ... (" + std::to_string(c.patients.size()) + " patients, ids " + std::to_string(c.patients.front().id) +
             " to " + std::to_string(c.patients.back().id) + ")";
  throw UsageError("unknown --patient " + std::to_string(id) + " (valid: " + valid + ")");
}

void check_compatible(const ModelParams& p, const Schema& s) {
  const auto c = s.network_config();
  if (p.config.num_covariates != c.num_covariates || p.config.num_continuous != c.num_continuous ||
      p.config.num_binary != c.num_binary || p.config.num_events != c.num_events)
    throw std::runtime_error("checkpoint does not match the cohort schema");
}

// ---------------------------------------------------------------------------
// Commands

struct GenerateFlags {
  Common common;
  std::size_t patients = 1000;
  std::size_t steps = 8;
  std::string preset = "cf-like";
};

int run_generate(const GenerateFlags& f, const Command& cmd) {
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), f.preset) == names.end())
    throw UsageError("unknown --preset '" + f.preset + "' (valid: " + list(names) + ")");
  if (f.patients < 1 || f.steps < 1) throw UsageError("--patients and --steps must be positive");
  prepare_out(f.common.out);
  const auto cohort = generate_cohort(preset(f.preset), f.patients, f.steps, f.common.seed, f.common.threads);
  save_cohort(cohort, cohort_paths(f.common.out));

  const auto s = summarize(cohort);
  json j{{"patients", s.patients}, {"observation_rows", s.observation_rows}, {"preset", f.preset}};
  std::cout << "patients " << s.patients << ", observation rows " << s.observation_rows << "\n";
  for (std::size_t k = 0; k < s.continuous_names.size(); ++k) {
    j["continuous"][s.continuous_names[k]] = {{"mean", number(s.continuous_mean[k])}, {"sd", number(s.continuous_sd[k])}};
    std::cout << "continuous " << s.continuous_names[k] << ": mean " << text(s.continuous_mean[k]) << ", sd "
              << text(s.continuous_sd[k]) << "\n";
  }
  for (std::size_t k = 0; k < s.binary_names.size(); ++k) {
    j["binary"][s.binary_names[k]] = number(s.binary_prevalence[k]);
    std::cout << "binary " << s.binary_names[k] << ": prevalence " << text(s.binary_prevalence[k]) << "\n";
  }
  for (std::size_t k = 0; k < s.event_names.size(); ++k) {
    j["events"][s.event_names[k]] = number(s.event_fraction[k]);
    char pct[32];
    std::snprintf(pct, sizeof pct, "%.2f%%", 100.0 * s.event_fraction[k]);
    std::cout << "event " << s.event_names[k] << ": " << pct << " of patients\n";
  }
  write_json(in_dir(f.common.out, "summary.json"), j);
  csv::write_text(in_dir(f.common.out, "config.txt"), cmd.echo());
  return 0;
}

struct TrainRun {
  Common common;
  TrainFlags train;
};

int run_train(const TrainRun& f, const Command& cmd) {
  const TrainConfig tc = resolve(f.train, f.common);
  const auto cohort = read_cohort(f.train.data);
  prepare_out(f.common.out);
  const auto split = split_cohort(cohort, f.train.split_seed);
  const auto d = prepare(split, tc);
  std::cout << "train windows " << d.train.size() << ", validation windows " << d.validation.size() << "\n";
  std::vector<std::string> notes;
  if (tc.ablation == Ablation::no_horizon_input && tc.tau_max != 1) {
    notes.push_back("tau_max forced to 1 by no-horizon-input");
    std::cout << notes.back() << "\n";
  }
  const auto r = train(d.train, d.validation, tc, d.network, d.scaling);

  std::string report = "epoch,loss_continuous,loss_binary,loss_survival,validation_survival_ll\n";
  for (const auto& e : r.report.epochs) {
    report += csv::join({text(e.epoch), text(e.loss_continuous), text(e.loss_binary), text(e.loss_survival),
                         text(e.validation_survival_ll)}) +
              "\n";
    std::cout << "epoch " << e.epoch << " validation survival ll " << text(e.validation_survival_ll) << "\n";
  }
  save_checkpoint(r.params, in_dir(f.common.out, "model.ckpt"));
  csv::write_text(in_dir(f.common.out, "report.csv"), report);
  json j{{"best_epoch", r.report.best_epoch},
         {"best_validation_survival_ll", number(r.report.best_validation)},
         {"iterations", r.report.iterations},
         {"parameters", r.params.parameter_count()},
         {"train_windows", d.train.size()},
         {"validation_windows", d.validation.size()},
         {"config", config_json(tc)},
         {"notes", notes}};
  write_json(in_dir(f.common.out, "summary.json"), j);
  csv::write_text(in_dir(f.common.out, "config.txt"), cmd.echo());
  std::cout << "best epoch " << r.report.best_epoch << ", validation survival ll " << text(r.report.best_validation)
            << "\n";
  return 0;
}

struct TuneRun {
  Common common;
  TrainFlags train;
  std::size_t trials = 20;
};

int run_tune(const TuneRun& f, const Command& cmd) {
  const TrainConfig base = resolve(f.train, f.common);
  if (f.trials < 1) throw UsageError("--trials must be positive");
  const auto cohort = read_cohort(f.train.data);
  prepare_out(f.common.out);
  const auto split = split_cohort(cohort, f.train.split_seed);
  const auto result = random_search(split, base, SearchSpace{}, f.trials, f.common.seed);

  std::vector<std::size_t> order(result.trials.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return result.trials[a].score > result.trials[b].score; });
  std::string board = "rank,trial,score,best_epoch,diverged,state_multiple,survival_weight,clip,lr,minibatch,dropout\n";
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& t = result.trials[order[r]];
    const auto& c = t.config;
    board += csv::join({text(r + 1), text(order[r] + 1), t.diverged ? "" : text(t.score), text(t.best_epoch),
                        text(t.diverged), text(c.state_multiple), text(c.survival_weight_multiple),
                        text(c.max_grad_norm), text(c.learning_rate), text(c.minibatch_size), text(c.dropout_rate)}) +
             "\n";
  }
  csv::write_text(in_dir(f.common.out, "leaderboard.csv"), board);

  // A config file for `train` that reproduces the winner.
  const auto& w = result.best.config;
  std::string best = "# datlas train\n";
  const std::vector<std::pair<std::string, std::string>> keys{
      {"data", f.train.data},
      {"mode", to_string(w.mode)},
      {"cell", to_string(w.temporal)},
      {"ablation", to_string(w.ablation)},
      {"minibatch", text(w.minibatch_size)},
      {"lr", text(w.learning_rate)},
      {"clip", text(w.max_grad_norm)},
      {"dropout", text(w.dropout_rate)},
      {"state-multiple", text(w.state_multiple)},
      {"survival-weight", text(w.survival_weight_multiple)},
      {"epochs", text(w.max_epochs)},
      {"rho-max", text(w.rho_max)},
      {"tau-max", text(w.tau_max)},
      {"split-seed", text(f.train.split_seed)},
      {"seed", text(w.seed)},
      {"threads", text(f.common.threads)}};
  for (const auto& [k, v] : keys) best += k + " = " + v + "\n";
  csv::write_text(in_dir(f.common.out, "best.cfg"), best);

  json j{{"trials", result.trials.size()},
         {"best_score", number(result.best.score)},
         {"best_epoch", result.best.best_epoch},
         {"best_config", config_json(w)}};
  write_json(in_dir(f.common.out, "summary.json"), j);
  csv::write_text(in_dir(f.common.out, "config.txt"), cmd.echo());
  std::cout << "best validation survival ll " << text(result.best.score) << " over " << result.trials.size()
            << " trials\n";
  return 0;
}

struct PredictRun {
  Common common;
  std::string data, checkpoint;
  std::int64_t patient = 0;  // 0 = every patient
  std::size_t horizon = 5;
  std::size_t samples = kDefaultMcSamples;
};

int run_predict(const PredictRun& f, const Command& cmd) {
  if (f.horizon < 1 || f.samples < 1) throw UsageError("--horizon and --samples must be positive");
  const auto cohort = read_cohort(f.data);
  const auto params = load_checkpoint(f.checkpoint);
  check_compatible(params, cohort.schema);
  std::vector<std::size_t> chosen;
  if (f.patient != 0) {
    chosen.push_back(patient_index(cohort, f.patient));
  } else {
    for (std::size_t i = 0; i < cohort.patients.size(); ++i) chosen.push_back(i);
  }
  prepare_out(f.common.out);
  const Schema& s = cohort.schema;
  const auto stats = stats_from_scaling(s, params.scaling);
  std::string out = "patient_id,anchor,tau,variable,quantity,mean,p05,p95\n";
  for (std::size_t i : chosen) {
    const auto& p = cohort.patients[i];
    const auto inputs = impute_inputs(s, p, stats);
    const auto fc = forecast(params, inputs, f.horizon, f.samples, Rng(f.common.seed, p.id).next_u64(),
                             f.common.threads);
    auto row = [&](const HorizonForecast& h, std::size_t var, const char* quantity, const Band& b) {
      out += csv::join({text(p.id), text(p.steps - 1), text(h.tau), s[var].name, quantity, text(b.mean), text(b.lo),
                        text(b.hi)}) +
             "\n";
    };
    for (const auto& h : fc) {
      for (std::size_t k = 0; k < h.mu.size(); ++k) row(h, s.continuous()[k], "mean", h.mu[k]);
      for (std::size_t k = 0; k < h.p.size(); ++k) row(h, s.binary()[k], "probability", h.p[k]);
      for (std::size_t k = 0; k < h.survival.size(); ++k) row(h, s.events()[k], "survival", h.survival[k]);
    }
  }
  csv::write_text(in_dir(f.common.out, "predictions.csv"), out);
  csv::write_text(in_dir(f.common.out, "config.txt"), cmd.echo());
  std::cout << "predictions for " << chosen.size() << " patients\n";
  return 0;
}

struct ScreenRun {
  Common common;
  std::string data, checkpoint, target;
  std::int64_t patient = 0;
  std::size_t horizon = 5;
  std::size_t samples = kDefaultMcSamples;
};

int run_screen(const ScreenRun& f, const Command& cmd) {
  if (f.samples < 1) throw UsageError("--samples must be positive");
  const auto cohort = read_cohort(f.data);
  const Schema& s = cohort.schema;
  std::optional<std::size_t> target;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < s.binary().size(); ++k) {
    names.push_back(s[s.binary()[k]].name);
    if (names.back() == f.target) target = k;
  }
  if (!target) throw UsageError("unknown --target '" + f.target + "' (valid: " + list(names) + ")");
  const auto& p = cohort.patients[patient_index(cohort, f.patient)];
  const auto params = load_checkpoint(f.checkpoint);
  check_compatible(params, s);
  prepare_out(f.common.out);
  const auto inputs = impute_inputs(s, p, stats_from_scaling(s, params.scaling));
  const auto rows = screening_profile(params, inputs, *target, f.horizon, f.samples, f.common.seed, f.common.threads);
  std::string out = "patient_id,variable,step,tau,extrapolated,mean,p05,p95\n";
  for (const auto& r : rows)
    out += csv::join({text(p.id), f.target, text(r.step), text(r.tau), text(r.extrapolated), text(r.estimate.mean),
                      text(r.estimate.lo), text(r.estimate.hi)}) +
           "\n";
  csv::write_text(in_dir(f.common.out, "screening.csv"), out);
  csv::write_text(in_dir(f.common.out, "config.txt"), cmd.echo());
  std::cout << rows.size() << " screening rows for patient " << p.id << "\n";
  return 0;
}

struct EvaluateRun {
  Common common;
  std::string data, checkpoint, split = "test";
  std::uint64_t split_seed = 0;
  EvalFlags eval;
};

json metrics_json(const MetricReport& r) {
  json cells = json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"variable", c.variable},
                     {"kind", to_string(c.kind)},
                     {"horizon", c.horizon},
                     {"metric", c.metric},
                     {"mean", number(c.mean)},
                     {"sd", number(c.sd)},
                     {"count", c.count}});
  return cells;
}

int run_evaluate(const EvaluateRun& f, const Command& cmd) {
  if (f.split != "test" && f.split != "all") throw UsageError("unknown --split '" + f.split + "' (valid: test, all)");
  if (f.eval.horizon < 1 || f.eval.samples < 1 || f.eval.repetitions < 1)
    throw UsageError("--horizon, --samples and --repetitions must be positive");
  const auto cohort = read_cohort(f.data);
  const auto params = load_checkpoint(f.checkpoint);
  check_compatible(params, cohort.schema);
  prepare_out(f.common.out);
  const Cohort test = f.split == "all" ? cohort : split_cohort(cohort, f.split_seed).test;
  const EvalConfig ec{f.eval.horizon, f.eval.samples, f.eval.repetitions, f.common.seed, f.common.threads};
  const auto r = evaluate_model(params, test, ec);

  std::string metrics = "variable,kind,horizon,metric,mean,sd,count\n";
  for (const auto& c : r.cells)
    metrics += csv::join({c.variable, to_string(c.kind), text(c.horizon), c.metric, text(c.mean), text(c.sd),
                          text(c.count)}) +
               "\n";
  csv::write_text(in_dir(f.common.out, "metrics.csv"), metrics);

  std::string mortality = "event,horizon,auroc_mean,auroc_sd,auprc_mean,auprc_sd\n";
  for (std::size_t m : cohort.schema.events()) {
    const auto& name = cohort.schema[m].name;
    for (std::size_t k = 1; k <= ec.tau_max; ++k) {
      const auto* a = r.find(name, k, "auroc");
      const auto* p = r.find(name, k, "auprc");
      mortality += csv::join({name, text(k), a ? text(a->mean) : "", a ? text(a->sd) : "", p ? text(p->mean) : "",
                              p ? text(p->sd) : ""}) +
                   "\n";
    }
  }
  csv::write_text(in_dir(f.common.out, "mortality.csv"), mortality);

  std::string groups = "kind,horizon,metric,mean,sd,variables\n";
  for (const auto& g : group_summary(r))
    groups += csv::join({to_string(g.kind), text(g.horizon), g.metric, text(g.mean), text(g.sd), text(g.variables)}) +
              "\n";
  csv::write_text(in_dir(f.common.out, "groups.csv"), groups);

  write_json(in_dir(f.common.out, "summary.json"),
             {{"patients", test.patients.size()}, {"repetitions", r.repetitions}, {"cells", metrics_json(r)}});
  csv::write_text(in_dir(f.common.out, "config.txt"), cmd.echo());
  std::cout << r.cells.size() << " metric cells over " << test.patients.size() << " patients\n";
  return 0;
}

struct MissingnessRun {
  Common common;
  TrainFlags train;
  EvalFlags eval;
  std::string gammas = "0,0.25,0.5,0.75";
};

std::vector<double> parse_gammas(const std::string& s) {
  std::vector<double> out;
  for (auto cell : csv::split(s)) {
    const auto v = csv::parse_double(cell);
    if (!v || *v < 0.0 || *v >= 1.0) throw UsageError("--gammas must be comma-separated values in [0, 1)");
    out.push_back(*v);
  }
  return out;
}

int run_missingness(const MissingnessRun& f, const Command& cmd) {
  const TrainConfig base = resolve(f.train, f.common);
  const auto gammas = parse_gammas(f.gammas);
  if (f.eval.horizon < 1 || f.eval.samples < 1 || f.eval.repetitions < 1)
    throw UsageError("--horizon, --samples and --repetitions must be positive");
  const auto cohort = read_cohort(f.train.data);
  prepare_out(f.common.out);
  const EvalConfig ec{f.eval.horizon, f.eval.samples, f.eval.repetitions, f.common.seed, f.common.threads};
  const auto rows = missingness_experiment(cohort, gammas, base, ec);
  std::string out = "gamma,mode,mse,binary_auroc,mortality_auroc\n";
  json arr = json::array();
  for (const auto& r : rows) {
    out += csv::join({text(r.gamma), to_string(r.mode), text(r.mse), text(r.binary_auroc), text(r.mortality_auroc)}) +
           "\n";
    arr.push_back({{"gamma", r.gamma},
                   {"mode", to_string(r.mode)},
                   {"mse", number(r.mse)},
                   {"binary_auroc", number(r.binary_auroc)},
                   {"mortality_auroc", number(r.mortality_auroc)}});
    std::cout << "gamma " << text(r.gamma) << " " << to_string(r.mode) << ": mse " << text(r.mse) << "\n";
  }
  csv::write_text(in_dir(f.common.out, "missingness.csv"), out);
  write_json(in_dir(f.common.out, "summary.json"), {{"rows", arr}, {"config", config_json(base)}});
  csv::write_text(in_dir(f.common.out, "config.txt"), cmd.echo());
  return 0;
}

// ---------------------------------------------------------------------------
// Config files are turned into `--key=value` arguments placed ahead of the
// real ones, so later command-line flags take precedence.

std::vector<std::string> config_arguments(const std::string& path, const CLI::App& sub) {
  std::vector<std::string> lines;
  try {
    lines = csv::read_lines(path);
  } catch (const std::exception&) {
    throw UsageError("cannot read config file '" + path + "'");
  }
  std::vector<std::string> args;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string_view line = csv::trim(lines[i]);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw UsageError(path + ":" + std::to_string(i + 1) + ": expected `key = value`");
    const std::string key(csv::trim(line.substr(0, eq)));
    const std::string value(csv::trim(line.substr(eq + 1)));
    if (key == "config" || key == "help" || sub.get_option_no_throw("--" + key) == nullptr)
      throw UsageError(path + ":" + std::to_string(i + 1) + ": unknown key '" + key + "' for '" + sub.get_name() + "'");
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

std::optional<std::string> find_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic joint modelling of longitudinal and survival data with recurrent networks", "datlas"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GenerateFlags gen;
  Command gen_cmd(app, "generate", "simulate a cohort from a ground-truth preset");
  gen_cmd.option("patients", gen.patients, "number of patients");
  gen_cmd.option("steps", gen.steps, "yearly steps per patient");
  gen_cmd.option("preset", gen.preset, "cf-like | high-risk");
  add_common(gen_cmd, gen.common);

  TrainRun tr;
  Command train_cmd(app, "train", "fit a model and write a checkpoint");
  add_train_flags(train_cmd, tr.train);
  add_common(train_cmd, tr.common);

  TuneRun tu;
  Command tune_cmd(app, "tune", "random search over the tuning ranges");
  add_train_flags(tune_cmd, tu.train);
  tune_cmd.option("trials", tu.trials, "configurations to try");
  add_common(tune_cmd, tu.common);

  PredictRun pr;
  Command predict_cmd(app, "predict", "forecast tau = 1..horizon from each patient's full history");
  predict_cmd.option("data", pr.data, "cohort directory")->required();
  predict_cmd.option("checkpoint", pr.checkpoint, "model checkpoint")->required();
  predict_cmd.option("patient", pr.patient, "patient id, 0 for every patient");
  predict_cmd.option("horizon", pr.horizon, "largest horizon tau");
  predict_cmd.option("samples", pr.samples, "Monte Carlo dropout samples");
  add_common(predict_cmd, pr.common);

  ScreenRun sc;
  Command screen_cmd(app, "screen", "smoothed estimates and extrapolation for one binary variable");
  screen_cmd.option("data", sc.data, "cohort directory")->required();
  screen_cmd.option("checkpoint", sc.checkpoint, "model checkpoint")->required();
  screen_cmd.option("patient", sc.patient, "patient id")->required();
  screen_cmd.option("target", sc.target, "binary variable")->required();
  screen_cmd.option("horizon", sc.horizon, "extrapolation steps after the last observation");
  screen_cmd.option("samples", sc.samples, "Monte Carlo dropout samples");
  add_common(screen_cmd, sc.common);

  EvaluateRun ev;
  Command eval_cmd(app, "evaluate", "MSE, AUROC and AUPRC per variable and horizon");
  eval_cmd.option("data", ev.data, "cohort directory")->required();
  eval_cmd.option("checkpoint", ev.checkpoint, "model checkpoint")->required();
  eval_cmd.option("split", ev.split, "test | all");
  eval_cmd.option("split-seed", ev.split_seed, "seed of the 60/20/20 patient split");
  add_eval_flags(eval_cmd, ev.eval);
  add_common(eval_cmd, ev.common);

  MissingnessRun mi;
  mi.eval.repetitions = 1;
  Command miss_cmd(app, "experiment-missingness", "multitask against multioutput training as data go missing");
  add_train_flags(miss_cmd, mi.train, false);
  miss_cmd.option("gammas", mi.gammas, "comma-separated missingness fractions");
  add_eval_flags(miss_cmd, mi.eval);
  add_common(miss_cmd, mi.common);

  const std::vector<Command*> commands{&gen_cmd, &train_cmd, &tune_cmd, &predict_cmd,
                                       &screen_cmd, &eval_cmd, &miss_cmd};
  std::vector<Common*> commons{&gen.common, &tr.common, &tu.common, &pr.common, &sc.common, &ev.common, &mi.common};

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    // Splice config-file settings in right after the subcommand name.
    if (!args.empty()) {
      for (Command* c : commands) {
        if (c->name() != args.front()) continue;
        if (const auto path = find_config(args)) {
          const auto extra = config_arguments(*path, *c->app());
          args.insert(args.begin() + 1, extra.begin(), extra.end());
        }
      }
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!commands[i]->app()->parsed()) continue;
    if (commands[i]->app()->count("--seed") == 0) {
      if (const char* env = std::getenv("DATLAS_SEED")) {
        const auto v = csv::parse_int(env);
        if (!v || *v < 0) {
          std::cerr << "error: DATLAS_SEED must be a non-negative integer\n";
          return 2;
        }
        commons[i]->seed = static_cast<std::uint64_t>(*v);
      }
    }
  }

  try {
    if (gen_cmd.app()->parsed()) return run_generate(gen, gen_cmd);
    if (train_cmd.app()->parsed()) return run_train(tr, train_cmd);
    if (tune_cmd.app()->parsed()) return run_tune(tu, tune_cmd);
    if (predict_cmd.app()->parsed()) return run_predict(pr, predict_cmd);
    if (screen_cmd.app()->parsed()) return run_screen(sc, screen_cmd);
    if (eval_cmd.app()->parsed()) return run_evaluate(ev, eval_cmd);
    if (miss_cmd.app()->parsed()) return run_missingness(mi, miss_cmd);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
