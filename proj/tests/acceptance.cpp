// Acceptance suite. `acceptance` runs every criterion; `acceptance N ...`
// runs the listed ones. Each prints one PASS/FAIL line; the exit status is
// nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "datlas/datlas.hpp"

#ifndef DATLAS_CLI_PATH
#error "DATLAS_CLI_PATH must name the datlas executable"
#endif

namespace fs = std::filesystem;
using namespace datlas;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients against central differences.

Outcome gradient_oracle() {
  double worst = 0.0;
  std::size_t checked = 0;
  for (auto kind : {TemporalKind::srn, TemporalKind::lstm}) {
    NetworkConfig c;
    c.num_covariates = 3;
    c.num_continuous = 2;
    c.num_binary = 2;
    c.num_events = 1;
    c.state_size = 4;
    c.temporal = kind;
    c.dropout_rate = 0.0;
    Rng rng(101);
    auto params = init_params(c, rng);
    for (auto& t : params.tensors)
      for (double& v : t.values()) v += rng.normal(0.0, 0.1);
    for (std::size_t i = 0; i < c.input_width(); ++i) {
      params.scaling.input_mean[i] = rng.normal();
      params.scaling.input_sd[i] = rng.uniform(0.5, 2.0);
    }
    params.scaling.output_mean = {2.0, 70.0};
    params.scaling.output_sd = {0.9, 20.0};
    params.scaling.hazard_scale = {0.05};

    std::vector<double> history(3 * c.input_width());
    for (double& v : history) v = rng.normal();
    TargetBundle t{{2.4, 65.0}, {1.0, 1.0}, {1.0, 0.0}, {1.0, 1.0}, {2.3}, {1.0}};
    const double tau = 2.0;
    const auto masks = DropoutMaskSet::ones(c);

    Graph g;
    auto grads = params.zeros_like();
    window_gradient(params, masks, history, tau, t, std::nullopt, 1.0, g, grads);

    auto loss = [&](const ModelParams& p) {
      const auto l = task_losses(forward(p, masks, history, tau), t);
      return l.continuous + l.binary + l.survival;
    };
    const double h = 1e-5;
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
      for (std::size_t i = 0; i < params.tensors[k].size(); ++i) {
        auto plus = params, minus = params;
        plus.tensors[k].values()[i] += h;
        minus.tensors[k].values()[i] -= h;
        const double numeric = (loss(plus) - loss(minus)) / (2.0 * h);
        const double analytic = grads[k].values()[i];
        const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
        const double rel = scale < 1e-8 ? std::fabs(analytic - numeric) / 1e-8 : std::fabs(analytic - numeric) / scale;
        worst = std::max(worst, rel);
        ++checked;
      }
    }
  }
  return {worst < 1e-4, std::to_string(checked) + " parameters (SRN and LSTM), max relative error " +
                            fmt("%.2e", worst) + " (need < 1e-4)"};
}

// ---------------------------------------------------------------------------
// 2. Output ranges over random networks, inputs and horizons.

Outcome distribution_validity() {
  Rng rng(202);
  std::size_t violations = 0, passes = 0;
  const TemporalKind kinds[] = {TemporalKind::srn, TemporalKind::lstm, TemporalKind::mlp};
  while (passes < 10000) {
    NetworkConfig c;
    c.num_covariates = 1 + rng.below(5);
    c.num_continuous = 1 + rng.below(3);
    c.num_binary = 1 + rng.below(4);
    c.num_events = 1 + rng.below(2);
    c.state_size = 2 + rng.below(12);
    c.temporal = kinds[rng.below(3)];
    c.task_layers = rng.bernoulli(0.5);
    c.horizon_input = rng.bernoulli(0.8);
    c.dropout_rate = rng.bernoulli(0.5) ? 0.0 : 0.3;
    auto params = init_params(c, rng);
    for (double& v : params.scaling.hazard_scale) v = rng.uniform(0.001, 1.0);
    for (int rep = 0; rep < 100; ++rep, ++passes) {
      std::vector<double> history((1 + rng.below(8)) * c.input_width());
      for (double& v : history) v = rng.normal(0.0, 2.0);
      const double tau = rng.uniform(0.0, 10.0);
      const auto masks = DropoutMaskSet::sample(c, rng);
      const auto out = forward(params, masks, history, tau);
      bool ok = true;
      for (double s : out.sigma) ok = ok && std::isfinite(s) && s > 0.0;
      for (double p : out.p) ok = ok && p > 0.0 && p < 1.0;
      for (double l : out.lambda) ok = ok && std::isfinite(l) && l > 0.0;
      for (double m : out.mu) ok = ok && std::isfinite(m);
      if (!ok) ++violations;
    }
  }
  return {violations == 0, std::to_string(passes) + " forward passes, " + std::to_string(violations) + " violations"};
}

// ---------------------------------------------------------------------------
// 3. Likelihood anchors.

Outcome likelihood_closed_forms() {
  const double g = gaussian_nll(0.0, 0.0, 1.0);
  const double e = exponential_nll(2.0, 1.0, 1.0);
  const double b = bernoulli_nll(1.0, 0.5);
  const bool ok = std::fabs(g - 0.918939) < 1e-6 && std::fabs(g - 0.5 * std::log(2.0 * M_PI)) < 1e-9 &&
                  std::fabs(e - 2.0) < 1e-9 && std::fabs(b - std::log(2.0)) < 1e-9;
  char buf[160];
  std::snprintf(buf, sizeof buf, "gaussian %.9f, exponential %.9f, bernoulli %.9f", g, e, b);
  return {ok, buf};
}

// ---------------------------------------------------------------------------
// 4. Survival curve contract.

Outcome survival_contract() {
  Rng rng(404);
  const double taus[] = {0, 1, 2, 3, 4, 5};
  std::size_t bad = 0;
  double worst_risk = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<DistributionParams> samples(1 + rng.below(300));
    const std::size_t M = 1 + rng.below(3);
    for (auto& s : samples) {
      s.lambda.resize(M);
      for (double& l : s.lambda) l = std::exp(rng.normal(-2.0, 2.0));
    }
    const auto S = survival_curve(samples, taus);
    for (std::size_t m = 0; m < M; ++m) {
      if (S[m][0] != 1.0) ++bad;
      for (std::size_t k = 1; k < 6; ++k)
        if (!(S[m][k] <= S[m][k - 1]) || S[m][k] < 0.0) ++bad;
      for (std::size_t k = 0; k < 6; ++k)
        worst_risk = std::max(worst_risk, std::fabs(event_risk(samples, taus[k])[m] - (1.0 - S[m][k])));
    }
  }
  return {bad == 0 && worst_risk <= 1e-12, "1000 sample sets, " + std::to_string(bad) +
                                               " violations, max |risk - (1 - S)| " + fmt("%.1e", worst_risk)};
}

// ---------------------------------------------------------------------------
// 5. MC dropout: identical without dropout, masks fixed over time with it.

Outcome mc_dropout() {
  NetworkConfig c;
  c.state_size = 13;
  c.dropout_rate = 0.0;
  Rng rng(505);
  auto params = init_params(c, rng);
  std::vector<double> history(6 * c.input_width());
  for (double& v : history) v = rng.normal();
  const auto samples = mc_sample(params, history, 2.0, 300, 9);
  std::size_t differing = 0;
  for (const auto& s : samples)
    if (s.mu != samples[0].mu || s.sigma != samples[0].sigma || s.p != samples[0].p || s.lambda != samples[0].lambda)
      ++differing;

  params.config.dropout_rate = 0.3;
  std::size_t unstable = 0;
  std::set<std::vector<double>> distinct;
  for (std::size_t j = 0; j < 300; ++j) {
    const auto masks = mc_masks(params.config, 9, j);
    ForwardTrace trace;
    forward(params, masks, history, 2.0, &trace);
    for (const auto& step : trace.steps)
      if (step.input != masks.input || step.state != masks.state || step.output != masks.output) ++unstable;
    if (trace.steps.size() != 6) ++unstable;
    distinct.insert(masks.input);
  }
  return {differing == 0 && unstable == 0 && distinct.size() > 1,
          "dropout 0: " + std::to_string(differing) + " of 300 samples differ; dropout 0.3: " +
              std::to_string(unstable) + " timestep mask changes, " + std::to_string(distinct.size()) +
              " distinct input masks"};
}

// ---------------------------------------------------------------------------
// 6. Curve metrics against brute-force oracles.

Outcome metric_oracles() {
  Rng rng(606);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2 + rng.below(49);
    const bool ties = rng.bernoulli(0.5);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = ties ? std::floor(rng.uniform() * 6.0) : rng.uniform();
      y[i] = rng.bernoulli(0.35) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    double hits = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (y[i] == 1 && y[j] == 0) {
          pairs += 1.0;
          hits += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    double positives = 0.0, area = 0.0, previous = 0.0;
    for (int l : y) positives += l;
    for (double th : std::set<double, std::greater<>>(s.begin(), s.end())) {
      double tp = 0.0, predicted = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (s[i] >= th) {
          predicted += 1.0;
          tp += y[i];
        }
      area += (tp / positives - previous) * tp / predicted;
      previous = tp / positives;
    }
    worst = std::max(worst, std::fabs(auroc(s, y) - hits / pairs));
    worst = std::max(worst, std::fabs(auprc(s, y) - area));
  }
  return {worst <= 1e-12, "100 instances, max deviation from oracles " + fmt("%.1e", worst)};
}

// ---------------------------------------------------------------------------
// 7. Generator calibration.

Outcome generator_calibration() {
  const auto s = summarize(generate_cohort(cf_like_preset(), 10000, 8, 7));
  const double mean = s.continuous_mean[0], sd = s.continuous_sd[0], death = s.event_fraction[0];
  const bool ok = std::fabs(mean - 2.176) <= 0.05 * 2.176 && std::fabs(sd - 0.914) <= 0.10 * 0.914 &&
                  std::fabs(death - 0.047) <= 0.01;
  char buf[160];
  std::snprintf(buf, sizeof buf, "FEV1 mean %.3f (2.176 +- 5%%), sd %.3f (0.914 +- 10%%), death %.2f%% (4.70 +- 1)",
                mean, sd, 100.0 * death);
  return {ok, buf};
}

// ---------------------------------------------------------------------------
// Shared synthetic cohort for criteria 8 and 10.

struct Synthetic {
  GroundTruthModel truth = high_risk_preset();
  CohortSplit split = split_cohort(generate_cohort(truth, 1000, 10, 5), 5);
};

const Synthetic& synthetic() {
  static const Synthetic s;
  return s;
}

std::map<std::pair<Ablation, std::uint64_t>, ModelParams>& model_cache() {
  static std::map<std::pair<Ablation, std::uint64_t>, ModelParams> cache;
  return cache;
}

const ModelParams& trained(Ablation ablation, std::uint64_t seed) {
  auto& cache = model_cache();
  const auto key = std::make_pair(ablation, seed);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  TrainConfig tc;
  tc.ablation = ablation;
  tc.seed = seed;
  return cache.emplace(key, fit(synthetic().split, tc).params).first->second;
}

// 8. Recovery of the generator: MSE against noise variance, mortality AUROC.

Outcome synthetic_recovery() {
  const auto& syn = synthetic();
  const auto& params = trained(Ablation::none, 1);
  EvalConfig ec;
  ec.tau_max = 1;
  ec.seed = 8;
  const auto r = evaluate_model(params, syn.split.test, ec);
  bool ok = true;
  std::string detail;
  for (const auto& c : syn.truth.continuous) {
    const auto* cell = r.find(c.name, 1, "mse");
    const double ratio = cell ? cell->mean / (c.noise_sd * c.noise_sd) : INFINITY;
    ok = ok && ratio <= 1.5;
    detail += c.name + " MSE/noise " + fmt("%.3f", ratio) + " (<= 1.5), ";
  }
  const auto* a = r.find("death", 1, "auroc");
  const double auc = a ? a->mean : 0.0;
  ok = ok && auc >= 0.80;
  const auto oracle = oracle_event_scores(syn.split.test, 0, 1);
  detail += "death AUROC(1) " + fmt("%.3f", auc) + " (>= 0.80; generator hazard " +
            fmt("%.3f", oracle.auroc[0].value_or(NAN)) + ")";
  return {ok, detail};
}

// 9. Multitask against multioutput at gamma = 0.5.

Outcome multitask_vs_multioutput() {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto cohort = generate_cohort(high_risk_preset(), 1000, 10, 100 + seed);
    TrainConfig tc;
    tc.seed = seed;
    EvalConfig ec;
    ec.repetitions = 1;
    ec.seed = seed;
    const auto rows = missingness_experiment(cohort, {0.5}, tc, ec);
    const double mt = rows[0].mse, mo = rows[1].mse;
    if (mt < mo) ++wins;
    detail += "seed " + std::to_string(seed) + ": " + fmt("%.4f", mt) + " vs " + fmt("%.4f", mo) + "; ";
  }
  return {wins >= 2, "normalized MSE multitask vs multioutput, " + detail + std::to_string(wins) + "/3 multitask lower"};
}

// 10. Task layers against the no-task-layers ablation.

Outcome ablation_ordering() {
  const auto& syn = synthetic();
  double full = 0.0, lean = 0.0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    EvalConfig ec;
    ec.tau_max = 1;
    ec.seed = 10 + seed;
    const auto ra = evaluate_model(trained(Ablation::none, seed), syn.split.test, ec);
    const auto rb = evaluate_model(trained(Ablation::no_task_layers, seed), syn.split.test, ec);
    const auto* a = ra.find("death", 1, "auprc");
    const auto* b = rb.find("death", 1, "auprc");
    const double fa = a ? a->mean : 0.0, fb = b ? b->mean : 0.0;
    full += fa / 3.0;
    lean += fb / 3.0;
    detail += fmt("%.4f", fa) + "/" + fmt("%.4f", fb) + " ";
  }
  return {full >= lean, "mortality AUPRC(1) full/ablated per seed " + detail + "; means " + fmt("%.4f", full) +
                            " >= " + fmt("%.4f", lean)};
}

// ---------------------------------------------------------------------------
// 11. Every CLI command twice with the same seed gives identical files.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run(const std::string& args) {
  const std::string cmd = std::string(DATLAS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

Outcome cli_reproducibility() {
  const fs::path root = fs::temp_directory_path() / "datlas_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string data = (root / "cohort").string();
  if (run("generate --patients 60 --steps 6 --seed 4 --preset high-risk --out " + data) != 0)
    return {false, "generate failed"};
  const std::string ckpt = (root / "train_a" / "model.ckpt").string();
  const std::vector<std::pair<std::string, std::string>> commands{
      {"generate", "generate --patients 60 --steps 6 --seed 4 --preset high-risk"},
      {"train", "train --data " + data + " --epochs 2 --minibatch 32 --seed 3"},
      {"tune", "tune --data " + data + " --trials 2 --epochs 1 --seed 3"},
      {"predict", "predict --data " + data + " --checkpoint " + ckpt + " --samples 20 --seed 5"},
      {"screen", "screen --data " + data + " --checkpoint " + ckpt + " --patient 2 --target diabetes --samples 20 --seed 5"},
      {"evaluate", "evaluate --data " + data + " --checkpoint " + ckpt + " --samples 10 --repetitions 2 --seed 5"},
      {"experiment-missingness", "experiment-missingness --data " + data +
                                     " --gammas 0,0.5 --epochs 1 --minibatch 32 --samples 5 --seed 5"},
  };
  std::size_t files = 0;
  std::vector<std::string> failed;
  for (const auto& [name, args] : commands) {
    const fs::path a = root / (name + "_a"), b = root / (name + "_b");
    if (run(args + " --out " + a.string()) != 0 || run(args + " --out " + b.string()) != 0) {
      failed.push_back(name + " (exit status)");
      continue;
    }
    std::set<std::string> names_a, names_b;
    for (const auto& e : fs::directory_iterator(a)) names_a.insert(e.path().filename().string());
    for (const auto& e : fs::directory_iterator(b)) names_b.insert(e.path().filename().string());
    bool same = names_a == names_b && !names_a.empty();
    for (const auto& f : names_a) {
      same = same && slurp(a / f) == slurp(b / f);
      ++files;
    }
    if (!same) failed.push_back(name);
  }
  fs::remove_all(root);
  std::string detail = std::to_string(commands.size()) + " commands, " + std::to_string(files) + " files compared";
  if (!failed.empty()) {
    detail += "; differing:";
    for (const auto& f : failed) detail += " " + f;
  }
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"distribution validity", distribution_validity},
      {"likelihood closed forms", likelihood_closed_forms},
      {"survival contract", survival_contract},
      {"MC dropout", mc_dropout},
      {"metric oracles", metric_oracles},
      {"generator calibration", generator_calibration},
      {"synthetic recovery", synthetic_recovery},
      {"multitask vs multioutput", multitask_vs_multioutput},
      {"ablation ordering", ablation_ordering},
      {"CLI reproducibility", cli_reproducibility},
  };
  std::vector<std::size_t> chosen;
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (n < 1 || n > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "unknown criterion '%s' (1-%zu)\n", argv[i], criteria.size());
      return 2;
    }
    chosen.push_back(static_cast<std::size_t>(n));
  }
  if (chosen.empty())
    for (std::size_t i = 1; i <= criteria.size(); ++i) chosen.push_back(i);

  int failures = 0;
  for (std::size_t n : chosen) {
    const auto& [name, check] = criteria[n - 1];
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::printf("criterion %2zu %s  %s: %s [%.1f s]\n", n, o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
