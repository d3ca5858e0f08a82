#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "datlas/cohort.hpp"
#include "datlas/errors.hpp"
#include "datlas/losses.hpp"
#include "datlas/model.hpp"
#include "datlas/parallel.hpp"
#include "datlas/rng.hpp"

namespace datlas {

inline constexpr std::size_t kDefaultMcSamples = 300;

// Sample j draws its masks from stream (seed, j), so results do not depend
// on the thread count.
inline DropoutMaskSet mc_masks(const NetworkConfig& c, std::uint64_t seed, std::size_t j) {
  Rng rng(seed, j);
  return DropoutMaskSet::sample(c, rng);
}

// J stochastic passes, each with one mask set held across the sequence.
inline std::vector<DistributionParams> mc_sample(const ModelParams& params, std::span<const double> history, double tau,
                                                 std::size_t J, std::uint64_t seed, std::size_t threads = 1) {
  DATLAS_REQUIRE(J >= 1, "mc_sample: need at least one sample");
  std::vector<DistributionParams> out(J);
  parallel_for(J, threads, [&](std::size_t j) {
    out[j] = forward(params, mc_masks(params.config, seed, j), history, tau);
  });
  return out;
}

// Same samples for several horizons: sample j reuses its masks and its
// encoded history for every tau. Result is indexed [horizon][sample].
inline std::vector<std::vector<DistributionParams>> mc_sample_horizons(const ModelParams& params,
                                                                       std::span<const double> history,
                                                                       std::span<const double> taus, std::size_t J,
                                                                       std::uint64_t seed, std::size_t threads = 1) {
  DATLAS_REQUIRE(J >= 1, "mc_sample: need at least one sample");
  std::vector<std::vector<DistributionParams>> out(taus.size(), std::vector<DistributionParams>(J));
  parallel_for(J, threads, [&](std::size_t j) {
    const auto masks = mc_masks(params.config, seed, j);
    ValueOps ops(params);
    Network<ValueOps> net(ops, params, masks);
    const auto h = net.encode(history);
    for (std::size_t k = 0; k < taus.size(); ++k) out[k][j] = net.read(net.heads(h, taus[k]));
  });
  return out;
}

struct LongitudinalExpectation {
  std::vector<double> mu;  // E[Y] = mean of sampled means
  std::vector<double> p;   // risk = mean of sampled probabilities
};

inline LongitudinalExpectation expected_longitudinal(std::span<const DistributionParams> samples) {
  DATLAS_REQUIRE(!samples.empty(), "expected_longitudinal: no samples");
  LongitudinalExpectation e{std::vector<double>(samples[0].mu.size(), 0.0),
                            std::vector<double>(samples[0].p.size(), 0.0)};
  for (const auto& s : samples) {
    for (std::size_t k = 0; k < e.mu.size(); ++k) e.mu[k] += s.mu[k];
    for (std::size_t k = 0; k < e.p.size(); ++k) e.p[k] += s.p[k];
  }
  const double J = static_cast<double>(samples.size());
  for (double& v : e.mu) v /= J;
  for (double& v : e.p) v /= J;
  return e;
}

enum class SurvivalAverage {
  mean_survival,  // (1/J) sum_j exp(-lambda_j tau)
  mean_hazard,    // exp(-mean(lambda) tau)
};

// Survival probabilities per event (outer) and horizon (inner).
inline std::vector<std::vector<double>> survival_curve(std::span<const DistributionParams> samples,
                                                       std::span<const double> taus,
                                                       SurvivalAverage how = SurvivalAverage::mean_survival) {
  DATLAS_REQUIRE(!samples.empty(), "survival_curve: no samples");
  const std::size_t M = samples[0].lambda.size();
  const double J = static_cast<double>(samples.size());
  std::vector<std::vector<double>> S(M, std::vector<double>(taus.size(), 0.0));
  for (std::size_t m = 0; m < M; ++m) {
    for (const auto& s : samples) DATLAS_REQUIRE(s.lambda[m] > 0.0, "survival_curve: hazard must be positive");
    for (std::size_t k = 0; k < taus.size(); ++k) {
      const double tau = taus[k];
      DATLAS_REQUIRE(tau >= 0.0, "survival_curve: horizon must be non-negative");
      if (how == SurvivalAverage::mean_survival) {
        double acc = 0.0;
        for (const auto& s : samples) acc += std::exp(-s.lambda[m] * tau);
        S[m][k] = acc / J;
      } else {
        double lam = 0.0;
        for (const auto& s : samples) lam += s.lambda[m];
        S[m][k] = std::exp(-(lam / J) * tau);
      }
    }
  }
  return S;
}

// Probability of each event within tau: 1 - S(tau).
inline std::vector<double> event_risk(std::span<const DistributionParams> samples, double tau,
                                      SurvivalAverage how = SurvivalAverage::mean_survival) {
  const double t[1] = {tau};
  const auto S = survival_curve(samples, t, how);
  std::vector<double> r;
  for (const auto& row : S) r.push_back(1.0 - row[0]);
  return r;
}

// Linear interpolation between order statistics (R's type 7).
inline double quantile(std::vector<double> values, double q) {
  DATLAS_REQUIRE(!values.empty(), "quantile: no values");
  DATLAS_REQUIRE(q >= 0.0 && q <= 1.0, "quantile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct Band {
  double mean = 0.0;
  double lo = 0.0;  // 5th percentile
  double hi = 0.0;  // 95th percentile
};

// The mean is clamped to the sample range so identical samples give a band
// of zero width despite rounding in the sum.
inline Band band(const std::vector<double>& values) {
  DATLAS_REQUIRE(!values.empty(), "band: no values");
  double s = 0.0;
  for (double v : values) s += v;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double mean = std::clamp(s / static_cast<double>(values.size()), *lo, *hi);
  return {mean, quantile(values, 0.05), quantile(values, 0.95)};
}

struct HorizonForecast {
  double tau = 0.0;
  std::vector<Band> mu;        // per continuous variable
  std::vector<Band> p;         // per binary variable
  std::vector<Band> survival;  // per event; mean is S(tau), bands over exp(-lambda_j tau)
  std::vector<double> risk;    // per event, 1 - S(tau)
};

inline HorizonForecast summarize_samples(std::span<const DistributionParams> samples, double tau) {
  HorizonForecast f;
  f.tau = tau;
  const auto& s0 = samples[0];
  std::vector<double> tmp(samples.size());
  for (std::size_t k = 0; k < s0.mu.size(); ++k) {
    for (std::size_t j = 0; j < samples.size(); ++j) tmp[j] = samples[j].mu[k];
    f.mu.push_back(band(tmp));
  }
  for (std::size_t k = 0; k < s0.p.size(); ++k) {
    for (std::size_t j = 0; j < samples.size(); ++j) tmp[j] = samples[j].p[k];
    f.p.push_back(band(tmp));
  }
  const auto S = survival_curve(samples, std::span<const double>(&tau, 1));
  for (std::size_t m = 0; m < s0.lambda.size(); ++m) {
    for (std::size_t j = 0; j < samples.size(); ++j) tmp[j] = std::exp(-samples[j].lambda[m] * tau);
    Band b = band(tmp);
    b.mean = S[m][0];
    f.survival.push_back(b);
    f.risk.push_back(1.0 - S[m][0]);
  }
  return f;
}

// Forecast for tau = 1..tau_max from one history.
inline std::vector<HorizonForecast> forecast(const ModelParams& params, std::span<const double> history,
                                             std::size_t tau_max, std::size_t J, std::uint64_t seed,
                                             std::size_t threads = 1) {
  DATLAS_REQUIRE(tau_max >= 1, "forecast: tau_max must be at least 1");
  std::vector<double> taus;
  for (std::size_t t = 1; t <= tau_max; ++t) taus.push_back(static_cast<double>(t));
  const auto samples = mc_sample_horizons(params, history, taus, J, seed, threads);
  std::vector<HorizonForecast> out;
  for (std::size_t k = 0; k < taus.size(); ++k) out.push_back(summarize_samples(samples[k], taus[k]));
  return out;
}

// Imputation statistics recovered from a checkpoint's input scaling, which
// holds the training means of every input column.
inline VariableStats stats_from_scaling(const Schema& s, const Standardization& z) {
  DATLAS_REQUIRE(z.input_mean.size() == s.input_columns().size(), "checkpoint does not match the cohort schema");
  VariableStats st{std::vector<double>(s.size(), 0.0), std::vector<double>(s.size(), 1.0)};
  for (std::size_t j = 0; j < s.input_columns().size(); ++j) {
    st.mean[s.input_columns()[j]] = z.input_mean[j];
    st.sd[s.input_columns()[j]] = z.input_sd[j];
  }
  return st;
}

struct ScreeningPoint {
  bool extrapolated = false;
  std::size_t step = 0;  // anchor step
  double tau = 0.0;
  Band estimate;
};

// Smoothed estimates p(tau = 0 | t) at every step, then extrapolations from
// the final step for tau = 1..tau_max.
inline std::vector<ScreeningPoint> screening_profile(const ModelParams& params, std::span<const double> inputs,
                                                     std::size_t binary_index, std::size_t tau_max, std::size_t J,
                                                     std::uint64_t seed, std::size_t threads = 1) {
  const std::size_t width = params.config.input_width();
  DATLAS_REQUIRE(!inputs.empty() && inputs.size() % width == 0, "screening_profile: trajectory must be nonempty");
  DATLAS_REQUIRE(binary_index < params.config.num_binary, "screening_profile: unknown binary variable");
  const std::size_t steps = inputs.size() / width;
  std::vector<ScreeningPoint> out;
  std::vector<double> tmp(J);
  for (std::size_t t = 0; t < steps; ++t) {
    const auto samples = mc_sample(params, inputs.first((t + 1) * width), 0.0, J, Rng(seed, t).next_u64(), threads);
    for (std::size_t j = 0; j < J; ++j) tmp[j] = samples[j].p[binary_index];
    out.push_back({false, t, 0.0, band(tmp)});
  }
  std::vector<double> taus;
  for (std::size_t k = 1; k <= tau_max; ++k) taus.push_back(static_cast<double>(k));
  const auto ext = mc_sample_horizons(params, inputs, taus, J, Rng(seed, steps).next_u64(), threads);
  for (std::size_t k = 0; k < taus.size(); ++k) {
    for (std::size_t j = 0; j < J; ++j) tmp[j] = ext[k][j].p[binary_index];
    out.push_back({true, steps - 1, taus[k], band(tmp)});
  }
  return out;
}

}  // namespace datlas
