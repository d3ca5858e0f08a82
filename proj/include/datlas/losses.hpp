#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "datlas/errors.hpp"
#include "datlas/graph.hpp"

namespace datlas {

inline constexpr double kProbabilityClamp = 1e-9;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

// Negative log density of N(mu, sigma^2) at y.
inline double gaussian_nll(double y, double mu, double sigma) {
  DATLAS_REQUIRE(sigma > 0.0, "gaussian_nll: sigma must be positive");
  const double r = (y - mu) / sigma;
  return kHalfLog2Pi + std::log(sigma) + 0.5 * r * r;
}

inline double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

inline double bernoulli_nll(double b, double p) {
  DATLAS_REQUIRE(b == 0.0 || b == 1.0, "bernoulli_nll: outcome must be 0 or 1");
  const double q = clamp_probability(p);
  return b == 1.0 ? -std::log(q) : -std::log1p(-q);
}

// -log(lambda^delta * exp(-lambda * T)): event observed at T when delta = 1,
// event-free through T otherwise.
inline double exponential_nll(double time, double delta, double lambda) {
  DATLAS_REQUIRE(lambda > 0.0, "exponential_nll: rate must be positive");
  DATLAS_REQUIRE(delta == 0.0 || delta == 1.0, "exponential_nll: indicator must be 0 or 1");
  return -(delta * std::log(lambda) - lambda * time);
}

struct LossWeights {
  double continuous = 1.0;
  double binary = 1.0;
  double survival = 1.0;
};

struct TaskLosses {
  double continuous = 0.0;
  double binary = 0.0;
  double survival = 0.0;
};

// Targets of one window. Masks are 0/1; entries with mask 0 are ignored and
// may hold anything (including NaN).
struct TargetBundle {
  std::vector<double> continuous;
  std::vector<double> continuous_mask;
  std::vector<double> binary;
  std::vector<double> binary_mask;
  std::vector<double> event_time;
  std::vector<double> event_indicator;
};

// Model outputs parameterising the predictive distributions.
struct DistributionParams {
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<double> p;
  std::vector<double> lambda;
};

inline TaskLosses task_losses(const DistributionParams& out, const TargetBundle& t) {
  DATLAS_REQUIRE(out.mu.size() == t.continuous.size() && out.sigma.size() == t.continuous.size() &&
                     t.continuous_mask.size() == t.continuous.size(),
                 "task_losses: continuous dimension mismatch");
  DATLAS_REQUIRE(out.p.size() == t.binary.size() && t.binary_mask.size() == t.binary.size(),
                 "task_losses: binary dimension mismatch");
  DATLAS_REQUIRE(out.lambda.size() == t.event_time.size() && t.event_indicator.size() == t.event_time.size(),
                 "task_losses: event dimension mismatch");
  TaskLosses l;
  for (std::size_t k = 0; k < t.continuous.size(); ++k) {
    if (t.continuous_mask[k] != 0.0) l.continuous += gaussian_nll(t.continuous[k], out.mu[k], out.sigma[k]);
  }
  for (std::size_t k = 0; k < t.binary.size(); ++k) {
    if (t.binary_mask[k] != 0.0) l.binary += bernoulli_nll(t.binary[k], out.p[k]);
  }
  for (std::size_t m = 0; m < t.event_time.size(); ++m) {
    l.survival += exponential_nll(t.event_time[m], t.event_indicator[m], out.lambda[m]);
  }
  return l;
}

inline double combined_loss(const TaskLosses& l, const LossWeights& w) {
  DATLAS_REQUIRE(w.continuous > 0.0 && w.binary > 0.0 && w.survival > 0.0, "combined_loss: weights must be positive");
  return w.continuous * l.continuous + w.binary * l.binary + w.survival * l.survival;
}

// Graph versions. Each returns a scalar node holding the masked sum, with
// analytic partials with respect to the distribution-parameter nodes.
namespace graph_loss {

inline Graph::Node gaussian(Graph& g, Graph::Node mu, Graph::Node sigma, std::span<const double> y,
                            std::span<const double> mask) {
  return g.reduce(mu, sigma, [&](std::size_t k, double m, double s) -> Graph::Partial {
    if (mask[k] == 0.0) return {};
    const double r = y[k] - m;
    const double inv = 1.0 / s;
    return {gaussian_nll(y[k], m, s), -r * inv * inv, inv - r * r * inv * inv * inv};
  });
}

inline Graph::Node bernoulli(Graph& g, Graph::Node p, std::span<const double> b, std::span<const double> mask) {
  return g.reduce(p, [&](std::size_t k, double pk) -> Graph::Partial {
    if (mask[k] == 0.0) return {};
    const bool inside = pk > kProbabilityClamp && pk < 1.0 - kProbabilityClamp;
    const double q = clamp_probability(pk);
    const double d = inside ? (b[k] == 1.0 ? -1.0 / q : 1.0 / (1.0 - q)) : 0.0;
    return {bernoulli_nll(b[k], pk), d, 0.0};
  });
}

inline Graph::Node exponential(Graph& g, Graph::Node lambda, std::span<const double> time,
                               std::span<const double> delta) {
  return g.reduce(lambda, [&](std::size_t m, double l) -> Graph::Partial {
    return {exponential_nll(time[m], delta[m], l), -delta[m] / l + time[m], 0.0};
  });
}

}  // namespace graph_loss

}  // namespace datlas
