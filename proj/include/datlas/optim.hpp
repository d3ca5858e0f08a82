#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "datlas/errors.hpp"
#include "datlas/rng.hpp"
#include "datlas/tensor.hpp"

namespace datlas {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

// One bias-corrected Adam update. Moments are allocated on first use.
inline void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state,
                      double learning_rate) {
  DATLAS_REQUIRE(learning_rate >= 0.0, "adam_step: learning rate must be non-negative");
  DATLAS_REQUIRE(params.size() == grads.size(), "adam_step: parameter/gradient count mismatch");
  if (state.first_moment.empty()) {
    for (const Tensor& p : params) {
      state.first_moment.emplace_back(p.rows(), p.cols());
      state.second_moment.emplace_back(p.rows(), p.cols());
    }
  }
  DATLAS_REQUIRE(state.first_moment.size() == params.size(), "adam_step: state was built for other parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    DATLAS_REQUIRE(params[k].same_shape(grads[k]) && params[k].same_shape(state.first_moment[k]),
                   "adam_step: shape mismatch");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    const Tensor& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

inline double global_norm(std::span<const Tensor> grads) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.values()) sq += v * v;
  return std::sqrt(sq);
}

// Rescales grads so their joint L2 norm is at most max_norm. Returns the
// norm before clipping.
inline double clip_global_norm(std::span<Tensor> grads, double max_norm) {
  DATLAS_REQUIRE(max_norm > 0.0, "clip_global_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor& g : grads)
      for (double& v : g.values()) v *= s;
  }
  return norm;
}

// Inverted-dropout mask: each entry is 0 with probability 1 - keep_prob and
// 1 / keep_prob otherwise, so every entry has expectation 1.
inline std::vector<double> bernoulli_mask(Rng& rng, std::size_t length, double keep_prob) {
  DATLAS_REQUIRE(keep_prob > 0.0 && keep_prob <= 1.0, "bernoulli_mask: keep_prob must lie in (0, 1]");
  std::vector<double> mask(length, 1.0);
  if (keep_prob == 1.0) return mask;
  const double scale = 1.0 / keep_prob;
  for (double& m : mask) m = rng.uniform() < keep_prob ? scale : 0.0;
  return mask;
}

}  // namespace datlas
