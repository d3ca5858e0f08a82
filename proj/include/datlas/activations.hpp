#pragma once

#include <cmath>

namespace datlas {

// ELU with alpha = 1.
inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double sigmoid_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}

inline double softplus(double x) { return std::fmax(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }
inline double softplus_grad(double x) { return sigmoid(x); }

// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

}  // namespace datlas
