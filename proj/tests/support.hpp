#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "csfn/autograd.hpp"

namespace testing {

using csfn::Real;
using csfn::Tensor;

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, Real scale = 1.0) {
  std::uniform_real_distribution<Real> dist(-scale, scale);
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

inline std::size_t random_extent(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

// Random 0/1 mask with at least one allowed entry per row.
inline Tensor random_mask(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Tensor m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = (rng() % 2) ? 1.0 : 0.0;
    m(r, rng() % cols) = 1.0;
  }
  return m;
}

// Central differences of a scalar function of one tensor, computed without
// the tape.
inline Tensor numeric_gradient(const std::function<Real(const Tensor&)>& f, Tensor x, Real h = 1e-5) {
  Tensor g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real saved = x[i];
    x[i] = saved + h;
    const Real up = f(x);
    x[i] = saved - h;
    const Real down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline Real rel_error(Real a, Real b, Real floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline Real max_rel_error(const Tensor& a, const Tensor& b) {
  Real worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_error(a[i], b[i]));
  return worst;
}

// Reference row softmax restricted to mask == 1 (null mask allows all).
inline Tensor reference_softmax(const Tensor& logits, const Tensor* mask = nullptr) {
  Tensor out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    Real mx = -INFINITY;
    for (std::size_t c = 0; c < logits.cols(); ++c)
      if (!mask || (*mask)(r, c) != 0.0) mx = std::max(mx, logits(r, c));
    if (mx == -INFINITY) continue;
    Real z = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      if (mask && (*mask)(r, c) == 0.0) continue;
      out(r, c) = std::exp(logits(r, c) - mx);
      z += out(r, c);
    }
    for (std::size_t c = 0; c < logits.cols(); ++c) out(r, c) /= z;
  }
  return out;
}

// Plain triple-loop product.
inline Tensor reference_matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += a(i, k) * b(k, j);
  return out;
}

inline Tensor reference_layer_norm(const Tensor& x, Real eps) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    Real mean = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= static_cast<Real>(x.cols());
    Real var = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<Real>(x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean) / std::sqrt(var + eps);
  }
  return out;
}

}  // namespace testing
