#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csfn/autograd.hpp"

namespace csfn {

struct GradCheckOptions {
  Real h = 1e-5;
  Real tol = 1e-4;
  /// Coordinates to test; 0 means every coordinate of every parameter.
  std::size_t samples = 0;
  /// When sampling, at least this many coordinates of every parameter are
  /// included first (fewer if the parameter is smaller).
  std::size_t per_parameter = 0;
  std::uint64_t seed = 0;
  /// Lower bound on the relative-error denominator so that coordinates with a
  /// vanishing true gradient are judged on absolute error.
  Real denom_floor = 1e-6;
};

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  Real analytic = 0.0;
  Real numeric = 0.0;
  Real rel_error = 0.0;
};

struct GradCheckReport {
  Real max_rel_error = 0.0;
  std::size_t checked = 0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> entries;
  bool passed = true;
};

/// Records the scalar objective on the given tape.
using ScalarFn = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients of `fn` against central differences
/// (f(x+h) - f(x-h)) / 2h on the given parameters.
GradCheckReport grad_check(const ScalarFn& fn, const std::vector<Parameter*>& params,
                           const GradCheckOptions& opts = {});

}  // namespace csfn
