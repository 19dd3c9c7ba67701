#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "csfn/parameter.hpp"

namespace csfn {

/// Non-finite loss or gradient during training.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  Real lr = 1e-4;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::int64_t t = 0;
  AdamConfig cfg;

  static AdamState for_parameter(const Parameter& p, AdamConfig cfg = {});
};

/// One bias-corrected ADAM update of `param` from `param.grad`.
void adam_step(AdamState& state, Parameter& param);

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  void step();
  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Parameter*> params_;
  std::vector<AdamState> states_;
  std::int64_t steps_ = 0;
};

/// Scales every gradient so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
Real clip_grad_norm(const std::vector<Parameter*>& params, Real max_norm);

}  // namespace csfn
