#include "csfn/optim.hpp"

#include <cmath>

namespace csfn {

AdamState AdamState::for_parameter(const Parameter& p, AdamConfig cfg) {
  AdamState s;
  s.m = Tensor(p.value.rows(), p.value.cols());
  s.v = Tensor(p.value.rows(), p.value.cols());
  s.cfg = cfg;
  return s;
}

void adam_step(AdamState& state, Parameter& param) {
  if (!state.m.same_shape(param.value) || !param.grad.same_shape(param.value)) {
    throw ContractError("adam_step: moment shape mismatch for " + param.name);
  }
  if (!param.grad.all_finite()) throw TrainingError("non-finite gradient in parameter " + param.name);

  const AdamConfig& c = state.cfg;
  state.t += 1;
  const Real bias1 = 1.0 - std::pow(c.beta1, static_cast<Real>(state.t));
  const Real bias2 = 1.0 - std::pow(c.beta2, static_cast<Real>(state.t));
  for (std::size_t i = 0; i < param.value.size(); ++i) {
    const Real g = param.grad[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const Real m_hat = state.m[i] / bias1;
    const Real v_hat = state.v[i] / bias2;
    param.value[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : cfg_(cfg), params_(std::move(params)) {
  states_.reserve(params_.size());
  for (const Parameter* p : params_) states_.push_back(AdamState::for_parameter(*p, cfg_));
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) adam_step(states_[i], *params_[i]);
  ++steps_;
}

Real clip_grad_norm(const std::vector<Parameter*>& params, Real max_norm) {
  Real sq = 0.0;
  for (const Parameter* p : params)
    for (Real g : p->grad.values()) sq += g * g;
  const Real norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm && max_norm > 0.0) {
    const Real k = max_norm / norm;
    for (Parameter* p : params)
      for (Real& g : p->grad.values()) g *= k;
  }
  return norm;
}

}  // namespace csfn
