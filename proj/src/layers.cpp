#include "csfn/layers.hpp"

#include <cmath>

namespace csfn {

LayerNormParams LayerNormParams::create(ParameterStore& store, const std::string& prefix, std::size_t dim) {
  LayerNormParams p;
  p.gamma = &store.add_constant(prefix + ".gamma", 1, dim, 1.0);
  p.beta = &store.add_constant(prefix + ".beta", 1, dim, 0.0);
  return p;
}

FfnParams FfnParams::create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                            std::size_t out, Real init_scale, std::mt19937_64& rng) {
  if (hidden == 0) throw ContractError("ffn: inner dimension must be >= 1");
  FfnParams p;
  p.w1 = &store.add_uniform(prefix + ".w1", in, hidden, init_scale, rng);
  p.b1 = &store.add_constant(prefix + ".b1", 1, hidden, 0.0);
  p.w2 = &store.add_uniform(prefix + ".w2", hidden, out, init_scale, rng);
  p.b2 = &store.add_constant(prefix + ".b2", 1, out, 0.0);
  return p;
}

Var layer_norm(const Var& x, const LayerNormParams& p, Real eps) {
  Tape& t = x.tape();
  return ag::layer_norm(x, t.parameter(*p.gamma), t.parameter(*p.beta), eps);
}

Var ffn(const Var& x, const FfnParams& p, Real inner_dropout, std::mt19937_64* rng) {
  Tape& t = x.tape();
  Var h = ag::relu(ag::add_row(ag::matmul(x, t.parameter(*p.w1)), t.parameter(*p.b1)));
  if (rng && inner_dropout > 0.0) h = ag::dropout(h, inner_dropout, *rng);
  return ag::add_row(ag::matmul(h, t.parameter(*p.w2)), t.parameter(*p.b2));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  Tape t(false);
  return ag::layer_norm(t.constant(x), t.constant(gamma), t.constant(beta), eps).value();
}

Tensor ffn(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
  Tape t(false);
  Var h = ag::relu(ag::add_row(ag::matmul(t.constant(x), t.constant(w1)), t.constant(b1)));
  return ag::add_row(ag::matmul(h, t.constant(w2)), t.constant(b2)).value();
}

Tensor masked_softmax(const Tensor& logits, const Tensor& mask) {
  for (Real m : mask.values()) {
    if (m != 0.0 && m != 1.0) throw ContractError("masked_softmax: mask entries must be 0 or 1");
  }
  Tape t(false);
  return ag::softmax_rows(t.constant(logits), &mask).value();
}

Tensor softmax(const Tensor& logits) {
  Tape t(false);
  return ag::softmax_rows(t.constant(logits)).value();
}

Real cross_entropy(const Tensor& probs, const Tensor& onehot) {
  if (!probs.same_shape(onehot)) throw ContractError("cross_entropy: shape mismatch");
  std::size_t hot = 0;
  std::size_t ones = 0;
  for (std::size_t i = 0; i < onehot.size(); ++i) {
    if (onehot[i] == 1.0) {
      hot = i;
      ++ones;
    } else if (onehot[i] != 0.0) {
      throw ContractError("cross_entropy: onehot entries must be 0 or 1");
    }
  }
  if (ones != 1) throw ContractError("cross_entropy: onehot must contain exactly one 1");
  return -std::log(std::max(probs[hot], kProbFloor));
}

Var cross_entropy(const Var& probs, std::size_t label) { return ag::neg_log_at(probs, label, kProbFloor); }

}  // namespace csfn
