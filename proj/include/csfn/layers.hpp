#pragma once

#include <string>

#include "csfn/autograd.hpp"

namespace csfn {

/// Probability floor applied before every log in the losses.
inline constexpr Real kProbFloor = 1e-12;
inline constexpr Real kLayerNormEps = 1e-6;

struct LayerNormParams {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  static LayerNormParams create(ParameterStore& store, const std::string& prefix, std::size_t dim);
};

/// max(0, x W1 + b1) W2 + b2, applied rowwise.
struct FfnParams {
  Parameter* w1 = nullptr;
  Parameter* b1 = nullptr;
  Parameter* w2 = nullptr;
  Parameter* b2 = nullptr;

  static FfnParams create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                          std::size_t out, Real init_scale, std::mt19937_64& rng);
};

Var layer_norm(const Var& x, const LayerNormParams& p, Real eps = kLayerNormEps);
/// `inner_dropout` is applied to the ReLU activations when `rng` is non-null.
Var ffn(const Var& x, const FfnParams& p, Real inner_dropout = 0.0, std::mt19937_64* rng = nullptr);

// Value-level entry points, evaluated on a throwaway tape.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps);
Tensor ffn(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2);
Tensor masked_softmax(const Tensor& logits, const Tensor& mask);
Tensor softmax(const Tensor& logits);

/// -log(probs . onehot) with the probability clamped at kProbFloor.
Real cross_entropy(const Tensor& probs, const Tensor& onehot);
/// Same loss on the tape, for a label given as a class index.
Var cross_entropy(const Var& probs, std::size_t label);

}  // namespace csfn
