#pragma once

#include <array>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "csfn/encoding.hpp"
#include "csfn/layers.hpp"
#include "csfn/schema.hpp"
#include "csfn/state.hpp"

namespace csfn {

enum class Gate : std::size_t { kNone = 0, kDontCare = 1, kPtr = 2 };
inline constexpr std::size_t kNumGates = 3;

std::string to_string(Gate g);
Gate parse_gate(const std::string& s);

/// Index of the largest entry; on exact ties the highest index wins.
std::size_t argmax_high(std::span<const Real> values);

struct GatePrediction {
  std::array<Real, kNumGates> probs{};
  Gate argmax = Gate::kNone;
};

struct GateOutput {
  Var probs;  // J x 3
  std::vector<GatePrediction> predictions;
};

/// softmax(FFN(row M+N+j of the final graph states)) for every pair j.
GateOutput slot_gate(const Var& graph_states, const SchemaGraph& g, const FfnParams& gate_ffn);

/// Summed cross-entropy over all pairs.
Var gate_loss(const Var& gate_probs, const std::vector<Gate>& labels);
Real gate_loss(const std::vector<GatePrediction>& preds, const std::vector<Gate>& labels);

/// Zero-based pair indices whose argmax gate is PTR, ascending.
std::vector<std::size_t> select_ptr_slots(const std::vector<GatePrediction>& preds);

/// Additive attention: softmax_i( tanh(x W1 + h_i W2 + b) v^T ).
struct AttParams {
  Parameter* w1 = nullptr;
  Parameter* w2 = nullptr;
  Parameter* bias = nullptr;
  Parameter* v = nullptr;
};

Var att(const Var& x, const Var& memory, const AttParams& p);
/// Same distribution with `memory W2` precomputed.
Var att_projected(const Var& x, const Var& memory_w2, const AttParams& p);

struct GruParams {
  Parameter* wz = nullptr;
  Parameter* wr = nullptr;
  Parameter* wn = nullptr;
  Parameter* uz = nullptr;
  Parameter* ur = nullptr;
  Parameter* un = nullptr;
  Parameter* bz = nullptr;
  Parameter* br = nullptr;
  Parameter* bn = nullptr;
};

/// z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br),
/// n = tanh(x Wn + (r*h) Un + bn), h' = (1 - z) * n + z * h.
Var gru_cell(const Var& hidden, const Var& input, const GruParams& p);

struct DecoderParams {
  GruParams gru;
  AttParams att;
  Parameter* w_proj = nullptr;  // 2d x d
  Parameter* w_gen = nullptr;   // 3d x 1
  Parameter* embedding = nullptr;  // shared token table, vocab x d

  static DecoderParams create(ParameterStore& store, Parameter& shared_embedding, std::size_t d_model,
                              Real init_scale, std::mt19937_64& rng);
};

/// Per-turn decoder inputs: [H^X; H^B], its attention projection, the token
/// ids at each memory position and the initial hidden state H^X_0 + H^B_0.
struct DecoderMemory {
  Var memory;
  Var memory_w2;
  std::vector<TokenId> ids;
  Var init_hidden;
};

DecoderMemory prepare_decoder(const Var& utterance_states, const Var& state_states,
                              const std::vector<TokenId>& utterance_ids, const std::vector<TokenId>& state_ids,
                              const DecoderParams& p);

struct DecoderStep {
  Var hidden;   // g_k
  Var p_ctx;    // 1 x (|X| + |B|)
  Var p_vocab;  // 1 x V
  Var p_gen;    // 1 x 1
  Var p_value;  // 1 x V
};

/// One pointer-generator step from hidden `prev` with input embedding `input`.
DecoderStep decoder_step(const Var& prev, const Var& input, const DecoderMemory& mem, const DecoderParams& p);

/// Teacher-forced value loss for one pair: the first input is the pair's
/// graph node state, later inputs are embeddings of the gold tokens.
/// `gold` ends with [EOS].
Var value_loss(const Var& slot_node_state, const DecoderMemory& mem, const DecoderParams& p,
               const std::vector<TokenId>& gold);

/// Loss from already computed per-step distributions.
Real value_loss(const std::vector<Tensor>& step_distributions, const std::vector<TokenId>& gold);

/// Greedy decoding. Stops at [EOS] (not returned) or after `max_len` tokens;
/// reserved tokens are never emitted.
std::vector<TokenId> decode_value(const Var& slot_node_state, const DecoderMemory& mem, const DecoderParams& p,
                                  const Vocabulary& vocab, std::size_t max_len);

/// Builds B_t: NONE drops the pair, DONTCARE writes "dont care", PTR writes
/// the decoded text. Empty decoded values are dropped.
DialogueState assemble_state(const std::vector<Gate>& gates, const std::map<std::size_t, std::string>& values,
                             const SchemaGraph& g, bool warn_empty = true);

}  // namespace csfn
