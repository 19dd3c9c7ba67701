#include "csfn/prediction.hpp"

#include <cmath>
#include <limits>

#include "csfn/log.hpp"

namespace csfn {

std::string to_string(Gate g) {
  switch (g) {
    case Gate::kNone:
      return "NONE";
    case Gate::kDontCare:
      return "DONTCARE";
    case Gate::kPtr:
      return "PTR";
  }
  return "NONE";
}

Gate parse_gate(const std::string& s) {
  if (s == "NONE") return Gate::kNone;
  if (s == "DONTCARE") return Gate::kDontCare;
  if (s == "PTR") return Gate::kPtr;
  throw ContractError("unknown gate class: " + s);
}

std::size_t argmax_high(std::span<const Real> values) {
  if (values.empty()) throw ContractError("argmax of an empty row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] >= values[best]) best = i;
  return best;
}

GateOutput slot_gate(const Var& graph_states, const SchemaGraph& g, const FfnParams& gate_ffn) {
  if (graph_states.rows() != g.num_nodes()) {
    throw ContractError("slot_gate: graph states have " + std::to_string(graph_states.rows()) + " rows, expected " +
                        std::to_string(g.num_nodes()));
  }
  Var pair_rows = ag::slice_rows(graph_states, domain_slot_row_index(g, 1), g.num_pairs());
  GateOutput out;
  out.probs = ag::softmax_rows(ffn(pair_rows, gate_ffn));
  const Tensor& p = out.probs.value();
  for (std::size_t j = 0; j < g.num_pairs(); ++j) {
    GatePrediction gp;
    for (std::size_t c = 0; c < kNumGates; ++c) gp.probs[c] = p(j, c);
    gp.argmax = static_cast<Gate>(argmax_high(gp.probs));
    out.predictions.push_back(gp);
  }
  return out;
}

Var gate_loss(const Var& gate_probs, const std::vector<Gate>& labels) {
  require_shape(gate_probs.value(), labels.size(), kNumGates, "gate_loss");
  std::vector<Var> terms;
  terms.reserve(labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) {
    terms.push_back(cross_entropy(ag::slice_rows(gate_probs, j, 1), static_cast<std::size_t>(labels[j])));
  }
  return ag::add_n(terms);
}

Real gate_loss(const std::vector<GatePrediction>& preds, const std::vector<Gate>& labels) {
  if (preds.size() != labels.size()) throw ContractError("gate_loss: prediction/label count mismatch");
  Real total = 0.0;
  for (std::size_t j = 0; j < preds.size(); ++j) {
    Tensor probs(1, kNumGates);
    Tensor onehot(1, kNumGates);
    for (std::size_t c = 0; c < kNumGates; ++c) probs[c] = preds[j].probs[c];
    onehot[static_cast<std::size_t>(labels[j])] = 1.0;
    total += cross_entropy(probs, onehot);
  }
  return total;
}

std::vector<std::size_t> select_ptr_slots(const std::vector<GatePrediction>& preds) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < preds.size(); ++j)
    if (static_cast<Gate>(argmax_high(preds[j].probs)) == Gate::kPtr) out.push_back(j);
  return out;
}

Var att_projected(const Var& x, const Var& memory_w2, const AttParams& p) {
  Tape& t = x.tape();
  Var query = ag::add(ag::matmul(x, t.parameter(*p.w1)), t.parameter(*p.bias));
  Var hidden = ag::tanh(ag::add_row(memory_w2, query));
  Var scores = ag::matmul_nt(t.parameter(*p.v), hidden);  // 1 x S
  return ag::softmax_rows(scores);
}

Var att(const Var& x, const Var& memory, const AttParams& p) {
  return att_projected(x, ag::matmul(memory, x.tape().parameter(*p.w2)), p);
}

Var gru_cell(const Var& hidden, const Var& input, const GruParams& p) {
  Tape& t = hidden.tape();
  auto gate = [&](Parameter* w, Parameter* u, Parameter* b) {
    return ag::add_n({ag::matmul(input, t.parameter(*w)), ag::matmul(hidden, t.parameter(*u)), t.parameter(*b)});
  };
  Var z = ag::sigmoid(gate(p.wz, p.uz, p.bz));
  Var r = ag::sigmoid(gate(p.wr, p.ur, p.br));
  Var n = ag::tanh(ag::add_n({ag::matmul(input, t.parameter(*p.wn)),
                              ag::matmul(ag::mul(r, hidden), t.parameter(*p.un)), t.parameter(*p.bn)}));
  return ag::add(ag::mul(ag::affine(z, -1.0, 1.0), n), ag::mul(z, hidden));
}

DecoderParams DecoderParams::create(ParameterStore& store, Parameter& shared_embedding, std::size_t d,
                                    Real init_scale, std::mt19937_64& rng) {
  DecoderParams p;
  p.embedding = &shared_embedding;
  p.gru.wz = &store.add_uniform("decoder.gru.wz", d, d, init_scale, rng);
  p.gru.wr = &store.add_uniform("decoder.gru.wr", d, d, init_scale, rng);
  p.gru.wn = &store.add_uniform("decoder.gru.wn", d, d, init_scale, rng);
  p.gru.uz = &store.add_uniform("decoder.gru.uz", d, d, init_scale, rng);
  p.gru.ur = &store.add_uniform("decoder.gru.ur", d, d, init_scale, rng);
  p.gru.un = &store.add_uniform("decoder.gru.un", d, d, init_scale, rng);
  p.gru.bz = &store.add_constant("decoder.gru.bz", 1, d, 0.0);
  p.gru.br = &store.add_constant("decoder.gru.br", 1, d, 0.0);
  p.gru.bn = &store.add_constant("decoder.gru.bn", 1, d, 0.0);
  p.att.w1 = &store.add_uniform("decoder.att.w1", d, d, init_scale, rng);
  p.att.w2 = &store.add_uniform("decoder.att.w2", d, d, init_scale, rng);
  p.att.bias = &store.add_constant("decoder.att.b", 1, d, 0.0);
  p.att.v = &store.add_uniform("decoder.att.v", 1, d, init_scale, rng);
  p.w_proj = &store.add_uniform("decoder.w_proj", 2 * d, d, init_scale, rng);
  p.w_gen = &store.add_uniform("decoder.w_gen", 3 * d, 1, init_scale, rng);
  return p;
}

DecoderMemory prepare_decoder(const Var& utterance_states, const Var& state_states,
                              const std::vector<TokenId>& utterance_ids, const std::vector<TokenId>& state_ids,
                              const DecoderParams& p) {
  if (utterance_states.rows() != utterance_ids.size() || state_states.rows() != state_ids.size()) {
    throw ContractError("prepare_decoder: ids do not match hidden-state rows");
  }
  DecoderMemory mem;
  mem.memory = ag::concat_rows({utterance_states, state_states});
  mem.memory_w2 = ag::matmul(mem.memory, utterance_states.tape().parameter(*p.att.w2));
  mem.ids = utterance_ids;
  mem.ids.insert(mem.ids.end(), state_ids.begin(), state_ids.end());
  mem.init_hidden = ag::add(ag::slice_rows(utterance_states, 0, 1), ag::slice_rows(state_states, 0, 1));
  return mem;
}

DecoderStep decoder_step(const Var& prev, const Var& input, const DecoderMemory& mem, const DecoderParams& p) {
  Tape& t = prev.tape();
  Var table = t.parameter(*p.embedding);
  DecoderStep s;
  s.hidden = gru_cell(prev, input, p.gru);
  s.p_ctx = att_projected(s.hidden, mem.memory_w2, p.att);
  Var context = ag::matmul(s.p_ctx, mem.memory);
  Var projected = ag::matmul(ag::concat_cols({s.hidden, context}), t.parameter(*p.w_proj));
  s.p_vocab = ag::softmax_rows(ag::matmul_nt(projected, table));
  s.p_gen = ag::sigmoid(ag::matmul(ag::concat_cols({s.hidden, input, context}), t.parameter(*p.w_gen)));
  Var copied = ag::scatter_cols(s.p_ctx, mem.ids, table.rows());
  s.p_value = ag::add(ag::scale_by(s.p_gen, s.p_vocab), ag::scale_by(ag::affine(s.p_gen, -1.0, 1.0), copied));
  return s;
}

Var value_loss(const Var& slot_node_state, const DecoderMemory& mem, const DecoderParams& p,
               const std::vector<TokenId>& gold) {
  if (gold.empty() || gold.back() != Vocabulary::kEos) throw ContractError("value_loss: gold must end with [EOS]");
  Tape& t = slot_node_state.tape();
  Var table = t.parameter(*p.embedding);
  Var hidden = mem.init_hidden;
  Var input = slot_node_state;
  std::vector<Var> terms;
  terms.reserve(gold.size());
  for (std::size_t k = 0; k < gold.size(); ++k) {
    DecoderStep s = decoder_step(hidden, input, mem, p);
    terms.push_back(ag::neg_log_at(s.p_value, static_cast<std::size_t>(gold[k]), kProbFloor));
    hidden = s.hidden;
    if (k + 1 < gold.size()) {
      const TokenId next = gold[k];
      input = ag::gather_rows(table, std::span<const TokenId>(&next, 1));
    }
  }
  return ag::add_n(terms);
}

Real value_loss(const std::vector<Tensor>& step_distributions, const std::vector<TokenId>& gold) {
  if (step_distributions.size() != gold.size()) throw ContractError("value_loss: step/gold length mismatch");
  Real total = 0.0;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    const Tensor& p = step_distributions[k];
    if (gold[k] < 0 || static_cast<std::size_t>(gold[k]) >= p.cols()) throw ContractError("value_loss: bad gold id");
    total += -std::log(std::max(p[static_cast<std::size_t>(gold[k])], kProbFloor));
  }
  return total;
}

std::vector<TokenId> decode_value(const Var& slot_node_state, const DecoderMemory& mem, const DecoderParams& p,
                                  const Vocabulary& vocab, std::size_t max_len) {
  Tape& t = slot_node_state.tape();
  Var table = t.parameter(*p.embedding);
  Var hidden = mem.init_hidden;
  Var input = slot_node_state;
  std::vector<TokenId> out;
  while (out.size() < max_len) {
    DecoderStep s = decoder_step(hidden, input, mem, p);
    const Tensor& dist = s.p_value.value();
    TokenId best = Vocabulary::kEos;
    Real best_p = -std::numeric_limits<Real>::infinity();
    for (std::size_t v = 0; v < dist.cols(); ++v) {
      const auto id = static_cast<TokenId>(v);
      if (id != Vocabulary::kEos && vocab.is_reserved(id)) continue;
      if (dist[v] >= best_p) {
        best_p = dist[v];
        best = id;
      }
    }
    if (best == Vocabulary::kEos) break;
    out.push_back(best);
    hidden = s.hidden;
    input = ag::gather_rows(table, std::span<const TokenId>(&out.back(), 1));
  }
  return out;
}

DialogueState assemble_state(const std::vector<Gate>& gates, const std::map<std::size_t, std::string>& values,
                             const SchemaGraph& g, bool warn_empty) {
  if (gates.size() != g.num_pairs()) throw ContractError("assemble_state: one gate per domain-slot pair expected");
  DialogueState out;
  for (std::size_t j = 0; j < gates.size(); ++j) {
    const auto& pair = g.pairs()[j];
    switch (gates[j]) {
      case Gate::kNone:
        break;
      case Gate::kDontCare:
        out.set(pair.domain, pair.slot, kDontCare);
        break;
      case Gate::kPtr: {
        auto it = values.find(j);
        if (it == values.end() || it->second.empty()) {
          if (warn_empty) log_warn("empty value decoded for " + pair.key() + "; slot omitted");
          break;
        }
        out.set(pair.domain, pair.slot, it->second);
        break;
      }
    }
  }
  return out;
}

}  // namespace csfn
