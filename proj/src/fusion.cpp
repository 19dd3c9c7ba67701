#include "csfn/fusion.hpp"

#include <cmath>

namespace csfn {

void ModelConfig::validate() const {
  if (d_model == 0) throw ContractError("d_model must be positive");
  if (heads == 0 || d_model % heads != 0) {
    throw ContractError("heads (" + std::to_string(heads) + ") must divide d_model (" + std::to_string(d_model) + ")");
  }
  if (layers < 1) throw ContractError("at least one fusion layer is required");
  if (max_decode_len < 1) throw ContractError("max_decode_len must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ContractError("dropout must be in [0, 1)");
  if (max_positions < 3) throw ContractError("max_positions too small");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},       {"heads", heads},
          {"layers", layers},         {"ffn_dim", ffn_width()},
          {"max_decode_len", max_decode_len}, {"max_positions", max_positions},
          {"dropout", dropout},       {"init_scale", init_scale},
          {"strict_paper", strict_paper}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.layers = j.value("layers", c.layers);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.max_decode_len = j.value("max_decode_len", c.max_decode_len);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.dropout = j.value("dropout", c.dropout);
  c.init_scale = j.value("init_scale", c.init_scale);
  c.strict_paper = j.value("strict_paper", c.strict_paper);
  c.validate();
  return c;
}

AttentionParams AttentionParams::create(ParameterStore& store, const std::string& prefix, std::size_t d_model,
                                        Real init_scale, std::mt19937_64& rng) {
  AttentionParams p;
  p.wq = &store.add_uniform(prefix + ".wq", d_model, d_model, init_scale, rng);
  p.wk = &store.add_uniform(prefix + ".wk", d_model, d_model, init_scale, rng);
  p.wv = &store.add_uniform(prefix + ".wv", d_model, d_model, init_scale, rng);
  p.wo = &store.add_uniform(prefix + ".wo", d_model, d_model, init_scale, rng);
  return p;
}

namespace {

Var attention(const Var& y, const Var& z, const AdjacencyMatrix* mask, const AttentionParams& p, std::size_t heads,
              AttentionWeights* weights) {
  const std::size_t d = y.cols();
  if (z.cols() != d) throw ContractError("attention: query and key widths differ");
  if (heads == 0 || d % heads != 0) throw ContractError("attention: heads must divide d_model");
  if (mask) require_shape(*mask, y.rows(), z.rows(), "attention mask");
  Tape& t = y.tape();
  const std::size_t dh = d / heads;
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));

  Var q = ag::matmul(y, t.parameter(*p.wq));
  Var k = ag::matmul(z, t.parameter(*p.wk));
  Var v = ag::matmul(z, t.parameter(*p.wv));
  if (weights) weights->clear();

  std::vector<Var> contexts;
  contexts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : ag::slice_cols(q, h * dh, dh);
    Var kh = heads == 1 ? k : ag::slice_cols(k, h * dh, dh);
    Var vh = heads == 1 ? v : ag::slice_cols(v, h * dh, dh);
    Var probs = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), scale), mask);
    if (weights) weights->push_back(probs.value());
    contexts.push_back(ag::matmul(probs, vh));
  }
  Var joined = heads == 1 ? contexts.front() : ag::concat_cols(contexts);
  return ag::matmul(joined, t.parameter(*p.wo));
}

StreamParams make_stream(ParameterStore& store, const std::string& prefix, const std::string& internal,
                         const std::string& ext_a, const std::string& ext_b, const ModelConfig& cfg,
                         std::mt19937_64& rng) {
  StreamParams s;
  s.internal = AttentionParams::create(store, prefix + "." + internal, cfg.d_model, cfg.init_scale, rng);
  s.external_a = AttentionParams::create(store, prefix + "." + ext_a, cfg.d_model, cfg.init_scale, rng);
  s.external_b = AttentionParams::create(store, prefix + "." + ext_b, cfg.d_model, cfg.init_scale, rng);
  const std::string stream = prefix + "." + internal.substr(0, 1);
  s.ffn = FfnParams::create(store, stream + ".ffn", cfg.d_model, cfg.ffn_width(), cfg.d_model, cfg.init_scale, rng);
  s.norm_attn = LayerNormParams::create(store, stream + ".norm_attn", cfg.d_model);
  s.norm_ffn = LayerNormParams::create(store, stream + ".norm_ffn", cfg.d_model);
  return s;
}

Var maybe_dropout(const Var& v, const DropoutContext& dc) {
  return dc.active() ? ag::dropout(v, dc.rate, *dc.rng) : v;
}

// LayerNorm(H + I + E_a + E_b), then LayerNorm(C + FFN(C)).
Var update_stream(const Var& h, const Var& internal, const Var& ext_a, const Var& ext_b, const StreamParams& p,
                  const DropoutContext& dc) {
  Var c = layer_norm(ag::add_n({h, maybe_dropout(internal, dc), maybe_dropout(ext_a, dc), maybe_dropout(ext_b, dc)}),
                     p.norm_attn);
  Var f = ffn(c, p.ffn, dc.active() ? dc.rate : 0.0, dc.active() ? dc.rng : nullptr);
  return layer_norm(ag::add(c, f), p.norm_ffn);
}

}  // namespace

Var multi_head_attention(const Var& y, const Var& z, const AttentionParams& p, std::size_t heads,
                         AttentionWeights* weights) {
  return attention(y, z, nullptr, p, heads, weights);
}

Var graph_multi_head_attention(const Var& y, const Var& z, const AdjacencyMatrix& mask, const AttentionParams& p,
                               std::size_t heads, AttentionWeights* weights) {
  return attention(y, z, &mask, p, heads, weights);
}

CsfnLayerParams CsfnLayerParams::create(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg,
                                        std::mt19937_64& rng) {
  CsfnLayerParams p;
  p.g = make_stream(store, prefix, "gg", "gx", "gb", cfg, rng);
  p.x = make_stream(store, prefix, "xx", "xb", "xg", cfg, rng);
  p.b = make_stream(store, prefix, "bb", "bx", "bg", cfg, rng);
  return p;
}

FusionStates csfn_layer(const FusionStates& in, const AdjacencyMatrix& graph_adj, const AdjacencyMatrix& state_adj,
                        const CsfnLayerParams& p, std::size_t heads, DropoutContext dropout) {
  require_shape(graph_adj, in.g.rows(), in.g.rows(), "graph adjacency");
  require_shape(state_adj, in.b.rows(), in.b.rows(), "state adjacency");

  Var i_gg = graph_multi_head_attention(in.g, in.g, graph_adj, p.g.internal, heads);
  Var e_gx = multi_head_attention(in.g, in.x, p.g.external_a, heads);
  Var e_gb = multi_head_attention(in.g, in.b, p.g.external_b, heads);

  Var i_xx = multi_head_attention(in.x, in.x, p.x.internal, heads);
  Var e_xb = multi_head_attention(in.x, in.b, p.x.external_a, heads);
  Var e_xg = multi_head_attention(in.x, in.g, p.x.external_b, heads);

  Var i_bb = graph_multi_head_attention(in.b, in.b, state_adj, p.b.internal, heads);
  Var e_bx = multi_head_attention(in.b, in.x, p.b.external_a, heads);
  Var e_bg = multi_head_attention(in.b, in.g, p.b.external_b, heads);

  FusionStates out;
  out.g = update_stream(in.g, i_gg, e_gx, e_gb, p.g, dropout);
  out.x = update_stream(in.x, i_xx, e_xb, e_xg, p.x, dropout);
  out.b = update_stream(in.b, i_bb, e_bx, e_bg, p.b, dropout);
  return out;
}

FusionStates csfn_forward(const FusionStates& in, const AdjacencyMatrix& graph_adj, const AdjacencyMatrix& state_adj,
                          const std::vector<CsfnLayerParams>& layers, std::size_t heads, DropoutContext dropout) {
  if (layers.empty()) throw ContractError("csfn_forward: no layers");
  FusionStates h = in;
  for (const auto& layer : layers) h = csfn_layer(h, graph_adj, state_adj, layer, heads, dropout);
  return h;
}

}  // namespace csfn
