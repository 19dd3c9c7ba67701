#pragma once

#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "csfn/layers.hpp"
#include "csfn/schema.hpp"

namespace csfn {

struct ModelConfig {
  std::size_t d_model = 400;
  std::size_t heads = 4;
  std::size_t layers = 6;
  /// Inner width of every FFN; 0 means 4 * d_model.
  std::size_t ffn_dim = 0;
  std::size_t max_decode_len = 10;
  std::size_t max_positions = 192;
  Real dropout = 0.1;
  Real init_scale = 0.1;
  /// Turns dropout off regardless of `dropout`.
  bool strict_paper = false;

  std::size_t ffn_width() const { return ffn_dim == 0 ? 4 * d_model : ffn_dim; }
  Real effective_dropout() const { return strict_paper ? 0.0 : dropout; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Per-head projections are the column blocks of d x d matrices: head h uses
/// columns [h*d/H, (h+1)*d/H) of wq, wk and wv.
struct AttentionParams {
  Parameter* wq = nullptr;
  Parameter* wk = nullptr;
  Parameter* wv = nullptr;
  Parameter* wo = nullptr;

  static AttentionParams create(ParameterStore& store, const std::string& prefix, std::size_t d_model,
                                Real init_scale, std::mt19937_64& rng);
};

/// Optional per-head attention weights (|Y| x |Z| each) for inspection.
using AttentionWeights = std::vector<Tensor>;

/// Scaled dot-product attention of every row of `y` over the rows of `z`.
Var multi_head_attention(const Var& y, const Var& z, const AttentionParams& p, std::size_t heads,
                         AttentionWeights* weights = nullptr);

/// As multi_head_attention, but pairs with mask(i, j) == 0 get weight 0.
Var graph_multi_head_attention(const Var& y, const Var& z, const AdjacencyMatrix& mask, const AttentionParams& p,
                               std::size_t heads, AttentionWeights* weights = nullptr);

/// Parameters updating one stream: internal attention, two external
/// attentions, FFN and the two LayerNorms around it.
struct StreamParams {
  AttentionParams internal;
  AttentionParams external_a;
  AttentionParams external_b;
  FfnParams ffn;
  LayerNormParams norm_attn;
  LayerNormParams norm_ffn;
};

/// One fusion layer. Streams: g = schema graph, x = utterance, b = previous state.
///   g: internal GG (masked by A^G), external GX, GB
///   x: internal XX (unmasked),      external XB, XG
///   b: internal BB (masked by A^B), external BX, BG
struct CsfnLayerParams {
  StreamParams g;
  StreamParams x;
  StreamParams b;

  static CsfnLayerParams create(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg,
                                std::mt19937_64& rng);
};

struct FusionStates {
  Var g;
  Var x;
  Var b;
};

/// Dropout is active only when `rng` is set.
struct DropoutContext {
  Real rate = 0.0;
  std::mt19937_64* rng = nullptr;
  bool active() const { return rng != nullptr && rate > 0.0; }
};

FusionStates csfn_layer(const FusionStates& in, const AdjacencyMatrix& graph_adj, const AdjacencyMatrix& state_adj,
                        const CsfnLayerParams& p, std::size_t heads, DropoutContext dropout = {});

FusionStates csfn_forward(const FusionStates& in, const AdjacencyMatrix& graph_adj, const AdjacencyMatrix& state_adj,
                          const std::vector<CsfnLayerParams>& layers, std::size_t heads, DropoutContext dropout = {});

}  // namespace csfn
