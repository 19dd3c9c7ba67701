#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "csfn/encoding.hpp"
#include "csfn/fusion.hpp"
#include "csfn/prediction.hpp"

namespace csfn {

/// Gold supervision for one turn.
struct TurnTargets {
  std::vector<Gate> gates;
  /// Pair index -> value tokens (without [EOS]) for PTR pairs.
  std::map<std::size_t, std::vector<std::string>> value_tokens;
  /// Pair index -> value ids terminated by [EOS].
  std::map<std::size_t, std::vector<TokenId>> value_ids;
};

/// One gate per pair read off a full state: NONE when absent, DONTCARE for
/// "dont care", PTR otherwise.
std::vector<Gate> gate_labels(const DialogueState& state, const SchemaGraph& g);
/// Pair index -> value for every PTR pair of `state`.
std::map<std::size_t, std::string> pointer_values(const DialogueState& state, const SchemaGraph& g);

/// Gates are read off the full target state: NONE when the pair is absent,
/// DONTCARE for "dont care", PTR otherwise. `previous` does not change the
/// labels; it is accepted so callers can pass the turn context uniformly.
TurnTargets make_targets(const DialogueState& previous, const DialogueState& current, const SchemaGraph& g,
                         const Vocabulary& vocab);

/// Gold substitutions used by the oracle evaluations.
struct TurnOracle {
  const std::vector<Gate>* gates = nullptr;
  const std::map<std::size_t, std::string>* values = nullptr;
};

struct TurnPrediction {
  std::vector<GatePrediction> gate_probs;
  std::vector<Gate> gates;
  std::map<std::size_t, std::string> values;
  DialogueState state;
};

struct TurnLoss {
  Var total;
  Var gate;
  Var value;
};

/// The full tracker: embeddings, L fusion layers, slot gate and value decoder.
class CsfnModel {
 public:
  CsfnModel(ModelConfig cfg, SchemaDef schema, Vocabulary vocab, std::uint64_t seed);

  CsfnModel(const CsfnModel&) = delete;
  CsfnModel& operator=(const CsfnModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const SchemaGraph& graph() const { return graph_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const EmbeddingTables& embeddings() const { return embed_; }
  const std::vector<CsfnLayerParams>& layers() const { return layers_; }
  const FfnParams& gate_ffn() const { return gate_ffn_; }
  const DecoderParams& decoder() const { return decoder_; }
  const SequenceLimits& limits() const { return limits_; }

  void set_max_decode_len(std::size_t n);

  AblationMode ablation() const { return ablation_; }
  void set_ablation(AblationMode mode);
  const AdjacencyMatrix& graph_adjacency() const { return graph_adj_; }

  std::size_t parameter_count() const;

  struct Encoded {
    TokenSequence utterance;
    TokenSequence state;
    FusionStates input;
    FusionStates output;
  };

  Encoded encode(Tape& tape, const std::string& system, const std::string& user, const DialogueState& previous,
                 DropoutContext dropout = {}) const;

  /// Same as encode() for already serialized inputs.
  Encoded encode_sequences(Tape& tape, TokenSequence utterance, TokenSequence state, DropoutContext dropout = {}) const;
  TurnLoss loss_from(const Encoded& encoded, const TurnTargets& targets) const;

  /// Teacher-forced joint loss L_gate + L_value for one turn.
  TurnLoss loss(Tape& tape, const std::string& system, const std::string& user, const DialogueState& previous,
                const TurnTargets& targets, DropoutContext dropout = {}) const;

  /// Greedy prediction of B_t. Thread-safe: parameters are only read.
  TurnPrediction predict(const std::string& system, const std::string& user, const DialogueState& previous,
                         const TurnOracle& oracle = {}) const;

  nlohmann::json checkpoint_config() const;
  /// Writes `path` (parameters) and `path`.vocab (vocabulary).
  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<CsfnModel> load(const std::filesystem::path& path);

 private:
  ModelConfig cfg_;
  SchemaGraph graph_;
  Vocabulary vocab_;
  SequenceLimits limits_;
  GraphTokens graph_tokens_;
  AblationMode ablation_ = AblationMode::kSchema;
  AdjacencyMatrix graph_adj_;

  ParameterStore store_;
  EmbeddingTables embed_;
  std::vector<CsfnLayerParams> layers_;
  FfnParams gate_ffn_;
  DecoderParams decoder_;
};

std::filesystem::path vocab_path_for(const std::filesystem::path& checkpoint);

}  // namespace csfn
