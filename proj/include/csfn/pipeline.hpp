#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "csfn/data.hpp"
#include "csfn/grad_check.hpp"
#include "csfn/model.hpp"
#include "csfn/optim.hpp"

namespace csfn {

enum class OracleMode { kNone, kPrevState, kGate, kValue };
std::string to_string(OracleMode m);
OracleMode parse_oracle(const std::string& s);

struct TrainConfig {
  std::size_t batch = 32;
  Real lr = 1e-4;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  Real clip_norm = 5.0;
  /// Early stopping on validation joint accuracy; 0 disables it.
  std::size_t patience = 5;
  AblationMode ablation = AblationMode::kSchema;
  /// Turns off dropout, gradient clipping and early stopping.
  bool strict_paper = false;
  ModelConfig model;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Training split tokens (utterances and values) plus the schema names.
Vocabulary build_vocabulary(const Corpus& corpus, const SchemaDef& schema);

/// Fresh model for `corpus` initialized from cfg.seed.
std::unique_ptr<CsfnModel> make_model(const Corpus& corpus, const SchemaDef& schema, const TrainConfig& cfg);

struct TrainLogEntry {
  std::size_t epoch = 0;
  std::size_t step = 0;
  Real l_gate = 0.0;
  Real l_value = 0.0;
  Real l_total = 0.0;
  Real lr = 0.0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  Real best_valid_joint = -1.0;
  std::vector<TrainLogEntry> log;
};

/// Teacher-forced training on the train split. One JSON line per optimizer
/// step goes to `log_out` when given. Throws TrainingError on a non-finite
/// loss or gradient.
TrainResult train(CsfnModel& model, const Corpus& corpus, const TrainConfig& cfg, std::ostream* log_out = nullptr);

/// Mean teacher-forced losses over `dialogues` (no dropout, no update).
TrainLogEntry mean_loss(const CsfnModel& model, const std::vector<Dialogue>& dialogues);

struct DialoguePrediction {
  std::string id;
  std::vector<TurnPrediction> turns;
};

/// Runs the tracker over one dialogue starting from the empty state. Each
/// turn sees the previous predicted state, or the gold one under kPrevState.
std::vector<TurnPrediction> infer_dialogue(const CsfnModel& model, const Dialogue& dialogue, OracleMode mode);

/// infer_dialogue over many dialogues on `workers` threads; output order
/// follows the input.
std::vector<DialoguePrediction> infer_dialogues(const CsfnModel& model, const std::vector<Dialogue>& dialogues,
                                                OracleMode mode, std::size_t workers = 1);

/// Share of turns whose predicted state equals the gold state exactly.
Real joint_goal_accuracy(const std::vector<DialogueState>& pred, const std::vector<DialogueState>& gold);

struct ClassScores {
  Real precision = 0.0;
  Real recall = 0.0;
  Real f1 = 0.0;
  std::size_t support = 0;

  nlohmann::json to_json() const;
};

ClassScores scores_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);

/// One-vs-rest scores for NONE, DONTCARE, PTR.
std::array<ClassScores, kNumGates> gate_f1(const std::vector<Gate>& pred, const std::vector<Gate>& gold);

struct TurnBucket {
  std::size_t turn = 0;  // one-based
  std::size_t count = 0;
  Real accuracy = 0.0;
  Real proportion = 0.0;
};

struct Breakdown {
  /// Joint accuracy restricted to each domain's slots, over the turns of
  /// dialogues whose gold states mention the domain.
  std::map<std::string, Real> domain_accuracy;
  std::map<std::string, std::size_t> domain_turns;
  std::vector<TurnBucket> per_turn;
  /// Keyed "domain-slot"; a hit needs the pair and its value to match.
  std::map<std::string, ClassScores> slot_f1;
};

Breakdown breakdown_reports(const std::vector<std::vector<DialogueState>>& pred,
                            const std::vector<std::vector<DialogueState>>& gold, const SchemaGraph& g);

struct EvalReport {
  std::string oracle_mode;
  std::string ablation;
  std::size_t dialogues = 0;
  std::size_t turns = 0;
  Real joint_accuracy = 0.0;
  std::array<ClassScores, kNumGates> gate;
  Breakdown breakdown;

  nlohmann::json to_json() const;
};

EvalReport make_report(const std::vector<DialoguePrediction>& pred, const std::vector<Dialogue>& gold,
                       const CsfnModel& model, OracleMode mode);

EvalReport evaluate(const CsfnModel& model, const std::vector<Dialogue>& dialogues, OracleMode mode,
                    std::size_t workers = 1, std::ostream* trace_out = nullptr);

/// One JSON line per turn: dialogue id, turn index, gates, values, state.
void write_trace(std::ostream& out, const std::vector<DialoguePrediction>& pred, const SchemaGraph& g);

struct GridPoint {
  std::size_t layers = 0;
  Real valid_joint = 0.0;
  std::size_t epochs_run = 0;
};

struct GridResult {
  std::vector<GridPoint> points;
  std::size_t best_layers = 0;

  nlohmann::json to_json() const;
};

/// Trains one model per layer count and keeps the best validation joint
/// accuracy (ties keep the earlier grid entry).
GridResult grid_search(const Corpus& corpus, const SchemaDef& schema, const TrainConfig& cfg,
                       const std::vector<std::size_t>& layer_grid);

/// A tiny fixed instance for gradient checking: 6 graph nodes, a 7-token
/// utterance, a 4-token previous state, d=8, H=2, L=2, one PTR and one
/// DONTCARE target.
struct GradProbe {
  std::unique_ptr<CsfnModel> model;
  TokenSequence utterance;
  TokenSequence state;
  TurnTargets targets;

  Var loss(Tape& tape) const;
};

GradProbe make_grad_probe(std::uint64_t seed);

/// grad_check over every parameter of the probe with `opts`.
GradCheckReport check_model_gradients(const GradProbe& probe, const GradCheckOptions& opts);

}  // namespace csfn
