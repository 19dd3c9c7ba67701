#include "csfn/model.hpp"

#include "csfn/checkpoint.hpp"
#include "csfn/log.hpp"

namespace csfn {

std::vector<Gate> gate_labels(const DialogueState& state, const SchemaGraph& g) {
  std::vector<Gate> gates(g.num_pairs(), Gate::kNone);
  for (std::size_t j = 0; j < g.num_pairs(); ++j) {
    const std::string* value = state.find(g.pairs()[j].domain, g.pairs()[j].slot);
    if (value) gates[j] = *value == kDontCare ? Gate::kDontCare : Gate::kPtr;
  }
  return gates;
}

std::map<std::size_t, std::string> pointer_values(const DialogueState& state, const SchemaGraph& g) {
  std::map<std::size_t, std::string> out;
  for (std::size_t j = 0; j < g.num_pairs(); ++j) {
    const std::string* value = state.find(g.pairs()[j].domain, g.pairs()[j].slot);
    if (value && *value != kDontCare) out.emplace(j, *value);
  }
  return out;
}

TurnTargets make_targets(const DialogueState& /*previous*/, const DialogueState& current, const SchemaGraph& g,
                         const Vocabulary& vocab) {
  TurnTargets t;
  t.gates.assign(g.num_pairs(), Gate::kNone);
  for (std::size_t j = 0; j < g.num_pairs(); ++j) {
    const auto& pair = g.pairs()[j];
    const std::string* value = current.find(pair.domain, pair.slot);
    if (!value) continue;
    if (*value == kDontCare) {
      t.gates[j] = Gate::kDontCare;
      continue;
    }
    t.gates[j] = Gate::kPtr;
    auto tokens = tokenize(*value);
    auto ids = vocab.encode(tokens);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (ids[k] == Vocabulary::kUnk) log_warn("value token '" + tokens[k] + "' not in vocabulary; using [UNK]");
    }
    ids.push_back(Vocabulary::kEos);
    t.value_tokens.emplace(j, std::move(tokens));
    t.value_ids.emplace(j, std::move(ids));
  }
  return t;
}

CsfnModel::CsfnModel(ModelConfig cfg, SchemaDef schema, Vocabulary vocab, std::uint64_t seed)
    : cfg_(cfg), graph_(schema), vocab_(std::move(vocab)) {
  cfg_.validate();
  limits_.utterance = std::min<std::size_t>(limits_.utterance, cfg_.max_positions);
  limits_.state = std::min<std::size_t>(limits_.state, cfg_.max_positions);
  graph_tokens_ = graph_tokens(graph_, vocab_);
  graph_adj_ = graph_mask(graph_, ablation_);

  std::mt19937_64 rng(seed);
  const std::size_t d = cfg_.d_model;
  embed_ = EmbeddingTables::create(store_, vocab_.size(), d, cfg_.max_positions, cfg_.init_scale, rng);
  for (std::size_t i = 0; i < cfg_.layers; ++i) {
    layers_.push_back(CsfnLayerParams::create(store_, "layer" + std::to_string(i), cfg_, rng));
  }
  gate_ffn_ = FfnParams::create(store_, "gate.ffn", d, d, kNumGates, cfg_.init_scale, rng);
  decoder_ = DecoderParams::create(store_, *embed_.token, d, cfg_.init_scale, rng);
}

void CsfnModel::set_ablation(AblationMode mode) {
  ablation_ = mode;
  graph_adj_ = graph_mask(graph_, mode);
}

void CsfnModel::set_max_decode_len(std::size_t n) {
  if (n < 1) throw ContractError("max_decode_len must be >= 1");
  cfg_.max_decode_len = n;
}

std::size_t CsfnModel::parameter_count() const { return count_parameters(store_.all()); }

CsfnModel::Encoded CsfnModel::encode(Tape& tape, const std::string& system, const std::string& user,
                                     const DialogueState& previous, DropoutContext dropout) const {
  return encode_sequences(tape, serialize_utterance(system, user, vocab_, limits_.utterance),
                          serialize_state(previous, vocab_, limits_.state), dropout);
}

CsfnModel::Encoded CsfnModel::encode_sequences(Tape& tape, TokenSequence utterance, TokenSequence state,
                                               DropoutContext dropout) const {
  if (!state.adjacency) state.adjacency = state_adjacency(state.size(), state.triplet_spans);
  Encoded e;
  e.utterance = std::move(utterance);
  e.state = std::move(state);
  e.input.g = init_graph_embeddings(tape, graph_tokens_, embed_);
  e.input.x = embed_sequence(tape, e.utterance, embed_);
  e.input.b = embed_sequence(tape, e.state, embed_);
  e.output = csfn_forward(e.input, graph_adj_, *e.state.adjacency, layers_, cfg_.heads, dropout);
  return e;
}

TurnLoss CsfnModel::loss(Tape& tape, const std::string& system, const std::string& user,
                         const DialogueState& previous, const TurnTargets& targets, DropoutContext dropout) const {
  return loss_from(encode(tape, system, user, previous, dropout), targets);
}

TurnLoss CsfnModel::loss_from(const Encoded& e, const TurnTargets& targets) const {
  Tape& tape = e.output.g.tape();
  GateOutput gates = slot_gate(e.output.g, graph_, gate_ffn_);
  TurnLoss out;
  out.gate = gate_loss(gates.probs, targets.gates);
  if (targets.value_ids.empty()) {
    out.value = tape.constant(Tensor(1, 1, 0.0));
    out.total = out.gate;
    return out;
  }
  DecoderMemory mem = prepare_decoder(e.output.x, e.output.b, e.utterance.token_ids, e.state.token_ids, decoder_);
  std::vector<Var> terms;
  for (const auto& [j, ids] : targets.value_ids) {
    Var node = ag::slice_rows(e.output.g, domain_slot_row_index(graph_, j + 1), 1);
    terms.push_back(value_loss(node, mem, decoder_, ids));
  }
  out.value = ag::add_n(terms);
  out.total = ag::add(out.gate, out.value);
  return out;
}

TurnPrediction CsfnModel::predict(const std::string& system, const std::string& user, const DialogueState& previous,
                                  const TurnOracle& oracle) const {
  Tape tape(false);
  Encoded e = encode(tape, system, user, previous);
  GateOutput gates = slot_gate(e.output.g, graph_, gate_ffn_);

  TurnPrediction pred;
  pred.gate_probs = gates.predictions;
  if (oracle.gates) {
    if (oracle.gates->size() != graph_.num_pairs()) throw ContractError("oracle gates: wrong pair count");
    pred.gates = *oracle.gates;
  } else {
    for (const auto& g : gates.predictions) pred.gates.push_back(g.argmax);
  }

  std::optional<DecoderMemory> mem;
  for (std::size_t j = 0; j < pred.gates.size(); ++j) {
    if (pred.gates[j] != Gate::kPtr) continue;
    if (oracle.values) {
      auto it = oracle.values->find(j);
      if (it != oracle.values->end()) pred.values[j] = it->second;
      continue;
    }
    if (!mem) mem = prepare_decoder(e.output.x, e.output.b, e.utterance.token_ids, e.state.token_ids, decoder_);
    Var node = ag::slice_rows(e.output.g, domain_slot_row_index(graph_, j + 1), 1);
    std::vector<std::string> tokens;
    for (TokenId id : decode_value(node, *mem, decoder_, vocab_, cfg_.max_decode_len)) tokens.push_back(vocab_.token(id));
    pred.values[j] = join_tokens(tokens);
  }
  // Under the value oracle a PTR gate without a gold value simply drops the pair.
  pred.state = assemble_state(pred.gates, pred.values, graph_, oracle.values == nullptr);
  return pred;
}

nlohmann::json CsfnModel::checkpoint_config() const {
  return {{"model", cfg_.to_json()},
          {"schema", graph_.def().to_json()},
          {"vocab_size", vocab_.size()},
          {"ablation", to_string(ablation_)}};
}

std::filesystem::path vocab_path_for(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".vocab");
}

void CsfnModel::save(const std::filesystem::path& path) const {
  save_checkpoint(path, checkpoint_config(), store_);
  vocab_.save(vocab_path_for(path));
}

std::unique_ptr<CsfnModel> CsfnModel::load(const std::filesystem::path& path) {
  CheckpointHeader header = read_checkpoint_header(path);
  Vocabulary vocab = Vocabulary::load(vocab_path_for(path));
  if (header.config.value("vocab_size", vocab.size()) != vocab.size()) {
    throw CheckpointError("vocabulary file does not match checkpoint");
  }
  auto cfg = ModelConfig::from_json(header.config.at("model"));
  auto schema = SchemaDef::from_json(header.config.at("schema"));
  auto model = std::make_unique<CsfnModel>(cfg, schema, std::move(vocab), 0);
  load_checkpoint(path, model->store_);
  model->set_ablation(parse_ablation(header.config.value("ablation", std::string("schema"))));
  return model;
}

}  // namespace csfn
