#include "csfn/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <set>
#include <mutex>
#include <thread>

#include "csfn/log.hpp"

namespace csfn {

std::string to_string(OracleMode m) {
  switch (m) {
    case OracleMode::kNone:
      return "none";
    case OracleMode::kPrevState:
      return "prev_state";
    case OracleMode::kGate:
      return "gate";
    case OracleMode::kValue:
      return "value";
  }
  return "none";
}

OracleMode parse_oracle(const std::string& s) {
  if (s == "none") return OracleMode::kNone;
  if (s == "prev_state") return OracleMode::kPrevState;
  if (s == "gate") return OracleMode::kGate;
  if (s == "value") return OracleMode::kValue;
  throw ContractError("unknown oracle mode '" + s + "' (expected none, prev_state, gate or value)");
}

void TrainConfig::validate() const {
  if (batch < 1) throw ContractError("batch size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("learning rate must be finite and >= 0");
  if (!(clip_norm > 0.0)) throw ContractError("clip norm must be positive");
  model.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch", batch},
          {"lr", lr},
          {"epochs", epochs},
          {"seed", seed},
          {"clip_norm", clip_norm},
          {"patience", patience},
          {"ablation", to_string(ablation)},
          {"strict_paper", strict_paper},
          {"model", model.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.patience = j.value("patience", c.patience);
  if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
  c.strict_paper = j.value("strict_paper", c.strict_paper);
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  c.model.strict_paper = c.model.strict_paper || c.strict_paper;
  c.validate();
  return c;
}

Vocabulary build_vocabulary(const Corpus& corpus, const SchemaDef& schema) {
  Vocabulary v;
  for (const auto& ds : schema.domains) {
    v.add_all(tokenize(ds.domain));
    for (const auto& s : ds.slots) v.add_all(tokenize(s));
  }
  v.add_all(tokenize(kDontCare));
  for (const auto& d : corpus.train) {
    for (const auto& t : d.turns) {
      v.add_all(tokenize(t.system));
      v.add_all(tokenize(t.user));
      for (const auto& tr : t.state.triplets()) v.add_all(tokenize(tr.value));
    }
  }
  return v;
}

std::unique_ptr<CsfnModel> make_model(const Corpus& corpus, const SchemaDef& schema, const TrainConfig& cfg) {
  cfg.validate();
  ModelConfig mc = cfg.model;
  mc.strict_paper = mc.strict_paper || cfg.strict_paper;
  auto model = std::make_unique<CsfnModel>(mc, schema, build_vocabulary(corpus, schema), cfg.seed);
  model->set_ablation(cfg.ablation);
  return model;
}

nlohmann::json TrainLogEntry::to_json() const {
  return {{"epoch", epoch}, {"step", step}, {"L_gate", l_gate}, {"L_value", l_value}, {"L_total", l_total}, {"lr", lr}};
}

namespace {

struct TrainTurn {
  const Dialogue* dialogue;
  std::size_t index;
  const DialogueState* previous;  // gold B_{t-1}
  TurnTargets targets;
};

const DialogueState& empty_state() {
  static const DialogueState s;
  return s;
}

std::vector<TrainTurn> flatten(const CsfnModel& model, const std::vector<Dialogue>& dialogues) {
  std::vector<TrainTurn> out;
  for (const auto& d : dialogues) {
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const DialogueState& prev = t == 0 ? empty_state() : d.turns[t - 1].state;
      out.push_back({&d, t, &prev, make_targets(prev, d.turns[t].state, model.graph(), model.vocab())});
    }
  }
  return out;
}

std::vector<Tensor> snapshot(const ParameterStore& store) {
  std::vector<Tensor> out;
  for (const Parameter* p : store.all()) out.push_back(p->value);
  return out;
}

void restore(ParameterStore& store, const std::vector<Tensor>& values) {
  auto params = store.all();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

TrainResult train(CsfnModel& model, const Corpus& corpus, const TrainConfig& cfg, std::ostream* log_out) {
  cfg.validate();
  if (corpus.train.empty()) throw ContractError("training split is empty");
  model.set_ablation(cfg.ablation);

  std::vector<TrainTurn> turns = flatten(model, corpus.train);
  if (turns.empty()) throw ContractError("training split has no turns");

  const bool strict = cfg.strict_paper || model.config().strict_paper;
  const bool early_stop = !strict && cfg.patience > 0 && !corpus.valid.empty();
  std::mt19937_64 order_rng(cfg.seed ^ 0x5eedULL);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0xd20b07ULL);
  DropoutContext dropout{model.config().effective_dropout(), &dropout_rng};

  auto params = model.params().all();
  Adam adam(params, AdamConfig{cfg.lr});

  std::vector<std::size_t> order(turns.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  std::vector<Tensor> best;
  std::size_t since_best = 0;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng() % i]);

    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const Real inv_batch = 1.0 / static_cast<Real>(end - start);
      model.params().zero_grads();
      TrainLogEntry entry{epoch, ++step, 0.0, 0.0, 0.0, cfg.lr};

      for (std::size_t b = start; b < end; ++b) {
        const TrainTurn& tt = turns[order[b]];
        const Turn& turn = tt.dialogue->turns[tt.index];
        Tape tape;
        TurnLoss loss = model.loss(tape, turn.system, turn.user, *tt.previous, tt.targets, dropout);
        const Real total = loss.total.value()[0];
        if (!std::isfinite(total)) {
          throw TrainingError("non-finite loss in batch " + std::to_string(step) + " (dialogue " +
                              tt.dialogue->id + ", turn " + std::to_string(tt.index + 1) + ")");
        }
        entry.l_gate += loss.gate.value()[0] * inv_batch;
        entry.l_value += loss.value.value()[0] * inv_batch;
        entry.l_total += total * inv_batch;
        tape.backward(ag::scale(loss.total, inv_batch));
      }

      if (!strict) clip_grad_norm(params, cfg.clip_norm);
      try {
        adam.step();
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " in batch " + std::to_string(step));
      }
      if (log_out) *log_out << entry.to_json().dump() << '\n';
      result.log.push_back(entry);
    }
    result.epochs_run = epoch;

    if (early_stop) {
      const Real joint = evaluate(model, corpus.valid, OracleMode::kNone).joint_accuracy;
      log_info("epoch " + std::to_string(epoch) + ": valid joint accuracy " + std::to_string(joint));
      if (joint > result.best_valid_joint) {
        result.best_valid_joint = joint;
        result.best_epoch = epoch;
        best = snapshot(model.params());
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        log_info("early stop after epoch " + std::to_string(epoch));
        break;
      }
    } else {
      result.best_epoch = epoch;
    }
  }
  if (early_stop && !best.empty()) restore(model.params(), best);
  return result;
}

TrainLogEntry mean_loss(const CsfnModel& model, const std::vector<Dialogue>& dialogues) {
  std::vector<TrainTurn> turns = flatten(model, dialogues);
  TrainLogEntry out;
  if (turns.empty()) return out;
  for (const auto& tt : turns) {
    const Turn& turn = tt.dialogue->turns[tt.index];
    Tape tape(false);
    TurnLoss loss = model.loss(tape, turn.system, turn.user, *tt.previous, tt.targets);
    out.l_gate += loss.gate.value()[0];
    out.l_value += loss.value.value()[0];
    out.l_total += loss.total.value()[0];
  }
  const Real n = static_cast<Real>(turns.size());
  out.l_gate /= n;
  out.l_value /= n;
  out.l_total /= n;
  return out;
}

std::vector<TurnPrediction> infer_dialogue(const CsfnModel& model, const Dialogue& dialogue, OracleMode mode) {
  std::vector<TurnPrediction> out;
  DialogueState previous;
  for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
    const Turn& turn = dialogue.turns[t];
    const DialogueState& prev = mode == OracleMode::kPrevState && t > 0 ? dialogue.turns[t - 1].state
                                : mode == OracleMode::kPrevState       ? empty_state()
                                                                       : previous;
    std::vector<Gate> gold_gates;
    std::map<std::size_t, std::string> gold_values;
    TurnOracle oracle;
    if (mode == OracleMode::kGate) {
      gold_gates = gate_labels(turn.state, model.graph());
      oracle.gates = &gold_gates;
    } else if (mode == OracleMode::kValue) {
      gold_values = pointer_values(turn.state, model.graph());
      oracle.values = &gold_values;
    }
    out.push_back(model.predict(turn.system, turn.user, prev, oracle));
    previous = out.back().state;
  }
  return out;
}

std::vector<DialoguePrediction> infer_dialogues(const CsfnModel& model, const std::vector<Dialogue>& dialogues,
                                                OracleMode mode, std::size_t workers) {
  std::vector<DialoguePrediction> out(dialogues.size());
  auto run_one = [&](std::size_t i) {
    out[i].id = dialogues[i].id;
    out[i].turns = infer_dialogue(model, dialogues[i], mode);
  };
  workers = std::max<std::size_t>(1, std::min(workers, dialogues.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < dialogues.size(); ++i) run_one(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < dialogues.size(); i = next++) {
        try {
          run_one(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

Real joint_goal_accuracy(const std::vector<DialogueState>& pred, const std::vector<DialogueState>& gold) {
  if (pred.size() != gold.size()) {
    throw ContractError("joint_goal_accuracy: " + std::to_string(pred.size()) + " predictions for " +
                        std::to_string(gold.size()) + " gold turns");
  }
  if (gold.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += pred[i] == gold[i];
  return static_cast<Real>(hits) / static_cast<Real>(gold.size());
}

nlohmann::json ClassScores::to_json() const {
  return {{"precision", precision}, {"recall", recall}, {"f1", f1}, {"support", support}};
}

ClassScores scores_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassScores s;
  s.support = tp + fn;
  if (tp + fp > 0) s.precision = static_cast<Real>(tp) / static_cast<Real>(tp + fp);
  if (tp + fn > 0) s.recall = static_cast<Real>(tp) / static_cast<Real>(tp + fn);
  if (tp > 0) s.f1 = 2.0 * static_cast<Real>(tp) / static_cast<Real>(2 * tp + fp + fn);
  return s;
}

std::array<ClassScores, kNumGates> gate_f1(const std::vector<Gate>& pred, const std::vector<Gate>& gold) {
  if (pred.size() != gold.size()) throw ContractError("gate_f1: prediction/gold length mismatch");
  std::array<ClassScores, kNumGates> out;
  for (std::size_t c = 0; c < kNumGates; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool p = static_cast<std::size_t>(pred[i]) == c;
      const bool g = static_cast<std::size_t>(gold[i]) == c;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    out[c] = scores_from_counts(tp, fp, fn);
  }
  return out;
}

Breakdown breakdown_reports(const std::vector<std::vector<DialogueState>>& pred,
                            const std::vector<std::vector<DialogueState>>& gold, const SchemaGraph& g) {
  if (pred.size() != gold.size()) throw ContractError("breakdown_reports: dialogue count mismatch");
  Breakdown out;

  std::map<std::string, std::size_t> domain_hits;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> turn_counts;  // turn -> (hits, count)
  std::vector<std::array<std::size_t, 3>> slot_counts(g.num_pairs(), {0, 0, 0});  // tp, fp, fn
  std::size_t total_turns = 0;

  for (std::size_t d = 0; d < gold.size(); ++d) {
    if (pred[d].size() != gold[d].size()) throw ContractError("breakdown_reports: turn count mismatch");
    std::set<std::string> mentioned;
    for (const auto& s : gold[d])
      for (const auto& t : s.triplets()) mentioned.insert(t.domain);

    for (std::size_t t = 0; t < gold[d].size(); ++t) {
      const DialogueState& p = pred[d][t];
      const DialogueState& y = gold[d][t];
      ++total_turns;
      auto& tc = turn_counts[t + 1];
      tc.first += p == y;
      ++tc.second;
      for (const auto& dom : mentioned) {
        domain_hits[dom] += p.restricted_to(dom) == y.restricted_to(dom);
        ++out.domain_turns[dom];
      }
      for (std::size_t j = 0; j < g.num_pairs(); ++j) {
        const auto& pair = g.pairs()[j];
        const std::string* pv = p.find(pair.domain, pair.slot);
        const std::string* yv = y.find(pair.domain, pair.slot);
        if (pv && yv && *pv == *yv) {
          ++slot_counts[j][0];
          continue;
        }
        if (pv) ++slot_counts[j][1];
        if (yv) ++slot_counts[j][2];
      }
    }
  }

  for (const auto& [dom, n] : out.domain_turns) {
    out.domain_accuracy[dom] = static_cast<Real>(domain_hits[dom]) / static_cast<Real>(n);
  }
  for (const auto& [turn, hc] : turn_counts) {
    TurnBucket b;
    b.turn = turn;
    b.count = hc.second;
    b.accuracy = static_cast<Real>(hc.first) / static_cast<Real>(hc.second);
    b.proportion = static_cast<Real>(hc.second) / static_cast<Real>(total_turns);
    out.per_turn.push_back(b);
  }
  for (std::size_t j = 0; j < g.num_pairs(); ++j) {
    out.slot_f1[g.pairs()[j].key()] = scores_from_counts(slot_counts[j][0], slot_counts[j][1], slot_counts[j][2]);
  }
  return out;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json gates = nlohmann::json::object();
  for (std::size_t c = 0; c < kNumGates; ++c) gates[to_string(static_cast<Gate>(c))] = gate[c].to_json();
  nlohmann::json per_turn = nlohmann::json::array();
  for (const auto& b : breakdown.per_turn) {
    per_turn.push_back({{"turn", b.turn}, {"count", b.count}, {"accuracy", b.accuracy}, {"proportion", b.proportion}});
  }
  nlohmann::json slots = nlohmann::json::object();
  for (const auto& [k, s] : breakdown.slot_f1) slots[k] = s.to_json();
  nlohmann::json domains = nlohmann::json::object();
  for (const auto& [k, a] : breakdown.domain_accuracy) {
    domains[k] = {{"joint_accuracy", a}, {"turns", breakdown.domain_turns.at(k)}};
  }
  return {{"oracle_mode", oracle_mode}, {"ablation", ablation},     {"dialogues", dialogues},
          {"turns", turns},             {"joint_accuracy", joint_accuracy}, {"gate_f1", gates},
          {"domain", domains},          {"per_turn", per_turn},     {"slot_f1", slots}};
}

EvalReport make_report(const std::vector<DialoguePrediction>& pred, const std::vector<Dialogue>& gold,
                       const CsfnModel& model, OracleMode mode) {
  if (pred.size() != gold.size()) throw ContractError("make_report: dialogue count mismatch");
  EvalReport r;
  r.oracle_mode = to_string(mode);
  r.ablation = to_string(model.ablation());
  r.dialogues = gold.size();

  std::vector<DialogueState> flat_pred, flat_gold;
  std::vector<Gate> pred_gates, gold_gates;
  std::vector<std::vector<DialogueState>> nested_pred, nested_gold;
  for (std::size_t d = 0; d < gold.size(); ++d) {
    nested_pred.emplace_back();
    nested_gold.emplace_back();
    if (pred[d].turns.size() != gold[d].turns.size()) throw ContractError("make_report: turn count mismatch");
    for (std::size_t t = 0; t < gold[d].turns.size(); ++t) {
      const auto& p = pred[d].turns[t];
      const auto& y = gold[d].turns[t].state;
      flat_pred.push_back(p.state);
      flat_gold.push_back(y);
      nested_pred.back().push_back(p.state);
      nested_gold.back().push_back(y);
      pred_gates.insert(pred_gates.end(), p.gates.begin(), p.gates.end());
      const auto labels = gate_labels(y, model.graph());
      gold_gates.insert(gold_gates.end(), labels.begin(), labels.end());
    }
  }
  r.turns = flat_gold.size();
  r.joint_accuracy = joint_goal_accuracy(flat_pred, flat_gold);
  r.gate = gate_f1(pred_gates, gold_gates);
  r.breakdown = breakdown_reports(nested_pred, nested_gold, model.graph());
  return r;
}

EvalReport evaluate(const CsfnModel& model, const std::vector<Dialogue>& dialogues, OracleMode mode,
                    std::size_t workers, std::ostream* trace_out) {
  auto pred = infer_dialogues(model, dialogues, mode, workers);
  if (trace_out) write_trace(*trace_out, pred, model.graph());
  return make_report(pred, dialogues, model, mode);
}

void write_trace(std::ostream& out, const std::vector<DialoguePrediction>& pred, const SchemaGraph& g) {
  for (const auto& d : pred) {
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const auto& p = d.turns[t];
      nlohmann::json gates = nlohmann::json::object();
      for (std::size_t j = 0; j < p.gates.size(); ++j) gates[g.pairs()[j].key()] = to_string(p.gates[j]);
      nlohmann::json values = nlohmann::json::object();
      for (const auto& [j, v] : p.values) values[g.pairs()[j].key()] = v;
      out << nlohmann::json{{"dialogue_id", d.id}, {"turn", t + 1},      {"gates", gates},
                            {"values", values},    {"state", p.state.to_json()}}
                 .dump()
          << '\n';
    }
  }
}

nlohmann::json GridResult::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points) {
    pts.push_back({{"layers", p.layers}, {"valid_joint_accuracy", p.valid_joint}, {"epochs_run", p.epochs_run}});
  }
  return {{"points", pts}, {"best_layers", best_layers}};
}

GridResult grid_search(const Corpus& corpus, const SchemaDef& schema, const TrainConfig& cfg,
                       const std::vector<std::size_t>& layer_grid) {
  if (layer_grid.empty()) throw ContractError("grid_search: empty layer grid");
  if (corpus.valid.empty()) throw ContractError("grid_search needs a validation split");
  GridResult out;
  Real best = -1.0;
  for (std::size_t layers : layer_grid) {
    TrainConfig c = cfg;
    c.model.layers = layers;
    auto model = make_model(corpus, schema, c);
    TrainResult tr = train(*model, corpus, c);
    GridPoint p{layers, evaluate(*model, corpus.valid, OracleMode::kNone).joint_accuracy, tr.epochs_run};
    log_info("grid: L=" + std::to_string(layers) + " valid joint accuracy " + std::to_string(p.valid_joint));
    out.points.push_back(p);
    if (p.valid_joint > best) {
      best = p.valid_joint;
      out.best_layers = layers;
    }
  }
  return out;
}

Var GradProbe::loss(Tape& tape) const {
  return model->loss_from(model->encode_sequences(tape, utterance, state), targets).total;
}

GradProbe make_grad_probe(std::uint64_t seed) {
  SchemaDef schema;
  schema.domains = {{"hotel", {"area"}}, {"taxi", {"departure"}}};
  Vocabulary vocab;
  vocab.add_all(tokenize("hotel area taxi departure north from kings college want"));

  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.init_scale = 0.3;
  cfg.dropout = 0.0;

  GradProbe p;
  p.model = std::make_unique<CsfnModel>(cfg, schema, vocab, seed);
  p.utterance = serialize_utterance("want", "from kings college", p.model->vocab());

  // [CLS] followed by one three-token triplet span.
  TokenSequence& st = p.state;
  const std::vector<std::string> toks = {"[CLS]", "area", "-", "north"};
  for (std::size_t i = 0; i < toks.size(); ++i) {
    st.tokens.push_back(toks[i]);
    st.token_ids.push_back(p.model->vocab().id(toks[i]));
    st.segment_ids.push_back(static_cast<TokenId>(i == 0 ? Segment::kStateCls : Segment::kStateBody));
    st.position_ids.push_back(i == 0 ? 0 : static_cast<TokenId>(i - 1));
  }
  st.triplet_spans = {{1, 4}};
  st.adjacency = state_adjacency(st.size(), st.triplet_spans);

  DialogueState gold{{"hotel", "area", kDontCare}, {"taxi", "departure", "kings college"}};
  p.targets = make_targets({}, gold, p.model->graph(), p.model->vocab());
  return p;
}

GradCheckReport check_model_gradients(const GradProbe& probe, const GradCheckOptions& opts) {
  return grad_check([&](Tape& t) { return probe.loss(t); }, probe.model->params().all(), opts);
}

}  // namespace csfn
