#include "csfn/data.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "csfn/log.hpp"
#include "csfn/tensor.hpp"

namespace csfn {

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kValid:
      return "valid";
    case Split::kTest:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "valid" || s == "dev") return Split::kValid;
  if (s == "test") return Split::kTest;
  throw ContractError("unknown split: " + s);
}

std::vector<Dialogue>& Corpus::split(Split s) {
  return s == Split::kTrain ? train : s == Split::kValid ? valid : test;
}

const std::vector<Dialogue>& Corpus::split(Split s) const {
  return s == Split::kTrain ? train : s == Split::kValid ? valid : test;
}

std::vector<const Dialogue*> all_dialogues(const Corpus& c) {
  std::vector<const Dialogue*> out;
  for (Split s : {Split::kTrain, Split::kValid, Split::kTest})
    for (const auto& d : c.split(s)) out.push_back(&d);
  return out;
}

void Corpus::validate(const SchemaGraph& g) const {
  std::set<std::string> ids;
  for (const Dialogue* d : all_dialogues(*this)) {
    if (!ids.insert(d->id).second) throw IngestionError("duplicate dialogue id: " + d->id);
    for (const auto& turn : d->turns) {
      for (const auto& t : turn.state.triplets()) {
        if (!g.pair_index(t.domain, t.slot)) {
          throw IngestionError("dialogue " + d->id + ": pair outside the schema: " + t.domain + "-" + t.slot);
        }
        if (t.value.empty()) throw IngestionError("dialogue " + d->id + ": empty value for " + t.domain + "-" + t.slot);
      }
    }
  }
}

nlohmann::json corpus_to_json(const Corpus& c) {
  nlohmann::json dialogues = nlohmann::json::array();
  for (Split s : {Split::kTrain, Split::kValid, Split::kTest}) {
    for (const auto& d : c.split(s)) {
      nlohmann::json turns = nlohmann::json::array();
      for (const auto& t : d.turns) {
        turns.push_back({{"system", t.system}, {"user", t.user}, {"state", t.state.to_json()}});
      }
      dialogues.push_back({{"id", d.id}, {"split", to_string(s)}, {"turns", std::move(turns)}});
    }
  }
  return {{"version", kCorpusVersion}, {"dialogues", std::move(dialogues)}};
}

Corpus corpus_from_json(const nlohmann::json& j) {
  try {
    const int version = j.value("version", kCorpusVersion);
    if (version != kCorpusVersion) {
      throw IngestionError("corpus version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kCorpusVersion) + ")");
    }
    Corpus c;
    for (const auto& jd : j.at("dialogues")) {
      Dialogue d;
      d.id = jd.at("id").get<std::string>();
      for (const auto& jt : jd.at("turns")) {
        Turn t;
        t.system = jt.value("system", std::string());
        t.user = jt.at("user").get<std::string>();
        t.state = DialogueState::from_json(jt.at("state"));
        d.turns.push_back(std::move(t));
      }
      c.split(parse_split(jd.value("split", std::string("train")))).push_back(std::move(d));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("malformed corpus JSON: ") + e.what());
  } catch (const ContractError& e) {
    throw IngestionError(std::string("malformed corpus JSON: ") + e.what());
  }
}

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IngestionError(path.string() + ": " + e.what());
  }
}

}  // namespace

void save_corpus(const Corpus& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << corpus_to_json(c).dump(1) << '\n';
  if (!out) throw IngestionError("write failed: " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) { return corpus_from_json(read_json(path)); }

nlohmann::json IngestStats::to_json() const {
  return {{"dialogues_read", dialogues_read},
          {"dialogues_dropped", dialogues_dropped},
          {"triplets_dropped", triplets_dropped},
          {"values_dontcare", values_dontcare},
          {"unknown_pairs", unknown_pairs}};
}

std::string normalize_slot_name(std::string_view raw) {
  std::string s = normalize_text(raw);
  for (char& c : s)
    if (c == '_') c = ' ';
  static const std::map<std::string, std::string> kRenames = {
      {"pricerange", "price range"}, {"leaveat", "leave at"}, {"arriveby", "arrive by"},
      {"bookday", "book day"},       {"bookpeople", "book people"},
      {"booktime", "book time"},     {"bookstay", "book stay"}};
  auto it = kRenames.find(s);
  return it == kRenames.end() ? s : it->second;
}

namespace {

bool is_empty_value(const std::string& v) { return v.empty() || v == "none" || v == "not mentioned"; }

Dialogue parse_trade_dialogue(const nlohmann::json& jd, const SchemaGraph& g, IngestStats& stats) {
  Dialogue d;
  d.id = jd.at("dialogue_idx").get<std::string>();
  for (const auto& jt : jd.at("dialogue")) {
    Turn t;
    t.system = normalize_text(jt.value("system_transcript", std::string()));
    t.user = normalize_text(jt.value("transcript", std::string()));
    for (const auto& entry : jt.value("belief_state", nlohmann::json::array())) {
      for (const auto& sv : entry.at("slots")) {
        const std::string key = sv.at(0).get<std::string>();
        const auto dash = key.find('-');
        if (dash == std::string::npos) throw IngestionError("dialogue " + d.id + ": bad slot key '" + key + "'");
        const std::string domain = normalize_text(key.substr(0, dash));
        const std::string slot = normalize_slot_name(key.substr(dash + 1));
        const std::string value = normalize_value(sv.at(1).get<std::string>());
        if (is_empty_value(value)) continue;
        if (!g.pair_index(domain, slot)) {
          ++stats.triplets_dropped;
          ++stats.unknown_pairs[domain + "-" + slot];
          continue;
        }
        if (value == kDontCare) ++stats.values_dontcare;
        t.state.set(domain, slot, value);
      }
    }
    d.turns.push_back(std::move(t));
  }
  return d;
}

bool mentions_schema_domain(const nlohmann::json& jd, const SchemaGraph& g) {
  if (!jd.contains("domains")) return true;
  for (const auto& dom : jd.at("domains"))
    if (g.domain_index(normalize_text(dom.get<std::string>()))) return true;
  return false;
}

}  // namespace

std::vector<Dialogue> load_multiwoz_file(const std::filesystem::path& path, const SchemaGraph& g,
                                         IngestStats* stats) {
  IngestStats local;
  IngestStats& st = stats ? *stats : local;
  const nlohmann::json j = read_json(path);
  if (!j.is_array()) throw IngestionError(path.string() + ": expected a JSON array of dialogues");
  std::vector<Dialogue> out;
  try {
    for (const auto& jd : j) {
      ++st.dialogues_read;
      if (!mentions_schema_domain(jd, g)) {
        ++st.dialogues_dropped;
        continue;
      }
      out.push_back(parse_trade_dialogue(jd, g, st));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(path.string() + ": " + e.what());
  }
  return out;
}

Corpus load_multiwoz(const std::filesystem::path& dir, const SchemaDef& schema, IngestStats* stats) {
  const SchemaGraph g(schema);
  IngestStats local;
  IngestStats& st = stats ? *stats : local;
  Corpus c;
  bool any = false;
  const std::pair<const char*, Split> files[] = {
      {"train_dials.json", Split::kTrain}, {"dev_dials.json", Split::kValid}, {"test_dials.json", Split::kTest}};
  for (const auto& [name, split] : files) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) continue;
    any = true;
    c.split(split) = load_multiwoz_file(path, g, &st);
  }
  if (!any) throw IngestionError("no *_dials.json files in " + dir.string());
  if (st.triplets_dropped > 0) {
    log_warn("dropped " + std::to_string(st.triplets_dropped) + " triplets outside the schema (" +
             std::to_string(st.unknown_pairs.size()) + " distinct pairs)");
  }
  if (st.dialogues_dropped > 0) {
    log_info("dropped " + std::to_string(st.dialogues_dropped) + " dialogues with no schema domain");
  }
  c.validate(g);
  return c;
}

// ---------------------------------------------------------------------------
// Toy corpus

namespace {

struct SlotLexicon {
  std::vector<std::string> values;
  std::vector<std::string> templates;  // "{}" marks the value
  std::vector<std::string> dontcare;   // empty: never dont-care
};

const std::map<std::string, SlotLexicon>& toy_lexicon() {
  static const std::vector<std::string> places = {"kings college", "cambridge station", "museum of art",
                                                  "grand hotel",   "airport",           "cinema",
                                                  "riverside park", "market square"};
  static const std::vector<std::string> times = {"08:30", "09:15", "10:00", "11:45", "12:30",
                                                 "13:15", "14:00", "15:45", "17:30", "19:00"};
  static const std::map<std::string, SlotLexicon> lex = {
      {"area",
       {{"centre", "north", "south", "east", "west"},
        {"in the {} area", "in the {} of town"},
        {"any area is fine", "the area does not matter"}}},
      {"food",
       {{"chinese", "italian", "indian", "british", "french", "thai", "korean", "modern european"},
        {"serving {} food", "with {} food"},
        {"any kind of food is fine", "i do not care about the food"}}},
      {"price range",
       {{"cheap", "moderate", "expensive"},
        {"in the {} price range", "with a {} price"},
        {"any price is fine", "the price does not matter"}}},
      {"departure", {places, {"leaving from {}", "departing from {}"}, {}}},
      {"destination", {places, {"going to {}", "heading to {}"}, {}}},
      {"leave at",
       {times, {"leaving after {}", "departing after {}"}, {"any departure time is fine", "i can leave whenever"}}},
      {"arrive by", {times, {"arriving by {}", "getting there by {}"}, {}}},
  };
  return lex;
}

const std::map<std::string, std::vector<std::string>>& toy_intros() {
  static const std::map<std::string, std::vector<std::string>> intros = {
      {"restaurant", {"i am looking for a restaurant", "i need a place to eat", "can you find me a restaurant"}},
      {"taxi", {"i need a taxi", "please book a taxi", "can you get me a taxi"}},
  };
  return intros;
}

const std::vector<std::string>& toy_system_lines() {
  static const std::vector<std::string> lines = {"okay , anything else ?", "what else do you need ?",
                                                 "sure , is there anything more ?", "i can help with that . what else ?",
                                                 "noted . can i help with anything else ?"};
  return lines;
}

class ToyRng {
 public:
  explicit ToyRng(std::uint64_t seed) : gen_(seed) {}
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }
  std::size_t between(std::size_t lo, std::size_t hi) { return lo + below(hi - lo + 1); }
  bool chance(double p) { return static_cast<double>(gen_() >> 11) * 0x1.0p-53 < p; }
  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[below(v.size())];
  }

 private:
  std::mt19937_64 gen_;
};

std::string fill(const std::string& tmpl, const std::string& value) {
  const auto pos = tmpl.find("{}");
  return tmpl.substr(0, pos) + value + tmpl.substr(pos + 2);
}

constexpr double kDontCareRate = 0.15;

Dialogue make_toy_dialogue(const SchemaGraph& g, ToyRng& rng, std::string id) {
  const auto& lex = toy_lexicon();
  Dialogue d;
  d.id = std::move(id);

  // Domains in a random order; one or two of them per dialogue.
  std::vector<std::size_t> domains(g.num_domains());
  for (std::size_t i = 0; i < domains.size(); ++i) domains[i] = i;
  for (std::size_t i = domains.size(); i > 1; --i) std::swap(domains[i - 1], domains[rng.below(i)]);
  domains.resize(std::min<std::size_t>(domains.size(), rng.between(1, 2)));

  std::vector<std::vector<std::size_t>> pending;  // pair indices per chosen domain, shuffled
  for (std::size_t dom : domains) {
    std::vector<std::size_t> pairs;
    for (std::size_t j = 0; j < g.num_pairs(); ++j)
      if (g.pairs()[j].domain_index == dom) pairs.push_back(j);
    for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[rng.below(i)]);
    pending.push_back(std::move(pairs));
  }
  std::size_t remaining = 0;
  for (const auto& p : pending) remaining += p.size();

  const std::size_t n_turns = rng.between(2, 6);
  DialogueState state;
  std::set<std::size_t> introduced;
  std::vector<std::size_t> filled;  // pairs holding a value, in order of mention
  std::size_t cursor = 0;

  auto pick_value = [&](const DomainSlotPair& pair) {
    const SlotLexicon& sl = lex.at(pair.slot);
    const std::string* current = state.find(pair.domain, pair.slot);
    std::string value = rng.pick(sl.values);
    // Overlapping slots (same value type) never take the same value within a
    // domain, and a change always moves to a new value.
    for (int guard = 0; guard < 32; ++guard) {
      bool clash = current && *current == value;
      for (const auto& tr : state.restricted_to(pair.domain).triplets())
        if (tr.value == value && tr.slot != pair.slot) clash = true;
      if (!clash) break;
      value = rng.pick(sl.values);
    }
    return value;
  };

  for (std::size_t t = 0; t < n_turns; ++t) {
    std::vector<std::string> clauses;
    std::string user;
    if (remaining > 0) {
      while (pending[cursor].empty()) ++cursor;
      auto& queue = pending[cursor];
      std::size_t k = rng.between(1, std::min<std::size_t>(3, queue.size()));
      if (t == 0 && k == remaining && k > 1) --k;

      const std::string& domain = g.domains()[domains[cursor]];
      const bool first_mention = introduced.insert(cursor).second;
      for (std::size_t u = 0; u < k; ++u) {
        const std::size_t j = queue.back();
        queue.pop_back();
        --remaining;
        filled.push_back(j);
        const auto& pair = g.pairs()[j];
        const SlotLexicon& sl = lex.at(pair.slot);
        if (!sl.dontcare.empty() && rng.chance(kDontCareRate)) {
          state.set(pair.domain, pair.slot, kDontCare);
          clauses.push_back(rng.pick(sl.dontcare));
          continue;
        }
        const std::string value = pick_value(pair);
        state.set(pair.domain, pair.slot, value);
        clauses.push_back(fill(rng.pick(sl.templates), value));
      }
      if (first_mention) {
        auto it = toy_intros().find(domain);
        user = it != toy_intros().end() ? rng.pick(it->second) : "i need a " + domain;
        user += " " + clauses.front();
      } else {
        user = "for the " + domain + " , i want it " + clauses.front();
      }
    } else {
      // Every chosen slot is filled: the user changes their mind about one.
      const auto& pair = g.pairs()[rng.pick(filled)];
      const std::string value = pick_value(pair);
      state.set(pair.domain, pair.slot, value);
      clauses.push_back(fill(rng.pick(lex.at(pair.slot).templates), value));
      user = "actually , for the " + pair.domain + " i want it " + clauses.front() + " instead";
    }
    for (std::size_t c = 1; c < clauses.size(); ++c) user += " and " + clauses[c];
    user += " .";

    Turn turn;
    turn.system = t == 0 ? std::string() : rng.pick(toy_system_lines());
    turn.user = normalize_text(user);
    turn.state = state;
    d.turns.push_back(std::move(turn));
  }
  return d;
}

}  // namespace

std::vector<std::string> toy_lexicon_slots() {
  std::vector<std::string> out;
  for (const auto& [slot, _] : toy_lexicon()) out.push_back(slot);
  return out;
}

SchemaDef default_toy_schema() {
  SchemaDef s;
  s.domains = {{"restaurant", {"area", "food", "price range"}},
               {"taxi", {"departure", "destination", "leave at", "arrive by"}}};
  s.overlap_pairs = {{"departure", "destination"}};
  return s;
}

Corpus generate_toy_corpus(const SchemaDef& schema, std::size_t n_dialogues, std::uint64_t seed) {
  const SchemaGraph g(schema);
  for (const auto& pair : g.pairs()) {
    if (!toy_lexicon().count(pair.slot)) throw ContractError("toy generator has no lexicon for slot '" + pair.slot + "'");
  }
  ToyRng rng(seed);
  Corpus c;
  const std::size_t n_train = n_dialogues * 8 / 10;
  const std::size_t n_valid = n_dialogues / 10;
  for (std::size_t i = 0; i < n_dialogues; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "toy-%04zu", i);
    Dialogue d = make_toy_dialogue(g, rng, id);
    if (i < n_train)
      c.train.push_back(std::move(d));
    else if (i < n_train + n_valid)
      c.valid.push_back(std::move(d));
    else
      c.test.push_back(std::move(d));
  }
  return c;
}

}  // namespace csfn
