#include "csfn/encoding.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "csfn/log.hpp"

namespace csfn {

Vocabulary::Vocabulary() {
  for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[EOS]", ";", "-"}) add(t);
}

TokenId Vocabulary::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

void Vocabulary::add_all(const std::vector<std::string>& tokens) {
  for (const auto& t : tokens) add(t);
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("token id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary: " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (n < kNumSpecials) {
      if (line != v.tokens_[n]) throw std::runtime_error("vocabulary file does not start with the special tokens");
    } else if (v.add(line) != static_cast<TokenId>(n)) {
      throw std::runtime_error("duplicate token in vocabulary file: " + line);
    }
    ++n;
  }
  return v;
}

namespace {

void push(TokenSequence& seq, const std::string& text, TokenId id, Segment seg, TokenId pos) {
  seq.tokens.push_back(text);
  seq.token_ids.push_back(id);
  seq.segment_ids.push_back(static_cast<TokenId>(seg));
  seq.position_ids.push_back(pos);
}

}  // namespace

TokenSequence serialize_utterance(const std::string& system, const std::string& user, const Vocabulary& vocab,
                                  std::size_t max_len) {
  if (max_len < 3) throw ContractError("utterance length limit must allow [CLS] ; [SEP]");
  std::vector<std::string> body = tokenize(system);
  body.push_back(";");
  for (auto& t : tokenize(user)) body.push_back(std::move(t));
  if (body.size() + 2 > max_len) {
    const std::size_t drop = body.size() + 2 - max_len;
    log_warn("utterance of " + std::to_string(body.size() + 2) + " tokens truncated to " + std::to_string(max_len));
    body.erase(body.begin(), body.begin() + static_cast<std::ptrdiff_t>(drop));
  }
  TokenSequence seq;
  push(seq, "[CLS]", Vocabulary::kCls, Segment::kUttCls, 0);
  for (const auto& t : body) push(seq, t, vocab.id(t), Segment::kUttBody, static_cast<TokenId>(seq.size()));
  push(seq, "[SEP]", Vocabulary::kSep, Segment::kUttBody, static_cast<TokenId>(seq.size()));
  return seq;
}

TokenSequence serialize_state(const DialogueState& state, const Vocabulary& vocab, std::size_t max_len) {
  TokenSequence seq;
  push(seq, "[CLS]", Vocabulary::kCls, Segment::kStateCls, 0);
  for (const auto& t : state.triplets()) {
    const auto value = tokenize(t.value);
    if (value.empty()) {
      throw ContractError("state triplet (" + t.domain + ", " + t.slot + ") has an empty value");
    }
    std::vector<std::string> toks = tokenize(t.domain);
    toks.push_back("-");
    for (auto& s : tokenize(t.slot)) toks.push_back(std::move(s));
    toks.push_back("-");
    toks.insert(toks.end(), value.begin(), value.end());
    if (seq.size() + toks.size() > max_len) {
      log_warn("previous state exceeds " + std::to_string(max_len) + " tokens; dropping (" + t.domain + ", " +
               t.slot + ")");
      continue;
    }
    const std::size_t begin = seq.size();
    for (std::size_t k = 0; k < toks.size(); ++k) {
      push(seq, toks[k], vocab.id(toks[k]), Segment::kStateBody, static_cast<TokenId>(k));
    }
    seq.triplet_spans.emplace_back(begin, seq.size());
  }
  seq.adjacency = state_adjacency(seq.size(), seq.triplet_spans);
  return seq;
}

DialogueState parse_state(const TokenSequence& seq) {
  DialogueState out;
  for (const auto& [begin, end] : seq.triplet_spans) {
    std::vector<std::string> parts[3];
    std::size_t field = 0;
    for (std::size_t i = begin; i < end; ++i) {
      if (seq.tokens[i] == "-" && field < 2) {
        ++field;
        continue;
      }
      parts[field].push_back(seq.tokens[i]);
    }
    if (field != 2) throw ContractError("malformed triplet span in state sequence");
    out.set(join_tokens(parts[0]), join_tokens(parts[1]), join_tokens(parts[2]));
  }
  return out;
}

EmbeddingTables EmbeddingTables::create(ParameterStore& store, std::size_t vocab_size, std::size_t d_model,
                                        std::size_t max_positions, Real init_scale, std::mt19937_64& rng) {
  EmbeddingTables t;
  t.token = &store.add_uniform("embed.token", vocab_size, d_model, init_scale, rng);
  t.segment = &store.add_uniform("embed.segment", kNumSegments, d_model, init_scale, rng);
  t.position = &store.add_uniform("embed.position", max_positions, d_model, init_scale, rng);
  return t;
}

Var embed_sequence(Tape& tape, const TokenSequence& seq, const EmbeddingTables& tables) {
  if (seq.size() == 0) throw ContractError("embed_sequence: empty sequence");
  for (TokenId p : seq.position_ids) {
    if (p < 0 || static_cast<std::size_t>(p) >= tables.position->value.rows()) {
      throw std::length_error("position " + std::to_string(p) + " beyond position table of " +
                              std::to_string(tables.position->value.rows()));
    }
  }
  Var tok = ag::gather_rows(tape.parameter(*tables.token), seq.token_ids);
  Var seg = ag::gather_rows(tape.parameter(*tables.segment), seq.segment_ids);
  Var pos = ag::gather_rows(tape.parameter(*tables.position), seq.position_ids);
  return ag::add_n({tok, seg, pos});
}

GraphTokens graph_tokens(const SchemaGraph& g, const Vocabulary& vocab) {
  GraphTokens out;
  for (std::size_t n = 0; n < g.num_nodes(); ++n) {
    auto ids = vocab.encode(tokenize(g.node_text(n)));
    if (ids.empty()) throw SchemaError("schema node name has no tokens: " + g.node_text(n));
    out.node_ids.push_back(std::move(ids));
    switch (g.node_type(n)) {
      case NodeType::kDomain:
        out.segments.push_back(static_cast<TokenId>(Segment::kNodeDomain));
        break;
      case NodeType::kSlot:
        out.segments.push_back(static_cast<TokenId>(Segment::kNodeSlot));
        break;
      case NodeType::kDomainSlot:
        out.segments.push_back(static_cast<TokenId>(Segment::kNodeDomainSlot));
        break;
    }
  }
  return out;
}

Var init_graph_embeddings(Tape& tape, const GraphTokens& nodes, const EmbeddingTables& tables) {
  Var table = tape.parameter(*tables.token);
  std::vector<Var> rows;
  rows.reserve(nodes.node_ids.size());
  for (const auto& ids : nodes.node_ids) rows.push_back(ag::mean_rows(ag::gather_rows(table, ids)));
  Var seg = ag::gather_rows(tape.parameter(*tables.segment), nodes.segments);
  return ag::add(ag::concat_rows(rows), seg);
}

std::size_t load_embedding_file(const std::filesystem::path& path, const Vocabulary& vocab, Parameter& table) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read embedding file: " + path.string());
  std::size_t replaced = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word) || !vocab.contains(word)) continue;
    std::vector<Real> vals;
    Real v;
    while (ss >> v) vals.push_back(v);
    if (vals.size() != table.value.cols()) {
      throw std::runtime_error("embedding for '" + word + "' has " + std::to_string(vals.size()) +
                               " values, expected " + std::to_string(table.value.cols()));
    }
    auto row = table.value.row_span(static_cast<std::size_t>(vocab.id(word)));
    std::copy(vals.begin(), vals.end(), row.begin());
    ++replaced;
  }
  return replaced;
}

}  // namespace csfn
