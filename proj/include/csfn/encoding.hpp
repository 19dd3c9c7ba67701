#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "csfn/autograd.hpp"
#include "csfn/schema.hpp"
#include "csfn/state.hpp"

namespace csfn {

using TokenId = std::int64_t;

/// Token inventory. Ids are dense from 0 with the special tokens first.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kEos = 4;
  static constexpr TokenId kSemicolon = 5;
  static constexpr TokenId kDash = 6;
  static constexpr std::size_t kNumSpecials = 7;

  Vocabulary();

  /// Returns the id of `token`, inserting it if new.
  TokenId add(const std::string& token);
  void add_all(const std::vector<std::string>& tokens);
  /// Id of `token`, or kUnk.
  TokenId id(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.contains(token); }
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  /// Tokens the decoder may never emit as part of a value.
  bool is_reserved(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < kNumSpecials; }

  std::vector<TokenId> encode(const std::vector<std::string>& tokens) const;

  /// One token per line, line number = id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

enum class Segment : std::int64_t {
  kUttCls = 0,
  kUttBody = 1,
  kStateCls = 2,
  kStateBody = 3,
  kNodeDomain = 4,
  kNodeSlot = 5,
  kNodeDomainSlot = 6,
};
inline constexpr std::size_t kNumSegments = 7;

/// Serialized input stream.
struct TokenSequence {
  std::vector<std::string> tokens;
  std::vector<TokenId> token_ids;
  std::vector<TokenId> segment_ids;
  std::vector<TokenId> position_ids;
  /// [begin, end) token ranges of each triplet (state sequences only).
  std::vector<std::pair<std::size_t, std::size_t>> triplet_spans;
  /// Previous-state adjacency (state sequences only).
  std::optional<AdjacencyMatrix> adjacency;

  std::size_t size() const { return token_ids.size(); }
};

struct SequenceLimits {
  std::size_t utterance = 128;
  std::size_t state = 192;
};

/// [CLS] system ; user [SEP]. Over-long inputs lose their oldest body tokens.
TokenSequence serialize_utterance(const std::string& system, const std::string& user, const Vocabulary& vocab,
                                  std::size_t max_len = SequenceLimits{}.utterance);

/// [CLS] followed by "domain - slot - value" per triplet in (domain, slot)
/// order. Positions restart at 0 inside every triplet. Triplets that would
/// exceed `max_len` are dropped with a warning.
TokenSequence serialize_state(const DialogueState& state, const Vocabulary& vocab,
                              std::size_t max_len = SequenceLimits{}.state);

/// Inverse of serialize_state using the token text and triplet spans.
DialogueState parse_state(const TokenSequence& seq);

/// Token, segment and position embedding tables.
struct EmbeddingTables {
  Parameter* token = nullptr;
  Parameter* segment = nullptr;
  Parameter* position = nullptr;

  static EmbeddingTables create(ParameterStore& store, std::size_t vocab_size, std::size_t d_model,
                                std::size_t max_positions, Real init_scale, std::mt19937_64& rng);
};

/// Rowwise token + segment + position embedding sum.
Var embed_sequence(Tape& tape, const TokenSequence& seq, const EmbeddingTables& tables);

/// Token ids and node-type segment of every schema-graph node.
struct GraphTokens {
  std::vector<std::vector<TokenId>> node_ids;
  std::vector<TokenId> segments;
};
GraphTokens graph_tokens(const SchemaGraph& g, const Vocabulary& vocab);

/// Node row = mean of its name-token embeddings + node-type segment embedding.
Var init_graph_embeddings(Tape& tape, const GraphTokens& nodes, const EmbeddingTables& tables);

/// Loads `token v1 ... vd` lines into the rows of `table` for tokens present
/// in `vocab`. Returns the number of rows replaced.
std::size_t load_embedding_file(const std::filesystem::path& path, const Vocabulary& vocab, Parameter& table);

}  // namespace csfn
