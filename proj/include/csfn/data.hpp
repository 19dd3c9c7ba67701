#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "csfn/schema.hpp"
#include "csfn/state.hpp"

namespace csfn {

class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Turn {
  std::string system;
  std::string user;
  DialogueState state;  // cumulative gold state after this user turn

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;

  friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

enum class Split { kTrain, kValid, kTest };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct Corpus {
  std::vector<Dialogue> train;
  std::vector<Dialogue> valid;
  std::vector<Dialogue> test;

  std::vector<Dialogue>& split(Split s);
  const std::vector<Dialogue>& split(Split s) const;
  std::size_t size() const { return train.size() + valid.size() + test.size(); }

  /// Throws IngestionError on duplicate ids or triplets outside the schema.
  void validate(const SchemaGraph& g) const;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

inline constexpr int kCorpusVersion = 1;

nlohmann::json corpus_to_json(const Corpus& c);
Corpus corpus_from_json(const nlohmann::json& j);
void save_corpus(const Corpus& c, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

/// What MultiWOZ ingestion dropped or rewrote.
struct IngestStats {
  std::size_t dialogues_read = 0;
  std::size_t dialogues_dropped = 0;
  std::size_t triplets_dropped = 0;
  std::size_t values_dontcare = 0;
  /// Dropped "domain-slot" keys with counts.
  std::map<std::string, std::size_t> unknown_pairs;

  nlohmann::json to_json() const;
};

/// Canonical slot name for a raw annotation name ("pricerange" -> "price range",
/// "book_day" -> "book day", ...).
std::string normalize_slot_name(std::string_view raw);

/// Parses one file in the TRADE preprocessed layout (a JSON array of
/// dialogues with "dialogue_idx" and "dialogue": [{"system_transcript",
/// "transcript", "belief_state"}]).
std::vector<Dialogue> load_multiwoz_file(const std::filesystem::path& path, const SchemaGraph& g,
                                         IngestStats* stats = nullptr);

/// Reads train_dials.json, dev_dials.json and test_dials.json from `dir`;
/// absent files leave their split empty, but at least one must exist.
Corpus load_multiwoz(const std::filesystem::path& dir, const SchemaDef& schema, IngestStats* stats = nullptr);

/// Templated synthetic dialogues over `schema` (every slot needs a lexicon
/// entry; see toy_lexicon_slots()). Deterministic in `seed`; 80/10/10 split.
Corpus generate_toy_corpus(const SchemaDef& schema, std::size_t n_dialogues, std::uint64_t seed);

/// Slot names the toy generator knows how to verbalize.
std::vector<std::string> toy_lexicon_slots();

/// Two domains: restaurant {area, food, price range} and taxi {departure,
/// destination, leave at, arrive by}, with departure/destination overlapping.
SchemaDef default_toy_schema();

/// Every dialogue in all splits, train first.
std::vector<const Dialogue*> all_dialogues(const Corpus& c);

}  // namespace csfn
