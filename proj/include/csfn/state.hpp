#pragma once

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace csfn {

/// Value text of the DONTCARE gate class.
inline const std::string kDontCare = "dont care";

/// Lowercased, whitespace-split tokens with leading/trailing punctuation
/// detached into separate tokens.
std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(const std::vector<std::string>& tokens);
/// Tokenize and rejoin with single spaces.
std::string normalize_text(std::string_view text);
/// Normalization applied to slot values on ingestion: '-' becomes a space and
/// the spellings "dontcare", "dont care", "don't care", "do n't care",
/// "does not care" map to kDontCare.
std::string normalize_value(std::string_view text);

struct Triplet {
  std::string domain;
  std::string slot;
  std::string value;

  friend bool operator==(const Triplet&, const Triplet&) = default;
  friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

/// Set of (domain, slot, value) triplets with at most one value per
/// domain-slot pair. Iteration order is lexicographic by (domain, slot).
class DialogueState {
 public:
  DialogueState() = default;
  DialogueState(std::initializer_list<Triplet> triplets);

  /// Inserts or overwrites the value for (domain, slot).
  void set(const std::string& domain, const std::string& slot, const std::string& value);
  void erase(const std::string& domain, const std::string& slot);
  const std::string* find(const std::string& domain, const std::string& slot) const;

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::vector<Triplet> triplets() const;
  /// Triplets whose domain equals `domain`.
  DialogueState restricted_to(const std::string& domain) const;

  nlohmann::json to_json() const;
  static DialogueState from_json(const nlohmann::json& j);

  friend bool operator==(const DialogueState&, const DialogueState&) = default;

 private:
  std::map<std::pair<std::string, std::string>, std::string> values_;
};

std::string to_string(const DialogueState& s);

}  // namespace csfn
