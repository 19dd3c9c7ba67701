#include "csfn/state.hpp"

#include <cctype>
#include <string_view>

namespace csfn {

namespace {

bool is_punct(char c) {
  switch (c) {
    case ',':
    case '.':
    case '!':
    case '?':
    case ';':
    case ':':
    case '(':
    case ')':
    case '"':
    case '\'':
    case '-':
    case '[':
    case ']':
    case '{':
    case '}':
      return true;
    default:
      return false;
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 128) c = static_cast<char>(std::tolower(u));
  }
  return out;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  const std::string s = lower(text);
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j == i) break;
    std::size_t b = i;
    std::size_t e = j;
    std::vector<std::string> tail;
    while (b < e && is_punct(s[b])) out.emplace_back(1, s[b++]);
    while (e > b && is_punct(s[e - 1])) tail.emplace_back(1, s[--e]);
    if (e > b) out.emplace_back(s.substr(b, e - b));
    out.insert(out.end(), tail.rbegin(), tail.rend());
    i = j;
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::string normalize_text(std::string_view text) { return join_tokens(tokenize(text)); }

std::string normalize_value(std::string_view text) {
  std::string s(text);
  for (char& c : s)
    if (c == '-' || c == '_') c = ' ';
  std::string v = normalize_text(s);
  if (v == "dontcare" || v == "dont care" || v == "don't care" || v == "do n't care" || v == "does not care" ||
      v == "doesn't care" || v == "dont_care") {
    return kDontCare;
  }
  return v;
}

DialogueState::DialogueState(std::initializer_list<Triplet> triplets) {
  for (const auto& t : triplets) set(t.domain, t.slot, t.value);
}

void DialogueState::set(const std::string& domain, const std::string& slot, const std::string& value) {
  values_[{domain, slot}] = value;
}

void DialogueState::erase(const std::string& domain, const std::string& slot) { values_.erase({domain, slot}); }

const std::string* DialogueState::find(const std::string& domain, const std::string& slot) const {
  auto it = values_.find({domain, slot});
  return it == values_.end() ? nullptr : &it->second;
}

std::vector<Triplet> DialogueState::triplets() const {
  std::vector<Triplet> out;
  out.reserve(values_.size());
  for (const auto& [k, v] : values_) out.push_back({k.first, k.second, v});
  return out;
}

DialogueState DialogueState::restricted_to(const std::string& domain) const {
  DialogueState out;
  for (const auto& [k, v] : values_)
    if (k.first == domain) out.values_.emplace(k, v);
  return out;
}

nlohmann::json DialogueState::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [k, v] : values_) j.push_back({k.first, k.second, v});
  return j;
}

DialogueState DialogueState::from_json(const nlohmann::json& j) {
  DialogueState s;
  for (const auto& t : j) {
    auto parts = t.get<std::vector<std::string>>();
    if (parts.size() != 3) throw std::invalid_argument("state triplet must have three fields");
    s.set(parts[0], parts[1], parts[2]);
  }
  return s;
}

std::string to_string(const DialogueState& s) {
  std::string out = "{";
  bool first = true;
  for (const auto& t : s.triplets()) {
    if (!first) out += ", ";
    first = false;
    out += "(" + t.domain + ", " + t.slot + ", " + t.value + ")";
  }
  return out + "}";
}

}  // namespace csfn
