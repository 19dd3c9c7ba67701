#include "csfn/schema.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

namespace csfn {

void SchemaDef::validate() const {
  if (domains.empty()) throw SchemaError("schema declares no domains");
  std::unordered_set<std::string> seen_domains;
  std::unordered_set<std::string> all_slots;
  for (const auto& d : domains) {
    if (d.domain.empty()) throw SchemaError("empty domain name");
    if (!seen_domains.insert(d.domain).second) throw SchemaError("duplicate domain: " + d.domain);
    if (d.slots.empty()) throw SchemaError("domain without slots: " + d.domain);
    std::unordered_set<std::string> local;
    for (const auto& s : d.slots) {
      if (s.empty()) throw SchemaError("empty slot name in domain " + d.domain);
      if (!local.insert(s).second) throw SchemaError("duplicate slot " + s + " in domain " + d.domain);
      all_slots.insert(s);
    }
  }
  for (const auto& [a, b] : overlap_pairs) {
    if (!all_slots.contains(a)) throw SchemaError("overlap pair names unknown slot: " + a);
    if (!all_slots.contains(b)) throw SchemaError("overlap pair names unknown slot: " + b);
    if (a == b) throw SchemaError("overlap pair links a slot to itself: " + a);
  }
}

SchemaDef SchemaDef::from_json(const nlohmann::json& j) {
  SchemaDef def;
  try {
    const auto& slots = j.at("slots");
    for (const auto& d : j.at("domains")) {
      const auto name = d.get<std::string>();
      if (!slots.contains(name)) throw SchemaError("no slot list for domain " + name);
      def.domains.push_back({name, slots.at(name).get<std::vector<std::string>>()});
    }
    if (j.contains("overlap_pairs")) {
      for (const auto& p : j.at("overlap_pairs")) {
        auto pair = p.get<std::vector<std::string>>();
        if (pair.size() != 2) throw SchemaError("overlap pair must have exactly two slots");
        def.overlap_pairs.emplace_back(pair[0], pair[1]);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema JSON: ") + e.what());
  }
  def.validate();
  return def;
}

nlohmann::json SchemaDef::to_json() const {
  nlohmann::json j;
  j["domains"] = nlohmann::json::array();
  j["slots"] = nlohmann::json::object();
  for (const auto& d : domains) {
    j["domains"].push_back(d.domain);
    j["slots"][d.domain] = d.slots;
  }
  j["overlap_pairs"] = nlohmann::json::array();
  for (const auto& [a, b] : overlap_pairs) j["overlap_pairs"].push_back({a, b});
  return j;
}

SchemaDef SchemaDef::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open schema file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("schema file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

SchemaGraph::SchemaGraph(const SchemaDef& def) : def_(def) {
  def_.validate();
  for (const auto& d : def_.domains) {
    domains_.push_back(d.domain);
    for (const auto& s : d.slots) {
      if (std::find(slots_.begin(), slots_.end(), s) == slots_.end()) slots_.push_back(s);
    }
  }
  for (std::size_t di = 0; di < def_.domains.size(); ++di) {
    for (const auto& s : def_.domains[di].slots) {
      const auto si = static_cast<std::size_t>(std::find(slots_.begin(), slots_.end(), s) - slots_.begin());
      pairs_.push_back({def_.domains[di].domain, s, di, si});
    }
  }

  // (d, d') for every pair of domains
  for (std::size_t a = 0; a < domains_.size(); ++a)
    for (std::size_t b = a + 1; b < domains_.size(); ++b) link(domain_node(a), domain_node(b));
  // (s, d) when s belongs to d; (d, o) and (s, o) for each domain-slot o
  for (std::size_t j = 0; j < pairs_.size(); ++j) {
    const auto& p = pairs_[j];
    link(slot_node(p.slot_index), domain_node(p.domain_index));
    link(domain_node(p.domain_index), pair_node(j));
    link(slot_node(p.slot_index), pair_node(j));
  }
  // (s, s') for declared value overlaps
  for (const auto& [a, b] : def_.overlap_pairs) link(slot_node(*slot_index(a)), slot_node(*slot_index(b)));
}

void SchemaGraph::link(std::size_t a, std::size_t b) { edges_.emplace(std::min(a, b), std::max(a, b)); }

bool SchemaGraph::has_edge(std::size_t a, std::size_t b) const {
  return edges_.contains({std::min(a, b), std::max(a, b)});
}

NodeType SchemaGraph::node_type(std::size_t node) const {
  if (node < num_domains()) return NodeType::kDomain;
  if (node < num_domains() + num_slots()) return NodeType::kSlot;
  if (node < num_nodes()) return NodeType::kDomainSlot;
  throw ContractError("node index out of range: " + std::to_string(node));
}

std::string SchemaGraph::node_text(std::size_t node) const {
  switch (node_type(node)) {
    case NodeType::kDomain:
      return domains_[node];
    case NodeType::kSlot:
      return slots_[node - num_domains()];
    case NodeType::kDomainSlot: {
      const auto& p = pairs_[node - num_domains() - num_slots()];
      return p.domain + " " + p.slot;
    }
  }
  return {};
}

std::optional<std::size_t> SchemaGraph::domain_index(const std::string& domain) const {
  auto it = std::find(domains_.begin(), domains_.end(), domain);
  if (it == domains_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - domains_.begin());
}

std::optional<std::size_t> SchemaGraph::slot_index(const std::string& slot) const {
  auto it = std::find(slots_.begin(), slots_.end(), slot);
  if (it == slots_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - slots_.begin());
}

std::optional<std::size_t> SchemaGraph::pair_index(const std::string& domain, const std::string& slot) const {
  for (std::size_t j = 0; j < pairs_.size(); ++j)
    if (pairs_[j].domain == domain && pairs_[j].slot == slot) return j;
  return std::nullopt;
}

SchemaGraph build_schema_graph(const SchemaDef& def) { return SchemaGraph(def); }

AdjacencyMatrix adjacency_matrix(const SchemaGraph& g) {
  const std::size_t n = g.num_nodes();
  AdjacencyMatrix a = Tensor::identity(n);
  for (const auto& [i, j] : g.edges()) {
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  return a;
}

std::size_t domain_slot_row_index(const SchemaGraph& g, std::size_t j) {
  if (j < 1 || j > g.num_pairs()) {
    throw ContractError("domain-slot ordinal " + std::to_string(j) + " outside 1.." + std::to_string(g.num_pairs()));
  }
  return g.num_domains() + g.num_slots() + j - 1;
}

AdjacencyMatrix state_adjacency(std::size_t length, const std::vector<std::pair<std::size_t, std::size_t>>& spans) {
  if (length == 0) throw ContractError("state_adjacency: sequence must start with [CLS]");
  AdjacencyMatrix a = Tensor::identity(length);
  for (std::size_t k = 0; k < length; ++k) {
    a(0, k) = 1.0;
    a(k, 0) = 1.0;
  }
  for (const auto& [begin, end] : spans) {
    if (begin < 1 || end > length || begin > end) throw ContractError("state_adjacency: bad triplet span");
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = begin; j < end; ++j) a(i, j) = 1.0;
  }
  return a;
}

std::string to_string(AblationMode m) {
  switch (m) {
    case AblationMode::kSchema:
      return "schema";
    case AblationMode::kFullOnes:
      return "ones";
    case AblationMode::kIdentity:
      return "identity";
  }
  return "schema";
}

AblationMode parse_ablation(const std::string& s) {
  if (s == "schema") return AblationMode::kSchema;
  if (s == "ones" || s == "full_ones") return AblationMode::kFullOnes;
  if (s == "identity") return AblationMode::kIdentity;
  throw ContractError("unknown ablation mode: " + s);
}

AdjacencyMatrix graph_mask(const SchemaGraph& g, AblationMode mode) {
  switch (mode) {
    case AblationMode::kSchema:
      return adjacency_matrix(g);
    case AblationMode::kFullOnes:
      return Tensor(g.num_nodes(), g.num_nodes(), 1.0);
    case AblationMode::kIdentity:
      return Tensor::identity(g.num_nodes());
  }
  return adjacency_matrix(g);
}

}  // namespace csfn
