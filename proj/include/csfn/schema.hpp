#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "csfn/tensor.hpp"

namespace csfn {

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Square 0/1 matrix over an ordered node or token list.
using AdjacencyMatrix = Tensor;

struct DomainSlots {
  std::string domain;
  std::vector<std::string> slots;
};

/// Declarative schema: domains in order, their slots, and slot pairs whose
/// value sets overlap.
struct SchemaDef {
  std::vector<DomainSlots> domains;
  std::vector<std::pair<std::string, std::string>> overlap_pairs;

  void validate() const;

  static SchemaDef from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static SchemaDef load(const std::filesystem::path& path);
};

enum class NodeType { kDomain, kSlot, kDomainSlot };

struct DomainSlotPair {
  std::string domain;
  std::string slot;
  std::size_t domain_index = 0;  // into SchemaGraph::domains
  std::size_t slot_index = 0;    // into SchemaGraph::slots
  std::string key() const { return domain + "-" + slot; }
};

/// Typed node graph over domains, distinct slots and domain-slot pairs.
/// Node order is domains, then slots, then domain-slot pairs.
class SchemaGraph {
 public:
  explicit SchemaGraph(const SchemaDef& def);

  std::size_t num_domains() const { return domains_.size(); }
  std::size_t num_slots() const { return slots_.size(); }
  std::size_t num_pairs() const { return pairs_.size(); }
  std::size_t num_nodes() const { return domains_.size() + slots_.size() + pairs_.size(); }

  const std::vector<std::string>& domains() const { return domains_; }
  const std::vector<std::string>& slots() const { return slots_; }
  const std::vector<DomainSlotPair>& pairs() const { return pairs_; }
  const std::set<std::pair<std::size_t, std::size_t>>& edges() const { return edges_; }
  const SchemaDef& def() const { return def_; }

  std::size_t domain_node(std::size_t d) const { return d; }
  std::size_t slot_node(std::size_t s) const { return num_domains() + s; }
  std::size_t pair_node(std::size_t j) const { return num_domains() + num_slots() + j; }

  NodeType node_type(std::size_t node) const;
  /// Surface text of a node; domain-slot nodes read "domain slot".
  std::string node_text(std::size_t node) const;

  std::optional<std::size_t> domain_index(const std::string& domain) const;
  std::optional<std::size_t> slot_index(const std::string& slot) const;
  /// Zero-based ordinal of the domain-slot pair, if declared.
  std::optional<std::size_t> pair_index(const std::string& domain, const std::string& slot) const;

  bool has_edge(std::size_t a, std::size_t b) const;

 private:
  void link(std::size_t a, std::size_t b);

  SchemaDef def_;
  std::vector<std::string> domains_;
  std::vector<std::string> slots_;
  std::vector<DomainSlotPair> pairs_;
  std::set<std::pair<std::size_t, std::size_t>> edges_;
};

SchemaGraph build_schema_graph(const SchemaDef& def);

/// A[i][j] = 1 iff (i, j) is an edge or i == j.
AdjacencyMatrix adjacency_matrix(const SchemaGraph& g);

/// Row of the j-th domain-slot node (j is one-based, 1..J) in a zero-based
/// node matrix: M + N + j - 1.
std::size_t domain_slot_row_index(const SchemaGraph& g, std::size_t j);

/// Adjacency over a serialized previous state: index 0 is [CLS], every
/// [begin, end) span is one triplet. Tokens within a triplet are mutually
/// linked, [CLS] links to everything, the diagonal is one.
AdjacencyMatrix state_adjacency(std::size_t length, const std::vector<std::pair<std::size_t, std::size_t>>& spans);

enum class AblationMode { kSchema, kFullOnes, kIdentity };

std::string to_string(AblationMode m);
AblationMode parse_ablation(const std::string& s);

/// Graph-stream mask for the requested ablation: the rule-built matrix, all
/// ones, or the identity.
AdjacencyMatrix graph_mask(const SchemaGraph& g, AblationMode mode);

}  // namespace csfn
