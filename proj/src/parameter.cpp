#include "csfn/parameter.hpp"

#include <cmath>
#include <unordered_set>

namespace csfn {

Parameter& ParameterStore::add(const std::string& name, Tensor value) {
  if (by_name_.contains(name)) throw ContractError("duplicate parameter name: " + name);
  Parameter& p = params_.emplace_back(name, std::move(value));
  by_name_.emplace(name, &p);
  return p;
}

Parameter& ParameterStore::add_uniform(const std::string& name, std::size_t rows, std::size_t cols, Real scale,
                                       std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> dist(-scale, scale);
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = dist(rng);
  return add(name, std::move(t));
}

Parameter& ParameterStore::add_constant(const std::string& name, std::size_t rows, std::size_t cols, Real value) {
  return add(name, Tensor(rows, cols, value));
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

Parameter& ParameterStore::at(const std::string& name) {
  Parameter* p = find(name);
  if (!p) throw ContractError("unknown parameter: " + name);
  return *p;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

void ParameterStore::zero_grads() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t count_parameters(const std::vector<const Parameter*>& params) {
  std::unordered_set<std::string> seen;
  std::size_t total = 0;
  for (const Parameter* p : params) {
    if (seen.insert(p->name).second) total += p->value.size();
  }
  return total;
}

}  // namespace csfn
