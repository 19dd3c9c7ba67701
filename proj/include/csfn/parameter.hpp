#pragma once

#include <deque>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "csfn/tensor.hpp"

namespace csfn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad.fill(0.0); }
};

/// Owns every trainable tensor of a model in registration order.
/// Addresses are stable, so layers keep plain pointers into the store.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor value);
  /// uniform(-scale, scale) initialisation drawn from `rng`.
  Parameter& add_uniform(const std::string& name, std::size_t rows, std::size_t cols, Real scale,
                         std::mt19937_64& rng);
  Parameter& add_constant(const std::string& name, std::size_t rows, std::size_t cols, Real value);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }

  void zero_grads();

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

/// Sum of element counts over distinct parameters (deduplicated by name).
std::size_t count_parameters(const std::vector<const Parameter*>& params);

}  // namespace csfn
