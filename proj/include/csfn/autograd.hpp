#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "csfn/parameter.hpp"
#include "csfn/tensor.hpp"

namespace csfn {

class Tape;

namespace detail {
struct Node {
  Tensor value;
  Tensor grad;
  Parameter* param = nullptr;
  bool requires_grad = false;
  bool touched = false;
  std::function<void()> backward;

  const Tensor& val() const { return param ? param->value : value; }
  /// Gradient buffer; parameter leaves accumulate straight into Parameter::grad.
  Tensor& grad_buf();
};
}  // namespace detail

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const { return node_->val(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return node_ != nullptr; }
  bool requires_grad() const { return node_->requires_grad; }
  Tape& tape() const { return *tape_; }
  /// Gradient after Tape::backward (zeros if the node was never reached).
  Tensor grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, detail::Node* node) : tape_(tape), node_(node) {}
  Tape* tape_ = nullptr;
  detail::Node* node_ = nullptr;

 public:
  detail::Node* node() const { return node_; }
};

/// Reverse-mode tape. Nodes are recorded in creation order, which is a
/// topological order, so backward is a single reverse sweep.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  Var parameter(Parameter& p);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every leaf.
  void backward(const Var& root);

  std::size_t node_count() const { return nodes_.size(); }

  // Used by the op implementations.
  Var make(Tensor value, std::initializer_list<Var> parents);
  Var make(Tensor value, const std::vector<Var>& parents);
  void set_backward(const Var& out, std::function<void()> fn);

 private:
  bool grad_enabled_;
  std::deque<detail::Node> nodes_;
};

namespace ag {

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var add_n(const std::vector<Var>& terms);
/// Adds a 1 x cols row to every row of `a`.
Var add_row(const Var& a, const Var& row);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Real s);
/// s * a + shift, elementwise.
Var affine(const Var& a, Real s, Real shift);
/// Multiplies every element of `a` by the 1x1 value `s`.
Var scale_by(const Var& s, const Var& a);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);

Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);

/// Rows of `table` selected by `ids`.
Var gather_rows(const Var& table, std::span<const std::int64_t> ids);
/// 1 x cols mean over rows.
Var mean_rows(const Var& a);
/// 1x1 sum of all elements.
Var sum(const Var& a);

/// Row softmax. Entries with mask == 0 get probability exactly 0; a row with
/// no allowed entry is all zeros. `mask` may be null (everything allowed).
Var softmax_rows(const Var& logits, const Tensor* mask = nullptr);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps);
/// Inverted dropout; identity when p == 0.
Var dropout(const Var& a, Real p, std::mt19937_64& rng);

/// Scatters the columns of a 1 x S row onto a 1 x width row: out[ids[i]] += a[i].
Var scatter_cols(const Var& a, std::span<const std::int64_t> ids, std::size_t width);
/// -log(max(p[0, index], floor)) as a 1x1 value.
Var neg_log_at(const Var& probs, std::size_t index, Real floor);

}  // namespace ag

}  // namespace csfn
