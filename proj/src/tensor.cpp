#include "csfn/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace csfn {

namespace {

using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Tensor& t) { return ConstMap(t.data(), t.rows(), t.cols()); }
MutMap view(Tensor& t) { return MutMap(t.data(), t.rows(), t.cols()); }

void check_inner(std::size_t lhs, std::size_t rhs, const Tensor& a, const Tensor& b, const char* op) {
  if (lhs != rhs) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, Real fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<Real> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ContractError("Tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Tensor Tensor::row(std::initializer_list<Real> values) {
  return Tensor(1, values.size(), std::vector<Real>(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<Real>> rows) {
  std::size_t cols = rows.size() == 0 ? 0 : rows.begin()->size();
  std::vector<Real> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ContractError("Tensor::from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor(rows.size(), cols, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

std::string shape_string(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

void require_shape(const Tensor& t, std::size_t rows, std::size_t cols, const char* what) {
  if (t.rows() != rows || t.cols() != cols) {
    throw ContractError(std::string(what) + ": expected [" + std::to_string(rows) + "x" + std::to_string(cols) +
                        "], got " + shape_string(t));
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_inner(a.cols(), b.rows(), a, b, "matmul");
  Tensor out(a.rows(), b.cols());
  view(out).noalias() = view(a) * view(b);
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_inner(a.cols(), b.cols(), a, b, "matmul_nt");
  Tensor out(a.rows(), b.rows());
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  check_inner(a.rows(), b.rows(), a, b, "matmul_tn");
  Tensor out(a.cols(), b.cols());
  view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  view(out).noalias() += view(a) * view(b);
}

void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  view(out).noalias() += view(a) * view(b).transpose();
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  view(out).noalias() += view(a).transpose() * view(b);
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ContractError("max_abs_diff: shape mismatch");
  Real m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace csfn
