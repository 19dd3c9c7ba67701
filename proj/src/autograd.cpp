#include "csfn/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace csfn {

namespace detail {

Tensor& Node::grad_buf() {
  touched = true;
  if (param) return param->grad;
  if (grad.empty() && !value.empty()) grad = Tensor(value.rows(), value.cols());
  return grad;
}

}  // namespace detail

Tensor Var::grad() const {
  const auto& v = value();
  if (node_->param) return node_->param->grad;
  if (node_->grad.empty()) return Tensor(v.rows(), v.cols());
  return node_->grad;
}

Var Tape::constant(Tensor value) {
  auto& n = nodes_.emplace_back();
  n.value = std::move(value);
  return Var(this, &n);
}

Var Tape::parameter(Parameter& p) {
  auto& n = nodes_.emplace_back();
  n.param = &p;
  n.requires_grad = grad_enabled_;
  return Var(this, &n);
}

Var Tape::make(Tensor value, std::initializer_list<Var> parents) {
  auto& n = nodes_.emplace_back();
  n.value = std::move(value);
  if (grad_enabled_) {
    n.requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& v) { return v.requires_grad(); });
  }
  return Var(this, &n);
}

Var Tape::make(Tensor value, const std::vector<Var>& parents) {
  auto& n = nodes_.emplace_back();
  n.value = std::move(value);
  if (grad_enabled_) {
    n.requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& v) { return v.requires_grad(); });
  }
  return Var(this, &n);
}

void Tape::set_backward(const Var& out, std::function<void()> fn) {
  if (out.node()->requires_grad) out.node()->backward = std::move(fn);
}

void Tape::backward(const Var& root) {
  if (!grad_enabled_) throw ContractError("backward on a tape recorded without gradients");
  require_shape(root.value(), 1, 1, "backward root");
  if (!root.requires_grad()) return;
  root.node()->grad_buf()(0, 0) += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->touched && it->backward) it->backward();
  }
}

namespace ag {

namespace {

using detail::Node;

void check_same(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_string(a.value()) + " vs " +
                        shape_string(b.value()));
  }
}

template <typename F>
Var unary(const Var& a, F&& f) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape().make(std::move(out), {a});
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Var out = a.tape().make(csfn::matmul(a.value(), b.value()), {a, b});
  Node* o = out.node();
  Node* na = a.node();
  Node* nb = b.node();
  a.tape().set_backward(out, [o, na, nb] {
    if (na->requires_grad) matmul_nt_acc(o->grad, nb->val(), na->grad_buf());
    if (nb->requires_grad) matmul_tn_acc(na->val(), o->grad, nb->grad_buf());
  });
  return out;
}

Var matmul_nt(const Var& a, const Var& b) {
  Var out = a.tape().make(csfn::matmul_nt(a.value(), b.value()), {a, b});
  Node* o = out.node();
  Node* na = a.node();
  Node* nb = b.node();
  a.tape().set_backward(out, [o, na, nb] {
    if (na->requires_grad) matmul_acc(o->grad, nb->val(), na->grad_buf());
    if (nb->requires_grad) matmul_tn_acc(o->grad, na->val(), nb->grad_buf());
  });
  return out;
}

Var add(const Var& a, const Var& b) {
  check_same(a, b, "add");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  Var r = a.tape().make(std::move(out), {a, b});
  Node* o = r.node();
  Node* na = a.node();
  Node* nb = b.node();
  a.tape().set_backward(r, [o, na, nb] {
    for (Node* n : {na, nb}) {
      if (!n->requires_grad) continue;
      Tensor& g = n->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
    }
  });
  return r;
}

Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw ContractError("add_n: no terms");
  for (const auto& t : terms) check_same(terms.front(), t, "add_n");
  Tensor out = terms.front().value();
  for (std::size_t k = 1; k < terms.size(); ++k) {
    const Tensor& y = terms[k].value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  }
  Var r = terms.front().tape().make(std::move(out), terms);
  Node* o = r.node();
  std::vector<Node*> ins;
  for (const auto& t : terms) ins.push_back(t.node());
  r.tape().set_backward(r, [o, ins] {
    for (Node* n : ins) {
      if (!n->requires_grad) continue;
      Tensor& g = n->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
    }
  });
  return r;
}

Var add_row(const Var& a, const Var& row) {
  require_shape(row.value(), 1, a.cols(), "add_row");
  Tensor out = a.value();
  const Tensor& b = row.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += b[c];
  Var res = a.tape().make(std::move(out), {a, row});
  Node* o = res.node();
  Node* na = a.node();
  Node* nb = row.node();
  a.tape().set_backward(res, [o, na, nb] {
    if (na->requires_grad) {
      Tensor& g = na->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
    }
    if (nb->requires_grad) {
      Tensor& g = nb->grad_buf();
      for (std::size_t r = 0; r < o->grad.rows(); ++r)
        for (std::size_t c = 0; c < o->grad.cols(); ++c) g[c] += o->grad(r, c);
    }
  });
  return res;
}

Var mul(const Var& a, const Var& b) {
  check_same(a, b, "mul");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  Var r = a.tape().make(std::move(out), {a, b});
  Node* o = r.node();
  Node* na = a.node();
  Node* nb = b.node();
  a.tape().set_backward(r, [o, na, nb] {
    if (na->requires_grad) {
      Tensor& g = na->grad_buf();
      const Tensor& y = nb->val();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * y[i];
    }
    if (nb->requires_grad) {
      Tensor& g = nb->grad_buf();
      const Tensor& x = na->val();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * x[i];
    }
  });
  return r;
}

Var scale(const Var& a, Real s) { return affine(a, s, 0.0); }

Var affine(const Var& a, Real s, Real shift) {
  Var r = unary(a, [s, shift](Real x) { return s * x + shift; });
  Node* o = r.node();
  Node* na = a.node();
  a.tape().set_backward(r, [o, na, s] {
    Tensor& g = na->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * o->grad[i];
  });
  return r;
}

Var scale_by(const Var& s, const Var& a) {
  require_shape(s.value(), 1, 1, "scale_by");
  const Real k = s.value()[0];
  Var r = a.tape().make(Tensor(a.rows(), a.cols()), {s, a});
  {
    // unary() would drop `s` from the parent list, so fill in place.
    Tensor& out = r.node()->value;
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = k * x[i];
  }
  Node* o = r.node();
  Node* ns = s.node();
  Node* na = a.node();
  a.tape().set_backward(r, [o, ns, na] {
    const Real k = ns->val()[0];
    if (na->requires_grad) {
      Tensor& g = na->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * o->grad[i];
    }
    if (ns->requires_grad) {
      const Tensor& x = na->val();
      Real acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += o->grad[i] * x[i];
      ns->grad_buf()[0] += acc;
    }
  });
  return r;
}

Var relu(const Var& a) {
  Var r = unary(a, [](Real x) { return x > 0.0 ? x : 0.0; });
  Node* o = r.node();
  Node* na = a.node();
  a.tape().set_backward(r, [o, na] {
    Tensor& g = na->grad_buf();
    const Tensor& x = na->val();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) g[i] += o->grad[i];
  });
  return r;
}

Var tanh(const Var& a) {
  Var r = unary(a, [](Real x) { return std::tanh(x); });
  Node* o = r.node();
  Node* na = a.node();
  a.tape().set_backward(r, [o, na] {
    Tensor& g = na->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real y = o->value[i];
      g[i] += o->grad[i] * (1.0 - y * y);
    }
  });
  return r;
}

Var sigmoid(const Var& a) {
  Var r = unary(a, [](Real x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const Real e = std::exp(x);
    return e / (1.0 + e);
  });
  Node* o = r.node();
  Node* na = a.node();
  a.tape().set_backward(r, [o, na] {
    Tensor& g = na->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real y = o->value[i];
      g[i] += o->grad[i] * y * (1.0 - y);
    }
  });
  return r;
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  if (begin + count > x.rows()) throw ContractError("slice_rows: range out of bounds");
  Tensor out(count, x.cols());
  std::copy_n(x.data() + begin * x.cols(), count * x.cols(), out.data());
  Var r = a.tape().make(std::move(out), {a});
  Node* o = r.node();
  Node* na = a.node();
  a.tape().set_backward(r, [o, na, begin] {
    Tensor& g = na->grad_buf();
    Real* dst = g.data() + begin * g.cols();
    for (std::size_t i = 0; i < o->grad.size(); ++i) dst[i] += o->grad[i];
  });
  return r;
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  if (begin + count > x.cols()) throw ContractError("slice_cols: range out of bounds");
  Tensor out(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, begin + c);
  Var res = a.tape().make(std::move(out), {a});
  Node* o = res.node();
  Node* na = a.node();
  a.tape().set_backward(res, [o, na, begin] {
    Tensor& g = na->grad_buf();
    for (std::size_t r = 0; r < o->grad.rows(); ++r)
      for (std::size_t c = 0; c < o->grad.cols(); ++c) g(r, begin + c) += o->grad(r, c);
  });
  return res;
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ContractError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + offset);
    offset += p.value().size();
  }
  Var r = parts.front().tape().make(std::move(out), parts);
  Node* o = r.node();
  std::vector<Node*> ins;
  for (const auto& p : parts) ins.push_back(p.node());
  r.tape().set_backward(r, [o, ins] {
    std::size_t off = 0;
    for (Node* n : ins) {
      const std::size_t len = n->val().size();
      if (n->requires_grad) {
        Tensor& g = n->grad_buf();
        for (std::size_t i = 0; i < len; ++i) g[i] += o->grad[off + i];
      }
      off += len;
    }
  });
  return r;
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ContractError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const Tensor& x = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) out(r, c0 + c) = x(r, c);
    c0 += x.cols();
  }
  Var res = parts.front().tape().make(std::move(out), parts);
  Node* o = res.node();
  std::vector<Node*> ins;
  for (const auto& p : parts) ins.push_back(p.node());
  res.tape().set_backward(res, [o, ins] {
    std::size_t c0 = 0;
    for (Node* n : ins) {
      const std::size_t w = n->val().cols();
      if (n->requires_grad) {
        Tensor& g = n->grad_buf();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) g(r, c) += o->grad(r, c0 + c);
      }
      c0 += w;
    }
  });
  return res;
}

Var gather_rows(const Var& table, std::span<const std::int64_t> ids) {
  const Tensor& t = table.value();
  Tensor out(ids.size(), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= t.rows()) {
      throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                          std::to_string(t.rows()) + " rows");
    }
    std::copy_n(t.data() + ids[i] * t.cols(), t.cols(), out.data() + i * t.cols());
  }
  Var r = table.tape().make(std::move(out), {table});
  Node* o = r.node();
  Node* nt = table.node();
  std::vector<std::int64_t> idx(ids.begin(), ids.end());
  table.tape().set_backward(r, [o, nt, idx = std::move(idx)] {
    Tensor& g = nt->grad_buf();
    const std::size_t w = g.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Real* dst = g.data() + idx[i] * w;
      for (std::size_t c = 0; c < w; ++c) dst[c] += o->grad(i, c);
    }
  });
  return r;
}

Var mean_rows(const Var& a) {
  const Tensor& x = a.value();
  if (x.rows() == 0) throw ContractError("mean_rows: empty input");
  Tensor out(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
  const Real inv = 1.0 / static_cast<Real>(x.rows());
  for (auto& v : out.values()) v *= inv;
  Var res = a.tape().make(std::move(out), {a});
  Node* o = res.node();
  Node* na = a.node();
  a.tape().set_backward(res, [o, na, inv] {
    Tensor& g = na->grad_buf();
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += inv * o->grad[c];
  });
  return res;
}

Var sum(const Var& a) {
  Real s = 0.0;
  for (Real v : a.value().values()) s += v;
  Var r = a.tape().make(Tensor(1, 1, s), {a});
  Node* o = r.node();
  Node* na = a.node();
  a.tape().set_backward(r, [o, na] {
    Tensor& g = na->grad_buf();
    const Real d = o->grad[0];
    for (auto& v : g.values()) v += d;
  });
  return r;
}

Var softmax_rows(const Var& logits, const Tensor* mask) {
  const Tensor& x = logits.value();
  if (mask) require_shape(*mask, x.rows(), x.cols(), "softmax mask");
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t c = 0; c < x.cols(); ++c)
      if (!mask || (*mask)(r, c) != 0.0) mx = std::max(mx, x(r, c));
    if (mx == -std::numeric_limits<Real>::infinity()) continue;  // fully masked row stays zero
    Real total = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (mask && (*mask)(r, c) == 0.0) continue;
      const Real e = std::exp(x(r, c) - mx);
      out(r, c) = e;
      total += e;
    }
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= total;
  }
  Var res = logits.tape().make(std::move(out), {logits});
  Node* o = res.node();
  Node* na = logits.node();
  logits.tape().set_backward(res, [o, na] {
    Tensor& g = na->grad_buf();
    const Tensor& p = o->value;
    for (std::size_t r = 0; r < p.rows(); ++r) {
      Real dot = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) dot += o->grad(r, c) * p(r, c);
      for (std::size_t c = 0; c < p.cols(); ++c) g(r, c) += p(r, c) * (o->grad(r, c) - dot);
    }
  });
  return res;
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
  const Tensor& in = x.value();
  const std::size_t d = in.cols();
  if (d == 0) throw ContractError("layer_norm: zero width");
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  require_shape(gamma.value(), 1, d, "layer_norm gamma");
  require_shape(beta.value(), 1, d, "layer_norm beta");
  Tensor out(in.rows(), d);
  Tensor xhat(in.rows(), d);
  std::vector<Real> inv_std(in.rows());
  const Tensor& gm = gamma.value();
  const Tensor& bt = beta.value();
  for (std::size_t r = 0; r < in.rows(); ++r) {
    Real mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += in(r, c);
    mean /= static_cast<Real>(d);
    Real var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (in(r, c) - mean) * (in(r, c) - mean);
    var /= static_cast<Real>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (in(r, c) - mean) * inv_std[r];
      out(r, c) = gm[c] * xhat(r, c) + bt[c];
    }
  }
  Var res = x.tape().make(std::move(out), {x, gamma, beta});
  Node* o = res.node();
  Node* nx = x.node();
  Node* ng = gamma.node();
  Node* nb = beta.node();
  x.tape().set_backward(res, [o, nx, ng, nb, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
    const Tensor& dy = o->grad;
    const std::size_t d = dy.cols();
    if (ng->requires_grad) {
      Tensor& g = ng->grad_buf();
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t c = 0; c < d; ++c) g[c] += dy(r, c) * xhat(r, c);
    }
    if (nb->requires_grad) {
      Tensor& g = nb->grad_buf();
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t c = 0; c < d; ++c) g[c] += dy(r, c);
    }
    if (nx->requires_grad) {
      Tensor& g = nx->grad_buf();
      const Tensor& gm = ng->val();
      for (std::size_t r = 0; r < dy.rows(); ++r) {
        Real mean_dxh = 0.0;
        Real mean_dxh_xh = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const Real dxh = dy(r, c) * gm[c];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xhat(r, c);
        }
        mean_dxh /= static_cast<Real>(d);
        mean_dxh_xh /= static_cast<Real>(d);
        for (std::size_t c = 0; c < d; ++c) {
          const Real dxh = dy(r, c) * gm[c];
          g(r, c) += inv_std[r] * (dxh - mean_dxh - xhat(r, c) * mean_dxh_xh);
        }
      }
    }
  });
  return res;
}

Var dropout(const Var& a, Real p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw ContractError("dropout: rate must be < 1");
  const Real keep = 1.0 / (1.0 - p);
  std::uniform_real_distribution<Real> uni(0.0, 1.0);
  Tensor mask(a.rows(), a.cols());
  for (auto& m : mask.values()) m = uni(rng) < p ? 0.0 : keep;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  Var r = a.tape().make(std::move(out), {a});
  Node* o = r.node();
  Node* na = a.node();
  a.tape().set_backward(r, [o, na, mask = std::move(mask)] {
    Tensor& g = na->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * mask[i];
  });
  return r;
}

Var scatter_cols(const Var& a, std::span<const std::int64_t> ids, std::size_t width) {
  require_shape(a.value(), 1, ids.size(), "scatter_cols");
  Tensor out(1, width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= width) throw ContractError("scatter_cols: id out of range");
    out[static_cast<std::size_t>(ids[i])] += a.value()[i];
  }
  Var r = a.tape().make(std::move(out), {a});
  Node* o = r.node();
  Node* na = a.node();
  std::vector<std::int64_t> idx(ids.begin(), ids.end());
  a.tape().set_backward(r, [o, na, idx = std::move(idx)] {
    Tensor& g = na->grad_buf();
    for (std::size_t i = 0; i < idx.size(); ++i) g[i] += o->grad[static_cast<std::size_t>(idx[i])];
  });
  return r;
}

Var neg_log_at(const Var& probs, std::size_t index, Real floor) {
  const Tensor& p = probs.value();
  if (p.rows() != 1 || index >= p.cols()) throw ContractError("neg_log_at: index out of range");
  const Real v = p[index];
  const bool clamped = v < floor;
  Var r = probs.tape().make(Tensor(1, 1, -std::log(clamped ? floor : v)), {probs});
  Node* o = r.node();
  Node* np = probs.node();
  probs.tape().set_backward(r, [o, np, index, clamped] {
    if (clamped) return;
    Tensor& g = np->grad_buf();
    g[index] += -o->grad[0] / np->val()[index];
  });
  return r;
}

}  // namespace ag

}  // namespace csfn
