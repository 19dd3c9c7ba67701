#include "csfn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace csfn {

namespace {

Real evaluate(const ScalarFn& fn) {
  Tape tape(false);
  Var out = fn(tape);
  require_shape(out.value(), 1, 1, "grad_check objective");
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& fn, const std::vector<Parameter*>& params, const GradCheckOptions& opts) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape(true);
    Var out = fn(tape);
    tape.backward(out);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k]->value.size(); ++i) coords.emplace_back(k, i);
  if (opts.samples > 0 && opts.samples < coords.size()) {
    std::mt19937_64 rng(opts.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    std::vector<std::pair<std::size_t, std::size_t>> chosen;
    std::vector<std::size_t> taken(params.size(), 0);
    std::vector<bool> used(coords.size(), false);
    for (std::size_t c = 0; c < coords.size(); ++c) {
      if (taken[coords[c].first] < opts.per_parameter) {
        ++taken[coords[c].first];
        chosen.push_back(coords[c]);
        used[c] = true;
      }
    }
    for (std::size_t c = 0; c < coords.size() && chosen.size() < opts.samples; ++c)
      if (!used[c]) chosen.push_back(coords[c]);
    coords = std::move(chosen);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckReport report;
  for (auto [k, i] : coords) {
    Parameter& p = *params[k];
    const Real saved = p.value[i];
    p.value[i] = saved + opts.h;
    const Real plus = evaluate(fn);
    p.value[i] = saved - opts.h;
    const Real minus = evaluate(fn);
    p.value[i] = saved;

    GradCheckEntry e;
    e.param = p.name;
    e.index = i;
    e.analytic = analytic[k][i];
    e.numeric = (plus - minus) / (2.0 * opts.h);
    const Real denom = std::max({std::abs(e.analytic), std::abs(e.numeric), opts.denom_floor});
    e.rel_error = std::abs(e.analytic - e.numeric) / denom;
    if (report.checked == 0 || e.rel_error > report.max_rel_error) {
      report.max_rel_error = e.rel_error;
      report.worst = e;
    }
    report.entries.push_back(std::move(e));
    ++report.checked;
  }
  report.passed = report.max_rel_error < opts.tol;
  return report;
}

}  // namespace csfn
