#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "accent_ssl/numerics/tape.hpp"

namespace accent_ssl {

struct FiniteDiffEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

struct FiniteDiffReport {
  std::vector<FiniteDiffEntry> entries;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool pass = false;

  // "name[index] rel=..." for the worst entry.
  std::string worst() const {
    const FiniteDiffEntry* w = nullptr;
    for (const auto& e : entries)
      if (!w || e.max_rel_error > w->max_rel_error) w = &e;
    if (!w) return "none";
    return w->name + "[" + std::to_string(w->worst_index) + "] rel=" + std::to_string(w->max_rel_error);
  }
};

// Compares analytic gradients of loss_fn against central differences for
// every element of every listed parameter. loss_fn(Tape&) must build the loss
// on the given tape, reading parameters through tape.param(). Relative error
// is |a - n| / max(|a|, |n|, floor).
template <class S, class LossFn>
FiniteDiffReport finite_diff_check(LossFn&& loss_fn, const std::vector<Parameter<S>*>& params, S h,
                                   double tol, double floor = 1e-6) {
  std::vector<Tensor<S>> analytic;
  {
    Tape<S> tape;
    Var<S> loss = loss_fn(tape);
    if (!std::isfinite(static_cast<double>(loss.item())))
      throw NumericDomainError("finite_diff_check: loss is not finite at the base point");
    tape.backward(loss);
    for (Parameter<S>* p : params) {
      const Var<S> v = tape.param(*p);
      const Tensor<S>* g = tape.grad(v);
      analytic.push_back(g ? *g : Tensor<S>(p->value.shape()));
    }
  }

  auto eval = [&]() {
    Tape<S> tape(false);
    return static_cast<double>(loss_fn(tape).item());
  };

  FiniteDiffReport report;
  report.tol = tol;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<S>& p = *params[pi];
    FiniteDiffEntry entry{p.name, 0.0, 0};
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const S orig = p.value[i];
      p.value[i] = orig + h;
      const double fp = eval();
      p.value[i] = orig - h;
      const double fm = eval();
      p.value[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericDomainError("finite_diff_check: non-finite loss when perturbing parameter '" +
                                 p.name + "' index " + std::to_string(i));
      const double numeric = (fp - fm) / (2.0 * static_cast<double>(h));
      const double a = static_cast<double>(analytic[pi][i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.pass = report.max_rel_error <= tol;
  return report;
}

}  // namespace accent_ssl
