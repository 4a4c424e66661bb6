#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mpn/errors.hpp"
#include "mpn/tensor.hpp"

namespace mpn {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t n_checked = 0;

  bool passed(double tol) const { return std::isfinite(max_rel_err) && max_rel_err < tol; }
};

template <class S>
struct NamedTensor {
  std::string name;
  Tensor<S> tensor;
};

// Central-difference check of d(f)/d(params) against reverse-mode gradients.
// f must be a deterministic scalar function of the listed parameters.
// Relative error uses denominator max(|analytic|, |numeric|, 1e-5): entries
// whose gradient is below 1e-5 are effectively compared absolutely, since
// central differences themselves only resolve ~1e-9 — without the floor,
// directions the loss is invariant to would report pure rounding noise as
// large relative errors.
template <class S>
GradCheckReport grad_check(const std::function<Tensor<S>()>& f,
                           std::vector<NamedTensor<S>> params, double h = 1e-4) {
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  Tensor<S> loss = f();
  if (!std::isfinite(static_cast<double>(loss.item())))
    throw NumericError("grad_check: non-finite loss at base point");
  backward(loss);

  std::vector<std::vector<S>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.tensor.grad());

  GradCheckReport rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].tensor.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const S orig = vals[i];
      vals[i] = orig + static_cast<S>(h);
      const double fp = static_cast<double>(f().item());
      vals[i] = orig - static_cast<S>(h);
      const double fm = static_cast<double>(f().item());
      vals[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("grad_check: non-finite value at " + params[pi].name + "[" +
                           std::to_string(i) + "]");
      const double num = (fp - fm) / (2.0 * h);
      const double ana = static_cast<double>(analytic[pi][i]);
      const double denom = std::max({std::abs(num), std::abs(ana), 1e-5});
      const double rel = std::abs(num - ana) / denom;
      ++rep.n_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = params[pi].name;
        rep.worst_index = i;
        rep.analytic = ana;
        rep.numeric = num;
      }
    }
  }
  for (auto& p : params) p.tensor.zero_grad();
  return rep;
}

}  // namespace mpn
