#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hlan/tensor.hpp"

namespace hlan {

struct GradCheckReport {
  bool valid = true;         // false when f is not deterministic
  real max_rel_error = 0;
  std::size_t coordinates = 0;
  std::string worst;         // "<param>[<index>]" of the worst coordinate
  std::vector<real> per_param;  // max relative error per parameter

  bool passed(real tol) const { return valid && max_rel_error <= tol; }
};

// Relative error between an analytic and a numeric derivative. The
// denominator is floored at `floor` so near-zero pairs are compared absolutely.
real relative_error(real analytic, real numeric, real floor = 1e-6);

// Compares central differences (f(p+eps) - f(p-eps)) / 2eps against `analytic`
// for every coordinate of every parameter. `params` are perturbed in place and
// restored afterwards.
GradCheckReport finite_diff_check(const std::function<real()>& f, std::span<Tensor* const> params,
                                  std::span<const Tensor> analytic, real eps,
                                  std::span<const std::string> names = {});

}  // namespace hlan
