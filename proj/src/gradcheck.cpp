#include "hlan/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace hlan {

real relative_error(real analytic, real numeric, real floor) {
  const real denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const std::function<real()>& f, std::span<Tensor* const> params,
                                  std::span<const Tensor> analytic, real eps,
                                  std::span<const std::string> names) {
  if (!(eps > 0)) throw ContractError("finite_diff_check: eps must be positive");
  if (params.size() != analytic.size())
    throw ContractError("finite_diff_check: one analytic gradient per parameter required");
  GradCheckReport report;
  const real base = f();
  if (f() != base) {
    report.valid = false;
    return report;
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& param = *params[p];
    if (!analytic[p].same_shape(param))
      throw DimensionError("finite_diff_check: gradient shape " + shape_str(analytic[p].shape()) +
                           " vs parameter " + shape_str(param.shape()));
    real worst = 0;
    for (std::size_t i = 0; i < param.size(); ++i) {
      const real orig = param[i];
      param[i] = orig + eps;
      const real up = f();
      param[i] = orig - eps;
      const real down = f();
      param[i] = orig;
      const real numeric = (up - down) / (2 * eps);
      const real err = relative_error(analytic[p][i], numeric);
      worst = std::max(worst, err);
      if (err > report.max_rel_error || report.coordinates == 0) {
        report.max_rel_error = err;
        report.worst = (p < names.size() ? names[p] : "param" + std::to_string(p)) + "[" +
                       std::to_string(i) + "]";
      }
      ++report.coordinates;
    }
    report.per_param.push_back(worst);
  }
  return report;
}

}  // namespace hlan
