#include "caeav/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "caeav/errors.hpp"

namespace caeav {

static double eval_nograd(const ScalarFn& f) {
  Tape t(Tape::Mode::NoGrad);
  Var r = f(t);
  return r.item();
}

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Parameter*>& params, double h,
                           std::size_t max_coords_per_param) {
  if (!(h >= 1e-6 && h <= 1e-4)) throw ConfigError("grad_check: step h must lie in [1e-6, 1e-4]");

  const double base0 = eval_nograd(f);
  const double base1 = eval_nograd(f);
  if (std::memcmp(&base0, &base1, sizeof(double)) != 0)
    throw UsageError("grad_check: objective is not deterministic, finite-difference oracle invalid");

  for (Parameter* p : params) p->zero_grad();
  {
    Tape t;
    Var root = f(t);
    t.backward(root);
  }

  GradCheckResult res;
  for (Parameter* p : params) {
    if (p->frozen) continue;
    const std::size_t n = p->value.size();
    std::size_t step = 1;
    if (max_coords_per_param > 0 && n > max_coords_per_param) step = (n + max_coords_per_param - 1) / max_coords_per_param;
    for (std::size_t i = 0; i < n; i += step) {
      const double orig = p->value.data[i];
      p->value.data[i] = orig + h;
      const double fp = eval_nograd(f);
      p->value.data[i] = orig - h;
      const double fm = eval_nograd(f);
      p->value.data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = p->grad.data[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > res.max_rel_error || res.coords_checked == 0) {
        res.max_rel_error = rel;
        res.worst_param = p->name;
        res.worst_index = i;
        res.analytic = analytic;
        res.numeric = numeric;
      }
      ++res.coords_checked;
    }
  }
  return res;
}

}  // namespace caeav
