#pragma once

#include <functional>
#include <string>
#include <vector>

#include "caeav/tape.hpp"

namespace caeav {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

/// Scalar objective recorded onto the given tape.
using ScalarFn = std::function<Var(Tape&)>;

/// Compares the tape gradient of f against central differences
/// (f(p+h) - f(p-h)) / 2h for every coordinate of every non-frozen parameter.
/// Relative error uses the denominator max(|analytic|, |numeric|, 1e-8).
/// `max_coords_per_param` > 0 checks an evenly spaced subset of each parameter.
/// Throws ConfigError for h outside [1e-6, 1e-4] and UsageError when f is not
/// deterministic.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Parameter*>& params, double h = 1e-5,
                           std::size_t max_coords_per_param = 0);

}  // namespace caeav
