#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "caeav/gradcheck.hpp"
#include "caeav/ops.hpp"
#include "caeav/rng.hpp"

namespace caeav::test {

inline Tensor randn(const Shape& s, Rng& rng, double scale = 1.0) {
  Tensor t(s);
  for (double& x : t.data) x = scale * rng.normal();
  return t;
}

inline Parameter rparam(const std::string& name, const Shape& s, Rng& rng, double scale = 1.0) {
  return Parameter(name, randn(s, rng, scale));
}

/// sum(w * x) with fixed random weights, so every output coordinate matters.
inline Var probe(Tape& t, Var x, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum_all(hadamard(x, t.constant(randn(x.shape(), rng))));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

inline Tensor eval(const std::function<Var(Tape&)>& f) {
  Tape t(Tape::Mode::NoGrad);
  return f(t).value();
}

}  // namespace caeav::test
