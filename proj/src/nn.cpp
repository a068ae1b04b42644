#include "caeav/nn.hpp"

#include <cmath>

namespace caeav {

Tensor uniform_fan_in(const Shape& shape, std::size_t fan_in, Rng& rng) {
  Tensor t(shape, 0.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias, bool frozen)
    : weight(name + ".weight", uniform_fan_in({in, out}, in, rng), frozen),
      bias(name + ".bias", Tensor({out}, 0.0), frozen),
      has_bias(with_bias) {}

Var Linear::operator()(Tape& t, Var x) {
  Var y = matmul(x, t.param(weight));
  return has_bias ? add(y, t.param(bias)) : y;
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

void Linear::set_frozen(bool f) {
  weight.frozen = f;
  bias.frozen = f;
}

LayerNormParams::LayerNormParams(const std::string& name, std::size_t channels, bool frozen)
    : gain(name + ".gain", Tensor({channels}, 1.0), frozen), bias(name + ".bias", Tensor({channels}, 0.0), frozen) {}

Var LayerNormParams::operator()(Tape& t, Var x) { return layer_norm(x, t.param(gain), t.param(bias)); }

void LayerNormParams::collect(ParamList& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

Parameter scalar_param(const std::string& name, double value, bool frozen) {
  return Parameter(name, Tensor::scalar(value), frozen);
}

}  // namespace caeav
