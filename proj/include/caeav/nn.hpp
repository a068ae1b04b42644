#pragma once

#include <string>
#include <vector>

#include "caeav/ops.hpp"
#include "caeav/rng.hpp"

namespace caeav {

using ParamList = std::vector<Parameter*>;

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) in row-major draw order.
Tensor uniform_fan_in(const Shape& shape, std::size_t fan_in, Rng& rng);

/// y = x W + b with W[in, out].
struct Linear {
  Parameter weight;
  Parameter bias;
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true,
         bool frozen = false);

  std::size_t in_features() const { return weight.value.shape[0]; }
  std::size_t out_features() const { return weight.value.shape[1]; }

  Var operator()(Tape& t, Var x);
  void collect(ParamList& out);
  void set_frozen(bool f);
};

struct LayerNormParams {
  Parameter gain;
  Parameter bias;

  LayerNormParams() = default;
  LayerNormParams(const std::string& name, std::size_t channels, bool frozen = false);

  Var operator()(Tape& t, Var x);
  void collect(ParamList& out);
};

/// Scalar learnable gate.
Parameter scalar_param(const std::string& name, double value, bool frozen = false);

}  // namespace caeav
