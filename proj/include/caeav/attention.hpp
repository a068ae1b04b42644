#pragma once

#include <string>

#include "caeav/nn.hpp"

namespace caeav {

/// Projection weights of one multi-head attention block (no biases).
struct MhaParams {
  Parameter w_query;  ///< [C_q, C]
  Parameter w_key;    ///< [C_kv, C]
  Parameter w_value;  ///< [C_kv, C]
  Parameter w_out;    ///< [C, C_q]
  std::size_t heads = 1;

  MhaParams() = default;
  /// Self-attention over width `channels`. Throws ConfigError when channels % heads != 0.
  MhaParams(const std::string& name, std::size_t channels, std::size_t heads, Rng& rng, bool frozen = false);

  std::size_t channels() const { return w_query.value.shape[1]; }
  void collect(ParamList& out);
  void set_frozen(bool f);
};

/// Scaled dot-product multi-head self-attention over x[N, C] or x[B, N, C]
/// (attention mixes the N axis only; batches are independent).
Var mha(Tape& t, Var x, MhaParams& p);

/// Multi-head cross-attention: queries from q[B, Nq, C], keys and values from
/// k[B, Nk, C] and v[B, Nk, C]. Output [B, Nq, C].
Var mhca(Tape& t, Var q, Var k, Var v, MhaParams& p);

}  // namespace caeav
