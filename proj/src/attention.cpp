#include "caeav/attention.hpp"

#include <cmath>

#include "caeav/errors.hpp"

namespace caeav {

MhaParams::MhaParams(const std::string& name, std::size_t channels, std::size_t n_heads, Rng& rng, bool frozen)
    : heads(n_heads) {
  if (n_heads == 0 || channels % n_heads != 0)
    throw ConfigError("attention " + name + ": " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(n_heads) + " heads");
  w_query = Parameter(name + ".w_query", uniform_fan_in({channels, channels}, channels, rng), frozen);
  w_key = Parameter(name + ".w_key", uniform_fan_in({channels, channels}, channels, rng), frozen);
  w_value = Parameter(name + ".w_value", uniform_fan_in({channels, channels}, channels, rng), frozen);
  w_out = Parameter(name + ".w_out", uniform_fan_in({channels, channels}, channels, rng), frozen);
}

void MhaParams::collect(ParamList& out) {
  out.push_back(&w_query);
  out.push_back(&w_key);
  out.push_back(&w_value);
  out.push_back(&w_out);
}

void MhaParams::set_frozen(bool f) {
  w_query.frozen = f;
  w_key.frozen = f;
  w_value.frozen = f;
  w_out.frozen = f;
}

namespace {

// [B, N, C] -> [B*h, N, C/h]
Var split_heads(Var x, std::size_t heads) {
  const Shape s = x.shape();
  const std::size_t B = s[0], N = s[1], C = s[2], dh = C / heads;
  Var r = reshape(x, {B, N, heads, dh});
  r = permute(r, {0, 2, 1, 3});
  return reshape(r, {B * heads, N, dh});
}

// [B*h, N, dh] -> [B, N, h*dh]
Var merge_heads(Var x, std::size_t B, std::size_t heads) {
  const Shape s = x.shape();
  const std::size_t N = s[1], dh = s[2];
  Var r = reshape(x, {B, heads, N, dh});
  r = permute(r, {0, 2, 1, 3});
  return reshape(r, {B, N, heads * dh});
}

Var as_batched(Var x) {
  if (x.shape().size() == 3) return x;
  if (x.shape().size() == 2) return reshape(x, {1, x.shape()[0], x.shape()[1]});
  throw DimensionError("attention: expected [N, C] or [B, N, C], got " + shape_str(x.shape()));
}

}  // namespace

Var mhca(Tape& t, Var q_in, Var k_in, Var v_in, MhaParams& p) {
  const bool unbatched = q_in.shape().size() == 2;
  Var qb = as_batched(q_in), kb = as_batched(k_in), vb = as_batched(v_in);
  const std::size_t C = p.channels();
  if (qb.shape()[2] != C || kb.shape()[2] != C || vb.shape()[2] != C || qb.shape()[0] != kb.shape()[0] ||
      kb.shape() != vb.shape())
    throw DimensionError("attention: query " + shape_str(qb.shape()) + ", key " + shape_str(kb.shape()) +
                         ", value " + shape_str(vb.shape()) + " incompatible with width " + std::to_string(C));
  const std::size_t B = qb.shape()[0], h = p.heads, dh = C / h;

  Var q = split_heads(matmul(qb, t.param(p.w_query)), h);
  Var k = split_heads(matmul(kb, t.param(p.w_key)), h);
  Var v = split_heads(matmul(vb, t.param(p.w_value)), h);
  Var scores = scale(bmm(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh)));
  Var attn = softmax_lastdim(scores);
  Var ctx = merge_heads(bmm(attn, v), B, h);
  Var out = matmul(ctx, t.param(p.w_out));
  if (unbatched) out = reshape(out, {out.shape()[1], out.shape()[2]});
  return out;
}

Var mha(Tape& t, Var x, MhaParams& p) { return mhca(t, x, x, x, p); }

}  // namespace caeav
