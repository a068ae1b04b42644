#include "caeav/caste.hpp"

#include <algorithm>

#include "caeav/errors.hpp"

namespace caeav {

std::size_t CasteConfig::resolved_shared_dim() const {
  return shared_dim ? shared_dim : std::max<std::size_t>(1, std::min(c_visual, c_audio) / 2);
}

std::size_t CasteConfig::resolved_mlp_hidden() const { return mlp_hidden ? mlp_hidden : 2 * resolved_shared_dim(); }

void CasteConfig::validate() const {
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("caste: rho must lie in (0, 1]");
  if (conv_k % 2 == 0) throw ConfigError("caste: conv_k must be odd");
  if (c_visual == 0 || c_audio == 0) throw ConfigError("caste: channel widths must be positive");
  if (resolved_shared_dim() == 0) throw ConfigError("caste: shared dimension must be >= 1");
}

AgreementGateParams::AgreementGateParams(const std::string& name, const CasteConfig& cfg, Rng& rng) {
  const std::size_t D = cfg.resolved_shared_dim(), H = cfg.resolved_mlp_hidden();
  proj_visual = Linear(name + ".proj_visual", cfg.c_visual, D, rng);
  proj_audio = Linear(name + ".proj_audio", cfg.c_audio, D, rng);
  mlp_in = Linear(name + ".mlp_in", 4 * D, H, rng);
  mlp_out = Linear(name + ".mlp_out", H, 2, rng);
}

void AgreementGateParams::collect(ParamList& out) {
  proj_visual.collect(out);
  proj_audio.collect(out);
  mlp_in.collect(out);
  mlp_out.collect(out);
}

SpatialParams::SpatialParams(const std::string& name, std::size_t C, double gate_init, Rng& rng)
    : w_input(name + ".w_input", uniform_fan_in({C, 1}, C, rng)),
      w_key(name + ".w_key", uniform_fan_in({C, C}, C, rng)),
      w_value(name + ".w_value", uniform_fan_in({C, C}, C, rng)),
      w_out(name + ".w_out", uniform_fan_in({C, C}, C, rng)),
      gamma(scalar_param(name + ".gamma", gate_init)),
      norm(name + ".norm", C) {}

void SpatialParams::collect(ParamList& out) {
  out.insert(out.end(), {&w_input, &w_key, &w_value, &w_out, &gamma});
  norm.collect(out);
}

TemporalParams::TemporalParams(const std::string& name, std::size_t C, std::size_t k, double gate_init, Rng& rng)
    : depthwise(name + ".depthwise", uniform_fan_in({C, k}, k, rng)),
      pointwise(name + ".pointwise", uniform_fan_in({C, C}, C, rng)),
      gamma(scalar_param(name + ".gamma", gate_init)),
      norm(name + ".norm", C) {}

void TemporalParams::collect(ParamList& out) {
  out.insert(out.end(), {&depthwise, &pointwise, &gamma});
  norm.collect(out);
}

CasteBranchParams::CasteBranchParams(const std::string& name, std::size_t C, const CasteConfig& cfg, Rng& rng)
    : spatial(name + ".spatial", C, cfg.gate_init, rng),
      temporal(name + ".temporal", C, cfg.conv_k, cfg.gate_init, rng),
      inject_gamma(scalar_param(name + ".inject_gamma", cfg.gate_init)) {}

void CasteBranchParams::collect(ParamList& out) {
  spatial.collect(out);
  temporal.collect(out);
  out.push_back(&inject_gamma);
}

CasteLayerParams::CasteLayerParams(const std::string& name, const CasteConfig& cfg, Rng& rng)
    : gate(name + ".gate", cfg, rng),
      visual(name + ".visual", cfg.c_visual, cfg, rng),
      audio(name + ".audio", cfg.c_audio, cfg, rng) {}

void CasteLayerParams::collect(ParamList& out) {
  gate.collect(out);
  visual.collect(out);
  audio.collect(out);
}

void CasteLayerParams::set_gates(double value) {
  for (CasteBranchParams* b : {&visual, &audio}) {
    b->spatial.gamma.value.data[0] = value;
    b->temporal.gamma.value.data[0] = value;
    b->inject_gamma.value.data[0] = value;
  }
}

// ---------------------------------------------------------------------------

Prototypes compute_prototypes(Var v, Var a) {
  if (v.shape().size() != 3 || a.shape().size() != 3)
    throw DimensionError("prototypes: token streams must be [T, L, C], got " + shape_str(v.shape()) + " and " +
                         shape_str(a.shape()));
  return {mean_axis(v, 1), mean_axis(a, 1)};
}

static Var column(Var x, std::size_t j) {
  const std::size_t T = x.shape()[0];
  return reshape(slice(x, 1, j, 1), {T});
}

AgreementOutput agreement_gate(Tape& t, Var v_proto, Var a_proto, AgreementGateParams& p) {
  const std::size_t T = v_proto.shape()[0];
  if (a_proto.shape()[0] != T) throw DimensionError("agreement_gate: prototypes disagree on T");
  Var vt = p.proj_visual(t, v_proto);
  Var at = p.proj_audio(t, a_proto);
  Var g = cosine_lastdim(vt, at);
  Var fusion = concat({vt, at, sub(vt, at), hadamard(vt, at)}, 1);
  Var lambda = p.mlp_out(t, relu(p.mlp_in(t, fusion)));
  Var g_col = reshape(g, {T, 1});
  Var prior = concat({g_col, scale(g_col, -1.0)}, 1);
  Var w = softmax_lastdim(add(lambda, prior));
  return {g, column(w, 0), column(w, 1)};
}

Var spatial_enrich(Tape& t, Var x, SpatialParams& p) {
  const Shape s = x.shape();
  if (s.size() != 3) throw DimensionError("spatial_enrich: expected [T, L, C], got " + shape_str(s));
  const std::size_t T = s[0], C = s[2];
  Var input = sigmoid(matmul(x, t.param(p.w_input)));  // [T, L, 1]
  Var key = matmul(x, t.param(p.w_key));
  Var value = matmul(x, t.param(p.w_value));
  Var context = reshape(sum_axis(hadamard(key, input), 1), {T, 1, C});
  Var recal = hadamard(value, context);
  Var update = hadamard(matmul(recal, t.param(p.w_out)), t.param(p.gamma));
  return p.norm(t, add(x, update));
}

Var temporal_enrich(Tape& t, Var x, TemporalParams& p) {
  if (x.shape().size() != 3) throw DimensionError("temporal_enrich: expected [T, L, C], got " + shape_str(x.shape()));
  Var z = pointwise_conv1d(depthwise_conv1d(x, t.param(p.depthwise)), t.param(p.pointwise));
  return p.norm(t, add(x, hadamard(z, t.param(p.gamma))));
}

InjectionOutput selective_inject(Tape&, Var x, Var x_sp, Var x_tm, const AgreementOutput& gates, Var gamma,
                                 double rho) {
  const Shape s = x.shape();
  if (x_sp.shape() != s || x_tm.shape() != s)
    throw DimensionError("selective_inject: branch outputs must match input " + shape_str(s));
  const std::size_t T = s[0];
  Var w_sp = reshape(gates.w_sp, {T, 1, 1});
  Var w_tm = reshape(gates.w_tm, {T, 1, 1});
  Var mix = add(hadamard(x_sp, w_sp), hadamard(x_tm, w_tm));
  Var saliency = sum_axis(hadamard(mix, mix), 2);  // [T, L]
  TopK sel = topk_mask(saliency, rho);
  Tensor mask3 = sel.mask;
  mask3.shape = {s[0], s[1], 1};
  Var injected = add(x, hadamard(mask_mul(mix, mask3), gamma));
  return {injected, sel.soft, std::move(sel.mask)};
}

CasteOutput caste_forward(Tape& t, Var v, Var a, CasteLayerParams& p, const CasteConfig& cfg) {
  if (v.shape().size() != 3 || a.shape().size() != 3 || v.shape()[0] != a.shape()[0])
    throw DimensionError("caste_forward: streams must share T, got " + shape_str(v.shape()) + " and " +
                         shape_str(a.shape()));
  Prototypes protos = compute_prototypes(v, a);
  AgreementOutput gates = agreement_gate(t, protos.visual, protos.audio, p.gate);

  auto branch = [&](Var x, CasteBranchParams& b) {
    Var x_sp = spatial_enrich(t, x, b.spatial);
    Var x_tm = temporal_enrich(t, x, b.temporal);
    return selective_inject(t, x, x_sp, x_tm, gates, t.param(b.inject_gamma), cfg.rho);
  };
  InjectionOutput vo = branch(v, p.visual);
  InjectionOutput ao = branch(a, p.audio);
  return {vo.x, ao.x, gates, vo.soft, ao.soft, std::move(vo.mask), std::move(ao.mask)};
}

}  // namespace caeav
