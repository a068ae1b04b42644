#include "caeav/case.hpp"

#include "caeav/errors.hpp"

namespace caeav {

void CaseConfig::validate() const {
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("case: rho must lie in (0, 1]");
  if (conv_k % 2 == 0) throw ConfigError("case: conv_k must be odd");
  if (heads == 0 || c_visual % heads || c_audio % heads || c_text % heads)
    throw ConfigError("case: channel widths must be divisible by the head count");
}

Bottleneck::Bottleneck(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
    : down(name + ".down", in, hidden, rng), up(name + ".up", hidden, out, rng) {}

Var Bottleneck::operator()(Tape& t, Var x) { return up(t, gelu(down(t, x))); }

void Bottleneck::collect(ParamList& out) {
  down.collect(out);
  up.collect(out);
}

CaptionParams::CaptionParams(const std::string& name, const CaseConfig& cfg, Rng& rng)
    : shared_attn(name + ".shared_attn", cfg.c_text, cfg.heads, rng),
      norm_visual(name + ".norm_visual", cfg.c_text),
      norm_audio(name + ".norm_audio", cfg.c_text),
      to_visual(name + ".to_visual", cfg.c_text, cfg.resolved_bottleneck(), cfg.c_visual, rng),
      to_audio(name + ".to_audio", cfg.c_text, cfg.resolved_bottleneck(), cfg.c_audio, rng) {}

void CaptionParams::collect(ParamList& out) {
  shared_attn.collect(out);
  norm_visual.collect(out);
  norm_audio.collect(out);
  to_visual.collect(out);
  to_audio.collect(out);
}

TemporalConvParams::TemporalConvParams(const std::string& name, std::size_t C, std::size_t k, Rng& rng)
    : depthwise(name + ".depthwise", uniform_fan_in({C, k}, k, rng)),
      pointwise(name + ".pointwise", uniform_fan_in({C, C}, C, rng)) {}

Var TemporalConvParams::operator()(Tape& t, Var x) {
  return pointwise_conv1d(depthwise_conv1d(x, t.param(depthwise)), t.param(pointwise));
}

void TemporalConvParams::collect(ParamList& out) { out.insert(out.end(), {&depthwise, &pointwise}); }

CaseParams::CaseParams(const std::string& name, const CaseConfig& cfg, Rng& rng)
    : self_visual(name + ".self_visual", cfg.c_visual, cfg.heads, rng),
      self_audio(name + ".self_audio", cfg.c_audio, cfg.heads, rng),
      caption_self_visual(name + ".caption_self_visual", cfg.c_visual, cfg.heads, rng),
      caption_self_audio(name + ".caption_self_audio", cfg.c_audio, cfg.heads, rng),
      caption_cross_visual(name + ".caption_cross_visual", cfg.c_visual, cfg.heads, rng),
      caption_cross_audio(name + ".caption_cross_audio", cfg.c_audio, cfg.heads, rng),
      cross_visual(name + ".cross_visual", cfg.c_visual, cfg.heads, rng),
      cross_audio(name + ".cross_audio", cfg.c_audio, cfg.heads, rng),
      visual_from_audio(name + ".visual_from_audio", cfg.c_audio, cfg.c_visual, rng, false),
      audio_from_visual(name + ".audio_from_visual", cfg.c_visual, cfg.c_audio, rng, false),
      temporal_visual(name + ".temporal_visual", cfg.c_visual, cfg.conv_k, rng),
      temporal_audio(name + ".temporal_audio", cfg.c_audio, cfg.conv_k, rng),
      norm_visual(name + ".norm_visual", cfg.c_visual),
      norm_audio(name + ".norm_audio", cfg.c_audio),
      gamma_visual(scalar_param(name + ".gamma_visual", cfg.gate_init)),
      gamma_audio(scalar_param(name + ".gamma_audio", cfg.gate_init)) {}

void CaseParams::collect(ParamList& out) {
  for (MhaParams* m : {&self_visual, &self_audio, &caption_self_visual, &caption_self_audio, &caption_cross_visual,
                       &caption_cross_audio, &cross_visual, &cross_audio})
    m->collect(out);
  visual_from_audio.collect(out);
  audio_from_visual.collect(out);
  temporal_visual.collect(out);
  temporal_audio.collect(out);
  norm_visual.collect(out);
  norm_audio.collect(out);
  out.insert(out.end(), {&gamma_visual, &gamma_audio});
}

void CaseParams::set_gates(double value) {
  gamma_visual.value.data[0] = value;
  gamma_audio.value.data[0] = value;
}

// ---------------------------------------------------------------------------

CaptionFeatures caption_process(Tape& t, Var cap_v, Var cap_a, CaptionParams& p, std::size_t T) {
  if (T == 0) throw DimensionError("caption_process: T must be positive");
  auto branch = [&](Var s, LayerNormParams& norm, Bottleneck& proj, const char* which) {
    if (s.shape().size() != 2 || s.shape()[0] == 0)
      throw InputError(std::string("caption_process: ") + which + " caption must be a non-empty [L_c, C_t] matrix");
    Var refined = norm(t, add(s, mha(t, s, p.shared_attn)));
    return repeat_leading(proj(t, refined), T);
  };
  return {branch(cap_v, p.norm_visual, p.to_visual, "visual"), branch(cap_a, p.norm_audio, p.to_audio, "audio")};
}

RefinedStreams cross_refine(Tape& t, Var v, Var a, const CaptionFeatures& caps, CaseParams& p) {
  const std::size_t T = v.shape()[0];
  if (a.shape()[0] != T || caps.visual.shape()[0] != T || caps.audio.shape()[0] != T)
    throw DimensionError("cross_refine: streams and captions must share T");

  auto anchor = [&](Var x, Var cap, MhaParams& self, MhaParams& cap_self, MhaParams& cap_cross) {
    Var xs = add(x, mha(t, x, self));
    Var cs = add(cap, mha(t, cap, cap_self));
    return add(xs, mhca(t, xs, cs, cs, cap_cross));
  };
  Var v_tilde = anchor(v, caps.visual, p.self_visual, p.caption_self_visual, p.caption_cross_visual);
  Var a_tilde = anchor(a, caps.audio, p.self_audio, p.caption_self_audio, p.caption_cross_audio);

  Var a_to_v = p.visual_from_audio(t, a_tilde);
  Var v_to_a = p.audio_from_visual(t, v_tilde);
  Var v_hat = mhca(t, v_tilde, a_to_v, a_to_v, p.cross_visual);
  Var a_hat = mhca(t, a_tilde, v_to_a, v_to_a, p.cross_audio);
  return {p.temporal_visual(t, v_hat), p.temporal_audio(t, a_hat)};
}

Var frame_gate(Var refined, Var caption) {
  if (refined.shape()[0] != caption.shape()[0]) throw DimensionError("frame_gate: T mismatch");
  return sigmoid(cosine_lastdim(mean_axis(refined, 1), mean_axis(caption, 1)));
}

CaseInjection case_inject(Tape& t, Var x, Var refined, Var gate, LayerNormParams& norm, Var gamma, double rho) {
  const Shape s = x.shape();
  if (refined.shape() != s) throw DimensionError("case_inject: refined stream must match " + shape_str(s));
  Var saliency = sum_axis(hadamard(refined, refined), 2);
  TopK sel = topk_mask(saliency, rho);
  Tensor mask3 = sel.mask;
  mask3.shape = {s[0], s[1], 1};
  Var update = hadamard(norm(t, refined), reshape(gate, {s[0], 1, 1}));
  Var injected = add(x, hadamard(mask_mul(update, mask3), gamma));
  return {injected, sel.soft, std::move(sel.mask)};
}

CaseOutput case_forward(Tape& t, Var v, Var a, const CaptionFeatures& caps, CaseParams& p, const CaseConfig& cfg) {
  RefinedStreams ref = cross_refine(t, v, a, caps, p);
  Var gv = frame_gate(ref.visual, caps.visual);
  Var ga = frame_gate(ref.audio, caps.audio);
  CaseInjection vi = case_inject(t, v, ref.visual, gv, p.norm_visual, t.param(p.gamma_visual), cfg.rho);
  CaseInjection ai = case_inject(t, a, ref.audio, ga, p.norm_audio, t.param(p.gamma_audio), cfg.rho);
  return {vi.x, ai.x, vi.soft, ai.soft, std::move(vi.mask), std::move(ai.mask), gv, ga};
}

}  // namespace caeav
