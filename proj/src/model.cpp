#include "caeav/model.hpp"

#include <algorithm>

#include "caeav/errors.hpp"

namespace caeav {

std::string to_string(InsertionLocation l) {
  switch (l) {
    case InsertionLocation::BeforeMoe: return "before_moe";
    case InsertionLocation::BetweenMoe: return "between_moe";
    case InsertionLocation::AfterMoe: return "after_moe";
  }
  return "?";
}

InsertionLocation location_from_string(const std::string& s) {
  if (s == "before_moe" || s == "1") return InsertionLocation::BeforeMoe;
  if (s == "between_moe" || s == "2") return InsertionLocation::BetweenMoe;
  if (s == "after_moe" || s == "3") return InsertionLocation::AfterMoe;
  throw ConfigError("unknown insertion location '" + s + "'");
}

std::string to_string(TaskPreset p) {
  switch (p) {
    case TaskPreset::Avqa: return "avqa";
    case TaskPreset::AvsS4: return "avs-s4";
    case TaskPreset::AvsMs3: return "avs-ms3";
    case TaskPreset::Ave: return "ave";
    case TaskPreset::Avvp: return "avvp";
    case TaskPreset::Synthetic: return "synthetic";
  }
  return "?";
}

TaskPreset preset_from_string(const std::string& s) {
  for (TaskPreset p : {TaskPreset::Avqa, TaskPreset::AvsS4, TaskPreset::AvsMs3, TaskPreset::Ave, TaskPreset::Avvp,
                       TaskPreset::Synthetic}) {
    std::string name = to_string(p);
    std::string alt = name;
    std::replace(alt.begin(), alt.end(), '-', '_');
    if (s == name || s == alt) return p;
  }
  throw ConfigError("unknown preset '" + s + "'");
}

ExpertCounts preset_expert_counts(TaskPreset p) {
  if (p == TaskPreset::Avqa) return {2, 1};
  return {1, 1};
}

CasteConfig ModelConfig::caste_config() const {
  CasteConfig c;
  c.c_visual = c_visual;
  c.c_audio = c_audio;
  c.shared_dim = caste_shared_dim;
  c.mlp_hidden = caste_mlp_hidden;
  c.rho = rho;
  c.conv_k = conv_k;
  c.gate_init = gate_init;
  return c;
}

CaseConfig ModelConfig::case_config() const {
  CaseConfig c;
  c.c_visual = c_visual;
  c.c_audio = c_audio;
  c.c_text = c_text;
  c.heads = heads;
  c.rho = rho_case;
  c.conv_k = conv_k;
  c.gate_init = case_gate_init;
  return c;
}

bool ModelConfig::caste_in_layer(std::size_t layer) const {
  if (caste_layer_mask.empty()) return true;
  return layer < caste_layer_mask.size() && caste_layer_mask[layer] != 0;
}

void ModelConfig::apply_preset(TaskPreset p) {
  const ExpertCounts e = preset_expert_counts(p);
  n_unimodal_experts = e.unimodal;
  n_crossmodal_experts = e.crossmodal;
}

void ModelConfig::validate() const {
  if (layers == 0) throw ConfigError("model.layers must be >= 1");
  if (heads == 0) throw ConfigError("model.heads must be >= 1");
  if (c_visual == 0 || c_audio == 0 || c_text == 0) throw ConfigError("channel widths must be positive");
  if (c_visual % heads || c_audio % heads || c_text % heads)
    throw ConfigError("channel widths must be divisible by model.heads");
  if (n_classes < 2) throw ConfigError("model.n_classes must be >= 2");
  if (n_unimodal_experts + n_crossmodal_experts == 0) throw ConfigError("MoE needs at least one expert");
  if (ffn_mult == 0 || embed_dim == 0) throw ConfigError("ffn_mult and embed_dim must be positive");
  if (!caste_layer_mask.empty() && caste_layer_mask.size() != layers)
    throw ConfigError("caste_layer_mask needs one entry per layer");
  if (!(rho_case > 0.0 && rho_case <= 1.0)) throw ConfigError("rho_case must lie in (0, 1]");
  caste_config().validate();
  case_config().validate();
}

// --- frozen backbone block ---------------------------------------------------

FrozenBlock::FrozenBlock(const std::string& name, std::size_t channels, std::size_t heads, std::size_t ffn_mult,
                         Rng& rng)
    : attn(name + ".attn", channels, heads, rng, true),
      ffn_norm(name + ".ffn_norm", channels, true),
      ffn_in(name + ".ffn_in", channels, ffn_mult * channels, rng, true, true),
      ffn_out(name + ".ffn_out", ffn_mult * channels, channels, rng, true, true) {}

void FrozenBlock::collect(ParamList& out) {
  attn.collect(out);
  ffn_norm.collect(out);
  ffn_in.collect(out);
  ffn_out.collect(out);
}

Var FrozenBlock::attention(Tape& t, Var x) { return mha(t, x, attn); }

Var FrozenBlock::feed_forward(Tape& t, Var x) { return ffn_out(t, gelu(ffn_in(t, ffn_norm(t, x)))); }

// --- MoE adapter -------------------------------------------------------------

static void zero_init(Linear& l) { std::fill(l.weight.value.data.begin(), l.weight.value.data.end(), 0.0); }

MoEAdapter::MoEAdapter(const std::string& name, std::size_t c_self, std::size_t c_partner, std::size_t n_uni,
                       std::size_t n_cross, std::size_t bottleneck, Rng& rng)
    : router(name + ".router", c_self, n_uni + n_cross, rng) {
  for (std::size_t e = 0; e < n_uni; ++e) {
    unimodal.emplace_back(name + ".uni" + std::to_string(e), c_self, bottleneck, c_self, rng);
    zero_init(unimodal.back().up);
  }
  for (std::size_t e = 0; e < n_cross; ++e) {
    crossmodal.emplace_back(name + ".cross" + std::to_string(e), c_partner, bottleneck, c_self, rng);
    zero_init(crossmodal.back().up);
  }
}

void MoEAdapter::collect(ParamList& out) {
  router.collect(out);
  for (auto& e : unimodal) e.collect(out);
  for (auto& e : crossmodal) e.collect(out);
}

MoEOutput moe_forward(Tape& t, Var x_self, Var x_partner, MoEAdapter& adapter) {
  const Shape s = x_self.shape();
  if (s.size() != 3 || x_partner.shape().size() != 3 || x_partner.shape()[0] != s[0])
    throw DimensionError("moe_forward: streams must be [T, L, C] with shared T, got " + shape_str(s) + " and " +
                         shape_str(x_partner.shape()));
  const std::size_t E = adapter.experts();
  Var weights = softmax_lastdim(adapter.router(t, x_self));  // [T, L, E]

  std::vector<Var> outs;
  outs.reserve(E);
  for (auto& e : adapter.unimodal) outs.push_back(e(t, x_self));
  if (!adapter.crossmodal.empty()) {
    Var partner_mean = mean_axis(x_partner, 1);  // [T, C_p]
    const Shape frame{s[0], 1, partner_mean.shape()[1]};
    Var pm = reshape(partner_mean, frame);
    for (auto& e : adapter.crossmodal) outs.push_back(broadcast_to(e(t, pm), s));
  }

  Var y;
  for (std::size_t e = 0; e < E; ++e) {
    Var w = slice(weights, 2, e, 1);  // [T, L, 1] broadcasts over channels
    Var term = hadamard(outs[e], w);
    y = y.valid() ? add(y, term) : term;
  }
  return {y, weights};
}

// --- one backbone layer ------------------------------------------------------

LayerParams::LayerParams(const std::string& name, const ModelConfig& cfg, Rng& rng)
    : block_visual(name + ".block_visual", cfg.c_visual, cfg.heads, cfg.ffn_mult, rng),
      block_audio(name + ".block_audio", cfg.c_audio, cfg.heads, cfg.ffn_mult, rng) {
  const std::size_t bv = cfg.expert_bottleneck ? cfg.expert_bottleneck : std::max<std::size_t>(1, cfg.c_visual / 4);
  const std::size_t ba = cfg.expert_bottleneck ? cfg.expert_bottleneck : std::max<std::size_t>(1, cfg.c_audio / 4);
  const std::size_t nu = cfg.n_unimodal_experts, nc = cfg.n_crossmodal_experts;
  moe_attn_visual = MoEAdapter(name + ".moe_attn_visual", cfg.c_visual, cfg.c_audio, nu, nc, bv, rng);
  moe_attn_audio = MoEAdapter(name + ".moe_attn_audio", cfg.c_audio, cfg.c_visual, nu, nc, ba, rng);
  moe_ffn_visual = MoEAdapter(name + ".moe_ffn_visual", cfg.c_visual, cfg.c_audio, nu, nc, bv, rng);
  moe_ffn_audio = MoEAdapter(name + ".moe_ffn_audio", cfg.c_audio, cfg.c_visual, nu, nc, ba, rng);
  caste = CasteLayerParams(name + ".caste", cfg.caste_config(), rng);
}

void LayerParams::collect(ParamList& out) {
  block_visual.collect(out);
  block_audio.collect(out);
  moe_attn_visual.collect(out);
  moe_attn_audio.collect(out);
  moe_ffn_visual.collect(out);
  moe_ffn_audio.collect(out);
  caste.collect(out);
}

LayerOutput layer_forward(Tape& t, Var v, Var a, LayerParams& p, const ModelConfig& cfg, bool use_caste) {
  if (v.shape().size() != 3 || a.shape().size() != 3 || v.shape()[0] != a.shape()[0])
    throw DimensionError("layer_forward: streams must share T, got " + shape_str(v.shape()) + " and " +
                         shape_str(a.shape()));
  LayerOutput out;
  const CasteConfig cc = cfg.caste_config();
  auto enrich = [&](Var x, Var y) -> std::pair<Var, Var> {
    if (!use_caste) return {x, y};
    out.caste = caste_forward(t, x, y, p.caste, cc);
    return {out.caste->visual, out.caste->audio};
  };

  // attention sub-block with its adapter, then the feed-forward sub-block with its adapter
  auto attn_step = [&](Var xv, Var xa, Var mv_in, Var ma_in) {
    Var mv = moe_forward(t, mv_in, ma_in, p.moe_attn_visual).x;
    Var ma = moe_forward(t, ma_in, mv_in, p.moe_attn_audio).x;
    return std::pair<Var, Var>{add(add(xv, p.block_visual.attention(t, xv)), mv),
                               add(add(xa, p.block_audio.attention(t, xa)), ma)};
  };
  auto ffn_step = [&](Var hv, Var ha, Var mv_in, Var ma_in) {
    Var mv = moe_forward(t, mv_in, ma_in, p.moe_ffn_visual).x;
    Var ma = moe_forward(t, ma_in, mv_in, p.moe_ffn_audio).x;
    return std::pair<Var, Var>{add(add(hv, p.block_visual.feed_forward(t, hv)), mv),
                               add(add(ha, p.block_audio.feed_forward(t, ha)), ma)};
  };

  switch (cfg.insertion_location) {
    case InsertionLocation::BeforeMoe: {
      auto [cv, ca] = enrich(v, a);
      auto [hv, ha] = attn_step(v, a, cv, ca);
      std::tie(out.visual, out.audio) = ffn_step(hv, ha, hv, ha);
      break;
    }
    case InsertionLocation::BetweenMoe: {
      auto [hv, ha] = attn_step(v, a, v, a);
      auto [cv, ca] = enrich(hv, ha);
      std::tie(out.visual, out.audio) = ffn_step(hv, ha, cv, ca);
      break;
    }
    case InsertionLocation::AfterMoe: {
      auto [hv, ha] = attn_step(v, a, v, a);
      auto [ov, oa] = ffn_step(hv, ha, hv, ha);
      std::tie(out.visual, out.audio) = enrich(ov, oa);
      break;
    }
  }
  return out;
}

// --- model -------------------------------------------------------------------

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  for (std::size_t l = 0; l < cfg_.layers; ++l) layers_.emplace_back("layer" + std::to_string(l), cfg_, rng);
  const CaseConfig kc = cfg_.case_config();
  captions_ = CaptionParams("caption", kc, rng);
  case_ = CaseParams("case", kc, rng);
  heads_ = ProjectionHeads("proj", cfg_.c_visual, cfg_.c_audio, cfg_.embed_dim, rng);
  classifier_ = Linear("head", cfg_.c_visual + cfg_.c_audio, cfg_.n_classes, rng);
}

ParamList Model::parameters() {
  ParamList out;
  for (auto& l : layers_) l.collect(out);
  captions_.collect(out);
  case_.collect(out);
  heads_.collect(out);
  classifier_.collect(out);
  return out;
}

ParamList Model::trainable() {
  ParamList out;
  for (Parameter* p : parameters())
    if (!p->frozen) out.push_back(p);
  return out;
}

ParamList Model::frozen() {
  ParamList out;
  for (Parameter* p : parameters())
    if (p->frozen) out.push_back(p);
  return out;
}

ModelOutput Model::forward(Tape& t, const Tensor& visual, const Tensor& audio, const CaptionBank& captions) {
  if (visual.rank() != 3 || audio.rank() != 3 || visual.shape[0] != audio.shape[0])
    throw DimensionError("model: streams must be [T, L, C] with shared T, got " + shape_str(visual.shape) + " and " +
                         shape_str(audio.shape));
  if (visual.shape[2] != cfg_.c_visual || audio.shape[2] != cfg_.c_audio)
    throw DimensionError("model: channel widths " + shape_str(visual.shape) + " / " + shape_str(audio.shape) +
                         " do not match the configured C_v=" + std::to_string(cfg_.c_visual) +
                         ", C_a=" + std::to_string(cfg_.c_audio));
  const std::size_t T = visual.shape[0];
  ModelOutput out;
  Var v = t.constant(visual), a = t.constant(audio);

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const bool use = cfg_.enable_caste && cfg_.caste_in_layer(l);
    LayerOutput lo = layer_forward(t, v, a, layers_[l], cfg_, use);
    v = lo.visual;
    a = lo.audio;
    LayerDiagnostics d;
    if (lo.caste) {
      d.has_caste = true;
      d.g = lo.caste->gates.g.value();
      d.w_sp = lo.caste->gates.w_sp.value();
      d.w_tm = lo.caste->gates.w_tm.value();
      d.mask_visual = lo.caste->mask_visual;
      d.mask_audio = lo.caste->mask_audio;
      out.soft_visual = lo.caste->soft_visual;
      out.soft_audio = lo.caste->soft_audio;
    }
    out.layers.push_back(std::move(d));
  }

  if (cfg_.enable_case || cfg_.enable_aux_losses) {
    if (captions.visual.rank() != 2 || captions.audio.rank() != 2)
      throw InputError("model: caption sequences must be [L_c, C_t] matrices");
    if (captions.visual.shape[1] != cfg_.c_text || captions.audio.shape[1] != cfg_.c_text)
      throw DimensionError("model: caption width must be C_t=" + std::to_string(cfg_.c_text));
    out.captions = caption_process(t, t.constant(captions.visual), t.constant(captions.audio), captions_, T);
  }
  if (cfg_.enable_case) {
    CaseOutput co = case_forward(t, v, a, *out.captions, case_, cfg_.case_config());
    v = co.visual;
    a = co.audio;
    out.soft_visual = co.soft_visual;
    out.soft_audio = co.soft_audio;
    out.frame_gate_visual = co.gate_visual.value();
    out.frame_gate_audio = co.gate_audio.value();
    out.case_mask_visual = co.mask_visual;
    out.case_mask_audio = co.mask_audio;
  }

  out.visual = v;
  out.audio = a;
  Var feat = concat({mean_axis(v, 1), mean_axis(a, 1)}, 1);
  out.logits = classifier_(t, feat);
  return out;
}

ObjectiveTerms model_objective(Tape& t, Model& m, std::span<const BatchItem> batch, const LossWeights& w, int epoch) {
  if (batch.empty()) throw UsageError("model_objective: empty batch");
  const ModelConfig& cfg = m.config();
  ObjectiveTerms res;
  std::vector<Var> logits, zv, za, zvc, zac, sv, sa;
  std::vector<int> labels;
  std::vector<std::int64_t> ids;
  for (const BatchItem& item : batch) {
    const Episode& ep = *item.episode;
    const CaptionBank& caps = item.captions ? *item.captions : ep.captions;
    ModelOutput o = m.forward(t, ep.visual, ep.audio, caps);
    logits.push_back(o.logits);
    labels.insert(labels.end(), ep.event_class.begin(), ep.event_class.end());
    if (cfg.enable_aux_losses) {
      ProjectionHeads& h = m.heads();
      zv.push_back(h.visual(t, mean_axis(o.visual, 1)));
      za.push_back(h.audio(t, mean_axis(o.audio, 1)));
      zvc.push_back(h.visual_caption(t, mean_axis(o.captions->visual, 1)));
      zac.push_back(h.audio_caption(t, mean_axis(o.captions->audio, 1)));
      ids.insert(ids.end(), ep.frames(), ep.video_id);
      if (o.soft_visual.valid()) {
        sv.push_back(o.soft_visual);
        sa.push_back(o.soft_audio);
      }
    }
    res.outputs.push_back(std::move(o));
  }
  auto cat = [](const std::vector<Var>& xs) { return xs.size() == 1 ? xs[0] : concat(xs, 0); };
  res.terms.task = cross_entropy(cat(logits), labels);
  if (cfg.enable_aux_losses) {
    Var zv_all = cat(zv), za_all = cat(za);
    res.terms.cap_visual = loss_infonce_cap(zv_all, cat(zvc), ids, w.tau);
    res.terms.cap_audio = loss_infonce_cap(za_all, cat(zac), ids, w.tau);
    res.terms.va = loss_va(zv_all, za_all);
    if (!sv.empty()) res.terms.entropy = loss_entropy(cat(sv), cat(sa), w.entropy_sign);
  }
  res.total = loss_total(res.terms, w, epoch);
  return res;
}

}  // namespace caeav
