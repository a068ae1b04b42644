// Finite-difference battery over every primitive, module and the tiny full model.

#include <cstdio>
#include <deque>
#include <functional>
#include <memory>

#include "caeav/errors.hpp"
#include "caeav/gradcheck.hpp"
#include "caeav/harness.hpp"

namespace caeav {

namespace {

constexpr double kPrimitiveThreshold = 1e-5;
constexpr double kModuleThreshold = 1e-4;

using OutFn = std::function<Var(Tape&)>;

struct Battery {
  const GradCheckOptions& opts;
  explicit Battery(const GradCheckOptions& o) : opts(o) {}
  std::vector<GradCheckEntry> entries;
  Rng rng{0xC0FFEE};

  bool selected(const std::string& name) const {
    return opts.only.empty() || name.find(opts.only) != std::string::npos;
  }

  // Output contracted with fixed random weights, so every output coordinate
  // carries a distinct cotangent. Module checks average instead of sum and use
  // the largest allowed step: with |f| ~ 0.1 the difference quotient's rounding
  // noise (a few ulps of f over 2h) stays well under the 1e-8 denominator floor.
  void probe(const std::string& name, double threshold, const OutFn& out, const ParamList& params) {
    if (!selected(name)) return;
    Shape shape;
    {
      Tape t(Tape::Mode::NoGrad);
      shape = out(t).shape();
    }
    Tensor weights(shape);
    const bool module = threshold > kPrimitiveThreshold;
    const double w_scale = module ? 1.0 / static_cast<double>(weights.size()) : 1.0;
    for (double& w : weights.data) w = w_scale * rng.uniform(-1.0, 1.0);
    ScalarFn f = [out, weights](Tape& t) { return sum_all(hadamard(out(t), t.constant(weights))); };
    run(name, threshold, f, params);
  }

  void run(const std::string& name, double threshold, ScalarFn f, const ParamList& params) {
    if (!selected(name)) return;
    const double h = threshold > kPrimitiveThreshold ? 1e-4 : 1e-5;
    if (opts.corrupt == name) {
      // identity in value, adjoint scaled by 1.01
      f = [inner = std::move(f)](Tape& t) {
        Var y = inner(t);
        const std::uint32_t yid = y.id();
        return t.push(y.value(), {y}, [yid](Tape& tp, std::uint32_t self) {
          if (!tp.requires_grad(yid)) return;
          const auto& gs = tp.grad(self);
          auto& gy = tp.grad(yid);
          for (std::size_t i = 0; i < gy.size(); ++i) gy[i] += 1.01 * gs[i];
        });
      };
    }
    const GradCheckResult r = grad_check(f, params, h);
    GradCheckEntry e;
    e.name = name;
    e.threshold = threshold;
    e.max_rel_error = r.max_rel_error;
    e.worst_param = r.worst_param;
    e.worst_index = r.worst_index;
    e.analytic = r.analytic;
    e.numeric = r.numeric;
    e.coords = r.coords_checked;
    entries.push_back(e);
  }

  // Storage with stable addresses for the parameters of one check.
  std::deque<Parameter> store;
  Parameter& param(const std::string& name, const Shape& shape, double lo = -1.0, double hi = 1.0) {
    Tensor v(shape);
    for (double& x : v.data) x = rng.uniform(lo, hi);
    store.emplace_back(name, std::move(v), false);
    return store.back();
  }
  // Values bounded away from zero, for kinks (relu) and divisions.
  Parameter& param_off_zero(const std::string& name, const Shape& shape) {
    Parameter& p = param(name, shape, 0.1, 1.0);
    for (double& x : p.value.data)
      if (rng.uniform() < 0.5) x = -x;
    return p;
  }
};

void perturb(const ParamList& params, Rng& rng, double amp) {
  for (Parameter* p : params)
    if (!p->frozen)
      for (double& x : p->value.data) x += rng.uniform(-amp, amp);
}

void primitives(Battery& b) {
  const double P = kPrimitiveThreshold;
  {
    Parameter &a = b.param("a", {3, 4}), &w = b.param("b", {4, 2});
    b.probe("matmul", P, [&](Tape& t) { return matmul(t.param(a), t.param(w)); }, {&a, &w});
  }
  {
    Parameter &a = b.param("a", {2, 3, 4}), &w = b.param("b", {4, 5});
    b.probe("matmul_batched", P, [&](Tape& t) { return matmul(t.param(a), t.param(w)); }, {&a, &w});
  }
  {
    Parameter &a = b.param("a", {2, 3, 4}), &w = b.param("b", {2, 4, 3});
    b.probe("bmm", P, [&](Tape& t) { return bmm(t.param(a), t.param(w)); }, {&a, &w});
  }
  {
    Parameter &a = b.param("a", {2, 3, 4}), &c = b.param("b", {3, 1});
    b.probe("add_broadcast", P, [&](Tape& t) { return add(t.param(a), t.param(c)); }, {&a, &c});
    b.probe("sub_broadcast", P, [&](Tape& t) { return sub(t.param(a), t.param(c)); }, {&a, &c});
    b.probe("hadamard_broadcast", P, [&](Tape& t) { return hadamard(t.param(a), t.param(c)); }, {&a, &c});
  }
  {
    Parameter& a = b.param("a", {3, 4});
    b.probe("scale", P, [&](Tape& t) { return scale(t.param(a), -1.7); }, {&a});
    Tensor mask({3, 4});
    for (std::size_t i = 0; i < mask.size(); ++i) mask.data[i] = i % 3 == 0 ? 1.0 : 0.0;
    b.probe("mask_mul", P, [&, mask](Tape& t) { return mask_mul(t.param(a), mask); }, {&a});
  }
  {
    Parameter& a = b.param_off_zero("a", {3, 5});
    b.probe("sigmoid", P, [&](Tape& t) { return sigmoid(t.param(a)); }, {&a});
    b.probe("relu", P, [&](Tape& t) { return relu(t.param(a)); }, {&a});
    b.probe("gelu", P, [&](Tape& t) { return gelu(t.param(a)); }, {&a});
  }
  {
    Parameter& a = b.param("a", {2, 3, 5}, -2.0, 2.0);
    b.probe("softmax_lastdim", P, [&](Tape& t) { return softmax_lastdim(t.param(a)); }, {&a});
    b.probe("log_softmax_lastdim", P, [&](Tape& t) { return log_softmax_lastdim(t.param(a)); }, {&a});
    b.probe("mean_axis", P, [&](Tape& t) { return mean_axis(t.param(a), 1); }, {&a});
    b.probe("sum_axis", P, [&](Tape& t) { return sum_axis(t.param(a), 2); }, {&a});
    b.probe("mean_all", P, [&](Tape& t) { return mean_all(t.param(a)); }, {&a});
    b.probe("reshape", P, [&](Tape& t) { return reshape(t.param(a), {6, 5}); }, {&a});
    b.probe("permute", P, [&](Tape& t) { return permute(t.param(a), {2, 0, 1}); }, {&a});
    b.probe("slice", P, [&](Tape& t) { return slice(t.param(a), 2, 1, 3); }, {&a});
    b.probe("repeat_leading", P, [&](Tape& t) { return repeat_leading(t.param(a), 3); }, {&a});
  }
  {
    Parameter &x = b.param("x", {2, 3, 4}), &g = b.param("gain", {4}, 0.5, 1.5), &bi = b.param("bias", {4});
    b.probe("layer_norm", P, [&](Tape& t) { return layer_norm(t.param(x), t.param(g), t.param(bi)); }, {&x, &g, &bi});
  }
  {
    Parameter &x = b.param("x", {4, 6}), &y = b.param("y", {4, 6});
    b.probe("cosine_lastdim", P, [&](Tape& t) { return cosine_lastdim(t.param(x), t.param(y)); }, {&x, &y});
    b.probe("l2_normalize_lastdim", P, [&](Tape& t) { return l2_normalize_lastdim(t.param(x)); }, {&x});
    b.probe("concat", P, [&](Tape& t) { return concat({t.param(x), t.param(y)}, 1); }, {&x, &y});
  }
  {
    Parameter& x = b.param("x", {3, 4}, -1.0, 1.0);
    b.probe("entropy_lastdim", P, [&](Tape& t) { return entropy_lastdim(softmax_lastdim(t.param(x))); }, {&x});
    Tensor mask({3, 4}, 1.0);
    mask.data[1] = mask.data[6] = 0.0;
    b.probe("logsumexp_masked_lastdim", P, [&, mask](Tape& t) { return logsumexp_masked_lastdim(t.param(x), mask); },
            {&x});
    b.run("cross_entropy", P, [&](Tape& t) { return cross_entropy(t.param(x), {0, 3, 2}); }, {&x});
  }
  {
    Parameter &x = b.param("x", {5, 3}), &k = b.param("kernel", {3, 3});
    b.probe("depthwise_conv1d", P, [&](Tape& t) { return depthwise_conv1d(t.param(x), t.param(k)); }, {&x, &k});
    Parameter &x3 = b.param("x", {5, 2, 3}), &k5 = b.param("kernel", {3, 5});
    b.probe("depthwise_conv1d_k5_tokens", P, [&](Tape& t) { return depthwise_conv1d(t.param(x3), t.param(k5)); },
            {&x3, &k5});
    Parameter& w = b.param("w", {3, 4});
    b.probe("pointwise_conv1d", P, [&](Tape& t) { return pointwise_conv1d(t.param(x), t.param(w)); }, {&x, &w});
  }
  {
    Parameter& s = b.param("scores", {3, 6}, -2.0, 2.0);
    b.probe("topk_soft", P, [&](Tape& t) { return topk_mask(t.param(s), 0.3).soft; }, {&s});
    Parameter& x = b.param("x", {3, 1, 4});
    b.probe("broadcast_to", P, [&](Tape& t) { return broadcast_to(t.param(x), {3, 5, 4}); }, {&x});
  }
}

void modules(Battery& b) {
  const double M = kModuleThreshold;
  const std::size_t T = 3, Lv = 4, La = 3, C = 8;
  {
    MhaParams p("mha", C, 2, b.rng);
    Parameter& x = b.param("x", {T, Lv, C});
    ParamList ps{&x};
    p.collect(ps);
    b.probe("mha", M, [&](Tape& t) { return mha(t, t.param(x), p); }, ps);
    Parameter& kv = b.param("kv", {T, La, C});
    ps.push_back(&kv);
    b.probe("mhca", M, [&](Tape& t) { return mhca(t, t.param(x), t.param(kv), t.param(kv), p); }, ps);
  }

  CasteConfig cc;
  cc.c_visual = C;
  cc.c_audio = C;
  Parameter& v = b.param("v", {T, Lv, C});
  Parameter& a = b.param("a", {T, La, C});
  {
    CasteLayerParams p("caste", cc, b.rng);
    p.set_gates(0.7);
    ParamList gate_ps{&v, &a};
    p.gate.collect(gate_ps);
    b.probe(
        "agreement_gate", M,
        [&](Tape& t) {
          Prototypes pr = compute_prototypes(t.param(v), t.param(a));
          AgreementOutput g = agreement_gate(t, pr.visual, pr.audio, p.gate);
          return concat({g.g, g.w_sp, g.w_tm}, 0);
        },
        gate_ps);
    ParamList sp{&v};
    p.visual.spatial.collect(sp);
    b.probe("spatial_enrich", M, [&](Tape& t) { return spatial_enrich(t, t.param(v), p.visual.spatial); }, sp);
    ParamList tm{&v};
    p.visual.temporal.collect(tm);
    b.probe("temporal_enrich", M, [&](Tape& t) { return temporal_enrich(t, t.param(v), p.visual.temporal); }, tm);

    Parameter &xs = b.param("x_sp", {T, Lv, C}), &xt = b.param("x_tm", {T, Lv, C});
    Parameter& wl = b.param("w_logit", {T});
    ParamList inj{&v, &xs, &xt, &wl, &p.visual.inject_gamma};
    b.probe(
        "selective_inject", M,
        [&](Tape& t) {
          AgreementOutput g;
          g.w_sp = sigmoid(t.param(wl));
          g.w_tm = sub(t.constant(Tensor({T}, 1.0)), g.w_sp);
          g.g = g.w_sp;
          InjectionOutput o = selective_inject(t, t.param(v), t.param(xs), t.param(xt), g,
                                               t.param(p.visual.inject_gamma), cc.rho);
          return concat({reshape(o.x, {T * Lv * C}), reshape(o.soft, {T * Lv})}, 0);
        },
        inj);
    ParamList all{&v, &a};
    p.collect(all);
    b.probe(
        "caste_forward", M,
        [&](Tape& t) {
          CasteOutput o = caste_forward(t, t.param(v), t.param(a), p, cc);
          return concat({reshape(o.visual, {T * Lv * C}), reshape(o.audio, {T * La * C})}, 0);
        },
        all);
  }

  CaseConfig kc;
  kc.c_visual = C;
  kc.c_audio = C;
  kc.c_text = 6;
  {
    CaptionParams cp("caption", kc, b.rng);
    CaseParams p("case", kc, b.rng);
    p.set_gates(0.7);
    Parameter &sv = b.param("caption_v", {2, kc.c_text}), &sa = b.param("caption_a", {2, kc.c_text});
    ParamList cps{&sv, &sa};
    cp.collect(cps);
    b.probe(
        "caption_process", M,
        [&](Tape& t) {
          CaptionFeatures f = caption_process(t, t.param(sv), t.param(sa), cp, T);
          return concat({reshape(f.visual, {f.visual.size()}), reshape(f.audio, {f.audio.size()})}, 0);
        },
        cps);

    Parameter &cv = b.param("cap_v", {T, 2, C}), &ca = b.param("cap_a", {T, 2, C});
    ParamList rps{&v, &a, &cv, &ca};
    p.collect(rps);
    b.probe(
        "cross_refine", M,
        [&](Tape& t) {
          RefinedStreams r = cross_refine(t, t.param(v), t.param(a), {t.param(cv), t.param(ca)}, p);
          return concat({reshape(r.visual, {r.visual.size()}), reshape(r.audio, {r.audio.size()})}, 0);
        },
        rps);
    b.probe("frame_gate", M, [&](Tape& t) { return frame_gate(t.param(v), t.param(cv)); }, {&v, &cv});

    Parameter& ref = b.param("refined", {T, Lv, C});
    Parameter& gl = b.param("gate_logit", {T});
    ParamList ips{&v, &ref, &gl, &p.gamma_visual};
    p.norm_visual.collect(ips);
    b.probe(
        "case_inject", M,
        [&](Tape& t) {
          CaseInjection o =
              case_inject(t, t.param(v), t.param(ref), sigmoid(t.param(gl)), p.norm_visual, t.param(p.gamma_visual), kc.rho);
          return concat({reshape(o.x, {o.x.size()}), reshape(o.soft, {o.soft.size()})}, 0);
        },
        ips);
    b.probe(
        "case_forward", M,
        [&](Tape& t) {
          CaseOutput o = case_forward(t, t.param(v), t.param(a), {t.param(cv), t.param(ca)}, p, kc);
          return concat({reshape(o.visual, {o.visual.size()}), reshape(o.audio, {o.audio.size()})}, 0);
        },
        rps);
  }

  {
    MoEAdapter ad("moe", C, C, 2, 1, 2, b.rng);
    ParamList ps{&v, &a};
    ad.collect(ps);
    perturb(ps, b.rng, 0.3);
    b.probe("moe_forward", M, [&](Tape& t) { return moe_forward(t, t.param(v), t.param(a), ad).x; }, ps);
  }

  ModelConfig mc;
  mc.layers = 1;
  mc.c_visual = mc.c_audio = C;
  mc.c_text = 6;
  mc.n_classes = 3;
  mc.embed_dim = 8;
  mc.gate_init = 0.7;
  mc.case_gate_init = 0.7;
  for (InsertionLocation loc : {InsertionLocation::BeforeMoe, InsertionLocation::BetweenMoe,
                                InsertionLocation::AfterMoe}) {
    mc.insertion_location = loc;
    LayerParams lp("layer", mc, b.rng);
    ParamList ps{&v, &a};
    lp.collect(ps);
    perturb(ps, b.rng, 0.3);
    b.probe(
        "layer_forward_" + to_string(loc), M,
        [&](Tape& t) {
          LayerOutput o = layer_forward(t, t.param(v), t.param(a), lp, mc, true);
          return concat({reshape(o.visual, {o.visual.size()}), reshape(o.audio, {o.audio.size()})}, 0);
        },
        ps);
  }

  {
    const std::size_t N = 6, E = 5;
    ProjectionHeads heads("proj", C, C, E, b.rng);
    Parameter &fv = b.param("frame_v", {N, C}), &fa = b.param("frame_a", {N, C});
    Parameter &fvc = b.param("frame_vc", {N, C}), &fac = b.param("frame_ac", {N, C});
    ParamList ps{&fv, &fa, &fvc, &fac};
    heads.collect(ps);
    const std::vector<std::int64_t> ids{0, 0, 1, 1, 2, 2};
    b.run(
        "loss_infonce_cap", M,
        [&](Tape& t) {
          return loss_infonce_cap(heads.visual(t, t.param(fv)), heads.visual_caption(t, t.param(fvc)), ids, 0.07);
        },
        ps);
    b.run("loss_va", M, [&](Tape& t) { return loss_va(heads.visual(t, t.param(fv)), heads.audio(t, t.param(fa))); },
          ps);
    Parameter &lv = b.param("logit_v", {N, 4}), &la = b.param("logit_a", {N, 4});
    for (int sign : {-1, 1})
      b.run(std::string("loss_entropy_sign") + (sign < 0 ? "-" : "+"), M,
            [&, sign](Tape& t) {
              return loss_entropy(softmax_lastdim(t.param(lv)), softmax_lastdim(t.param(la)), sign);
            },
            {&lv, &la});
    ParamList all = ps;
    all.push_back(&lv);
    all.push_back(&la);
    Parameter& task = b.param("task_logits", {N, 3});
    all.push_back(&task);
    b.run(
        "loss_total", M,
        [&](Tape& t) {
          LossTerms terms;
          terms.task = cross_entropy(t.param(task), {0, 1, 2, 0, 1, 2});
          Var zv = heads.visual(t, t.param(fv)), za = heads.audio(t, t.param(fa));
          terms.cap_visual = loss_infonce_cap(zv, heads.visual_caption(t, t.param(fvc)), ids, 0.07);
          terms.cap_audio = loss_infonce_cap(za, heads.audio_caption(t, t.param(fac)), ids, 0.07);
          terms.va = loss_va(zv, za);
          terms.entropy = loss_entropy(softmax_lastdim(t.param(lv)), softmax_lastdim(t.param(la)), -1);
          LossWeights w;
          return scale(loss_total(terms, w, 10), 0.1);
        },
        all);
  }
}

void full_model(Battery& b) {
  if (!b.selected("full_model")) return;
  GenConfig g;
  g.n_classes = 3;
  g.frames = 3;
  g.tokens_visual = 4;
  g.tokens_audio = 4;
  g.c_visual = g.c_audio = 8;
  g.c_text = 8;
  g.caption_tokens = 2;
  g.noise_sigma = 0.3;
  g.seed = 11;
  const Split split = make_splits(g, 2, 1, 0.5);

  ModelConfig mc;
  mc.layers = 2;
  mc.heads = 2;
  mc.c_visual = mc.c_audio = 8;
  mc.c_text = 8;
  mc.n_classes = 3;
  mc.embed_dim = 8;
  auto model = std::make_shared<Model>(mc, 5);
  const ParamList ps = model->trainable();
  perturb(ps, b.rng, 0.3);
  auto eps = std::make_shared<std::vector<Episode>>(split.train);
  ScalarFn f = [model, eps](Tape& t) {
    std::vector<BatchItem> batch;
    for (const Episode& e : *eps) batch.push_back({&e, nullptr});
    LossWeights w;
    return scale(model_objective(t, *model, batch, w, 10).total, 0.1);
  };
  b.run("full_model", kModuleThreshold, f, ps);
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck(const GradCheckOptions& opts) {
  Battery b{opts};
  primitives(b);
  modules(b);
  full_model(b);
  if (!opts.corrupt.empty()) {
    bool found = false;
    for (const auto& e : b.entries) found = found || e.name == opts.corrupt;
    if (!found) throw ConfigError("gradcheck: no check named '" + opts.corrupt + "' to corrupt");
  }
  return b.entries;
}

std::string gradcheck_report(const std::vector<GradCheckEntry>& entries) {
  std::string out;
  char buf[512];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%-4s %-32s max_rel=%.3e thr=%.0e coords=%zu worst=%s[%zu] analytic=%.12g numeric=%.12g\n",
                  e.passed() ? "ok" : "FAIL", e.name.c_str(), e.max_rel_error, e.threshold, e.coords,
                  e.worst_param.c_str(), e.worst_index, e.analytic, e.numeric);
    out += buf;
  }
  return out;
}

}  // namespace caeav
