#include <doctest.h>

#include <cmath>

#include "caeav/case.hpp"
#include "caeav/errors.hpp"
#include "helpers.hpp"

using namespace caeav;
using namespace caeav::test;

namespace {

CaseConfig tiny_case() {
  CaseConfig c;
  c.c_visual = 4;
  c.c_audio = 6;
  c.c_text = 4;
  c.heads = 2;
  return c;
}

void zero(Parameter& p) { std::fill(p.value.data.begin(), p.value.data.end(), 0.0); }

}  // namespace

TEST_SUITE("case") {

TEST_CASE("mha examples") {
  Rng rng(1);
  MhaParams p("m", 8, 2, rng);
  Tape t;
  Tensor x = randn({1, 8}, rng);
  // one token: attention weight 1, so out = x Wv Wo
  Tensor y = mha(t, t.constant(x), p).value();
  Tensor ref = matmul(matmul(t.constant(x), t.constant(p.w_value.value)), t.constant(p.w_out.value)).value();
  CHECK(max_abs_diff(y, ref) < 1e-12);
  zero(p.w_query);
  zero(p.w_key);
  zero(p.w_value);
  zero(p.w_out);
  Tape t0;
  for (double v : mha(t0, t0.constant(randn({3, 8}, rng)), p).value().data) CHECK(v == 0.0);
  CHECK_THROWS_AS(MhaParams("bad", 7, 2, rng), ConfigError);
}

TEST_CASE("mha gradient, 2 heads on [3x8]") {
  Rng rng(2);
  MhaParams p("m", 8, 2, rng);
  Parameter x = rparam("x", {3, 8}, rng);
  ParamList ps{&x};
  p.collect(ps);
  CHECK(grad_check([&](Tape& t) { return scale(probe(t, mha(t, t.param(x), p)), 1.0 / 24); }, ps, 1e-4)
            .max_rel_error < 1e-4);
}

TEST_CASE("caption_process") {
  Rng rng(3);
  CaseConfig cfg = tiny_case();
  CaptionParams p("cap", cfg, rng);
  Tensor cv = randn({3, 4}, rng), ca = randn({3, 4}, rng);
  Tape t;
  CaptionFeatures one = caption_process(t, t.constant(cv), t.constant(ca), p, 1);
  CHECK(one.visual.shape() == Shape{1, 3, 4});
  CHECK(one.audio.shape() == Shape{1, 3, 6});
  CaptionFeatures f = caption_process(t, t.constant(cv), t.constant(ca), p, 5);
  const Tensor& fv = f.visual.value();
  for (std::size_t s = 1; s < 5; ++s)
    for (std::size_t k = 0; k < 12; ++k) CHECK(fv.data[s * 12 + k] == fv.data[k]);
  for (std::size_t k = 0; k < 12; ++k) CHECK(fv.data[k] == one.visual.value().data[k]);
  CHECK_THROWS_AS(caption_process(t, t.constant(Tensor({12})), t.constant(ca), p, 2), InputError);
}

TEST_CASE("shared caption attention accumulates both branches") {
  Rng rng(4);
  CaseConfig cfg = tiny_case();
  CaptionParams p("cap", cfg, rng);
  Tensor cv = randn({3, 4}, rng), ca = randn({3, 4}, rng);
  auto grads = [&](double wv, double wa) {
    ParamList ps;
    p.shared_attn.collect(ps);
    for (Parameter* q : ps) q->zero_grad();
    Tape t;
    CaptionFeatures f = caption_process(t, t.constant(cv), t.constant(ca), p, 2);
    t.backward(add(scale(probe(t, f.visual, 1), wv), scale(probe(t, f.audio, 2), wa)));
    std::vector<double> out;
    for (Parameter* q : ps) out.insert(out.end(), q->grad.data.begin(), q->grad.data.end());
    return out;
  };
  auto both = grads(1, 1), only_v = grads(1, 0), only_a = grads(0, 1);
  double nv = 0, na = 0;
  for (std::size_t i = 0; i < both.size(); ++i) {
    CHECK(both[i] == doctest::Approx(only_v[i] + only_a[i]).epsilon(1e-12));
    nv += std::abs(only_v[i]);
    na += std::abs(only_a[i]);
  }
  CHECK(nv > 0);
  CHECK(na > 0);
  // and the summed gradient matches finite differences
  ParamList ps;
  p.shared_attn.collect(ps);
  auto f = [&](Tape& t) {
    CaptionFeatures c = caption_process(t, t.constant(cv), t.constant(ca), p, 2);
    return scale(add(probe(t, c.visual, 1), probe(t, c.audio, 2)), 0.05);
  };
  CHECK(grad_check(f, ps, 1e-4).max_rel_error < 1e-4);
}

TEST_CASE("cross_refine shapes, zero cross projection and errors") {
  Rng rng(5);
  CaseConfig cfg = tiny_case();
  CaptionParams cp("cap", cfg, rng);
  CaseParams p("case", cfg, rng);
  Tensor v = randn({3, 5, 4}, rng), a = randn({3, 2, 6}, rng);
  Tape t;
  CaptionFeatures caps = caption_process(t, t.constant(randn({2, 4}, rng)), t.constant(randn({2, 4}, rng)), cp, 3);
  RefinedStreams r = cross_refine(t, t.constant(v), t.constant(a), caps, p);
  CHECK(r.visual.shape() == v.shape);
  CHECK(r.audio.shape() == a.shape);
  // With W^{v<-a} = 0 the cross-modal attention of the visual side sees zero keys
  // and values, so swapping the audio stream cannot change the visual output.
  zero(p.visual_from_audio.weight);
  Tape t2;
  CaptionFeatures caps2 = caption_process(t2, t2.constant(randn({2, 4}, rng)), t2.constant(randn({2, 4}, rng)), cp, 3);
  Tensor v1 = cross_refine(t2, t2.constant(v), t2.constant(a), caps2, p).visual.value();
  Tensor v2 = cross_refine(t2, t2.constant(v), t2.constant(randn({3, 2, 6}, rng)), caps2, p).visual.value();
  CHECK(v1.bit_equal(v2));
  CHECK_THROWS_AS(cross_refine(t, t.constant(v), t.constant(randn({2, 2, 6}, rng)), caps, p), DimensionError);
}

TEST_CASE("frame_gate closed forms") {
  Tape t;
  Tensor x({1, 2, 3}, {1, 0, 0, 1, 0, 0});
  Tensor same({1, 1, 3}, {2, 0, 0}), orth({1, 1, 3}, {0, 1, 0}), anti({1, 1, 3}, {-1, 0, 0}), zero3({1, 1, 3}, 0.0);
  CHECK(frame_gate(t.constant(x), t.constant(same)).value().data[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(frame_gate(t.constant(x), t.constant(orth)).value().data[0] == doctest::Approx(0.5));
  CHECK(frame_gate(t.constant(x), t.constant(anti)).value().data[0] == doctest::Approx(0.2689).epsilon(1e-4));
  CHECK(frame_gate(t.constant(x), t.constant(zero3)).value().data[0] == 0.5);
  CHECK_THROWS_AS(frame_gate(t.constant(x), t.constant(Tensor({2, 1, 3}))), DimensionError);
}

TEST_CASE("case_inject") {
  Rng rng(6);
  Tape t;
  LayerNormParams norm("n", 3);
  Tensor x = randn({2, 10, 3}, rng), ref = randn({2, 10, 3}, rng);
  Var gate = t.constant(Tensor({2}, {0.6, 0.4}));
  CaseInjection off = case_inject(t, t.constant(x), t.constant(ref), gate, norm, t.constant(Tensor::scalar(0)), 0.3);
  CHECK(off.x.value().bit_equal(x));
  CaseInjection on = case_inject(t, t.constant(x), t.constant(ref), gate, norm, t.constant(Tensor::scalar(1)), 0.3);
  for (std::size_t f = 0; f < 2; ++f) {
    int count = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      const bool m = on.mask.data[f * 10 + i] == 1.0;
      count += m;
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t k = (f * 10 + i) * 3 + c;
        if (!m) CHECK(on.x.value().data[k] == x.data[k]);
      }
    }
    CHECK(count == 3);
  }
  CHECK_THROWS_AS(
      case_inject(t, t.constant(x), t.constant(randn({2, 9, 3}, rng)), gate, norm, t.constant(Tensor::scalar(1)), 0.3),
      DimensionError);
}

TEST_CASE("case_forward: zero gates return inputs, gradient passes") {
  Rng rng(7);
  CaseConfig cfg = tiny_case();
  CaptionParams cp("cap", cfg, rng);
  CaseParams p("case", cfg, rng);
  Tensor cv = randn({2, 4}, rng), ca = randn({2, 4}, rng);
  Tensor v = randn({3, 4, 4}, rng), a = randn({3, 3, 6}, rng);
  {
    Tape t;
    CaptionFeatures caps = caption_process(t, t.constant(cv), t.constant(ca), cp, 3);
    p.set_gates(0.0);
    CaseOutput o = case_forward(t, t.constant(v), t.constant(a), caps, p, cfg);
    CHECK(o.visual.value().bit_equal(v));
    CHECK(o.audio.value().bit_equal(a));
    for (double g : o.gate_visual.value().data) CHECK((g > 0.0 && g < 1.0));
  }
  p.set_gates(0.7);
  ParamList ps;
  cp.collect(ps);
  p.collect(ps);
  auto f = [&](Tape& t) {
    CaptionFeatures caps = caption_process(t, t.constant(cv), t.constant(ca), cp, 3);
    CaseOutput o = case_forward(t, t.constant(v), t.constant(a), caps, p, cfg);
    return scale(add(probe(t, o.visual, 1), probe(t, o.audio, 2)), 0.02);
  };
  CHECK(grad_check(f, ps, 1e-4).max_rel_error < 1e-4);
}

TEST_CASE("config validation") {
  CaseConfig c = tiny_case();
  CHECK_NOTHROW(c.validate());
  c.rho = 1.2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.rho = 0.3;
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

}  // TEST_SUITE
