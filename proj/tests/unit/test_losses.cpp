#include <doctest.h>

#include <cmath>

#include "caeav/errors.hpp"
#include "caeav/losses.hpp"
#include "helpers.hpp"

using namespace caeav;
using namespace caeav::test;

TEST_SUITE("losses") {

TEST_CASE("InfoNCE closed forms") {
  Rng rng(1);
  Tape t;
  Var one = t.constant(randn({1, 5}, rng));
  CHECK(loss_infonce_cap(one, t.constant(randn({1, 5}, rng)), {7}, 0.07).item() == 0.0);
  Var two = t.constant(randn({2, 5}, rng));
  CHECK(loss_infonce_cap(two, t.constant(randn({2, 5}, rng)), {3, 3}, 0.07).item() == 0.0);
  // every pairwise similarity equal -> two-term softmax with equal logits
  Tensor e({2, 2}, {1, 0, 1, 0});
  CHECK(std::abs(loss_infonce_cap(t.constant(e), t.constant(e), {0, 1}, 0.07).item() - std::log(2.0)) < 1e-6);
  CHECK_THROWS_AS(loss_infonce_cap(two, two, {0, 1}, 0.0), ConfigError);
  CHECK_THROWS_AS(loss_infonce_cap(two, two, {0}, 0.07), DimensionError);
}

TEST_CASE("InfoNCE is nonnegative and excludes same-video negatives") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Tape t;
    const std::size_t N = 1 + rng.below(6);
    std::vector<std::int64_t> ids(N);
    for (auto& id : ids) id = static_cast<std::int64_t>(rng.below(3));
    CHECK(loss_infonce_cap(t.constant(randn({N, 4}, rng)), t.constant(randn({N, 4}, rng)), ids, 0.1).item() >= 0.0);
  }
  // Appending a frame of video 1 must leave the term of the other video-1 frame
  // untouched (same-video frames are never negatives); the batch value must equal
  // a direct evaluation of every per-frame term.
  Tensor zm = randn({3, 4}, rng), zc = randn({3, 4}, rng);
  Tensor zm4 = randn({4, 4}, rng), zc4 = randn({4, 4}, rng);
  std::copy(zm.data.begin(), zm.data.end(), zm4.data.begin());
  std::copy(zc.data.begin(), zc.data.end(), zc4.data.begin());
  Tape t;
  const double grown = 4 * loss_infonce_cap(t.constant(zm4), t.constant(zc4), {0, 0, 1, 1}, 0.1).item();
  auto term = [](const Tensor& a, const Tensor& c, std::size_t i, const std::vector<std::int64_t>& ids) {
    auto unit = [](const Tensor& x, std::size_t r) {
      std::vector<double> v(x.data.begin() + r * 4, x.data.begin() + r * 4 + 4);
      double n = 0;
      for (double y : v) n += y * y;
      for (double& y : v) y /= std::sqrt(n);
      return v;
    };
    auto dot = [](const std::vector<double>& x, const std::vector<double>& y) {
      double s = 0;
      for (std::size_t k = 0; k < x.size(); ++k) s += x[k] * y[k];
      return s / 0.1;
    };
    const auto zi = unit(a, i);
    double den = 0;
    for (std::size_t j = 0; j < ids.size(); ++j)
      if (j == i || ids[j] != ids[i]) den += std::exp(dot(zi, unit(c, j)));
    return std::log(den) - dot(zi, unit(c, i));
  };
  const std::vector<std::int64_t> ids4{0, 0, 1, 1};
  double expect = 0;
  for (std::size_t i = 0; i < 4; ++i) expect += term(zm4, zc4, i, ids4);
  CHECK(grown == doctest::Approx(expect).epsilon(1e-10));
  CHECK(term(zm4, zc4, 2, ids4) == doctest::Approx(term(zm, zc, 2, {0, 0, 1})).epsilon(1e-12));
}

TEST_CASE("L_va endpoints and symmetry") {
  Rng rng(3);
  Tape t;
  Tensor z = randn({4, 3}, rng);
  Tensor neg = z;
  for (double& v : neg.data) v = -v;
  CHECK(std::abs(loss_va(t.constant(z), t.constant(z)).item()) < 1e-12);
  CHECK(std::abs(loss_va(t.constant(z), t.constant(neg)).item() - 2.0) < 1e-12);
  Tensor x({2, 2}, {1, 0, 0, 1}), y({2, 2}, {0, 3, -2, 0});
  CHECK(std::abs(loss_va(t.constant(x), t.constant(y)).item() - 1.0) < 1e-12);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a = randn({3, 5}, rng), b = randn({3, 5}, rng);
    const double l = loss_va(t.constant(a), t.constant(b)).item();
    CHECK((l >= 0.0 && l <= 2.0));
    CHECK(l == doctest::Approx(loss_va(t.constant(b), t.constant(a)).item()).epsilon(1e-14));
  }
}

TEST_CASE("entropy closed forms and bounds") {
  Tape t;
  Tensor onehot({2, 3}, {1, 0, 0, 0, 0, 1});
  CHECK(loss_entropy(t.constant(onehot), t.constant(onehot), -1).item() == 0.0);
  Tensor u4({1, 4}, 0.25);
  CHECK(std::abs(loss_entropy(t.constant(u4), t.constant(u4), -1).item() + 2 * std::log(4.0)) < 1e-9);
  CHECK(std::abs(loss_entropy(t.constant(u4), t.constant(u4), 1).item() - 2 * std::log(4.0)) < 1e-9);
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t L = 1 + rng.below(10);
    Tensor p = softmax_lastdim(t.constant(randn({2, L}, rng, 3.0))).value();
    Tensor h = entropy_lastdim(t.constant(p)).value();
    for (double v : h.data) CHECK((v >= 0.0 && v <= std::log(static_cast<double>(L)) + 1e-12));
  }
  Tensor uL({1, 7}, 1.0 / 7);
  CHECK(std::abs(entropy_lastdim(t.constant(uL)).item() - std::log(7.0)) < 1e-9);
  CHECK_THROWS_AS(loss_entropy(t.constant(Tensor({1, 2}, {0.5, 0.6})), t.constant(u4), -1), InputError);
  CHECK_THROWS_AS(loss_entropy(t.constant(u4), t.constant(u4), 0), ConfigError);
}

TEST_CASE("loss_total weights and warm-up") {
  Tape t;
  LossTerms terms{t.constant(Tensor::scalar(1.0)), t.constant(Tensor::scalar(1.0)), t.constant(Tensor::scalar(1.0)),
                  t.constant(Tensor::scalar(1.0)), t.constant(Tensor::scalar(1.0))};
  LossWeights w{0.10, 0.05, 0.003, 5, 0.07, -1};
  CHECK(loss_total(terms, w, 0).item() == doctest::Approx(1.25).epsilon(1e-15));
  CHECK(loss_total(terms, w, 5).item() == doctest::Approx(1.253).epsilon(1e-15));
  CHECK(w.gamma_effective(4) == 0.0);
  CHECK(w.gamma_effective(5) == 0.003);
  LossWeights none{0, 0, 0, 0, 0.07, -1};
  CHECK(loss_total(terms, none, 9).item() == 1.0);
  CHECK_THROWS_AS(loss_total(LossTerms{}, w, 0), UsageError);
}

TEST_CASE("losses composed with projection heads pass grad_check") {
  Rng rng(5);
  ProjectionHeads heads("h", 4, 3, 5, rng);
  Parameter fv = rparam("fv", {4, 4}, rng), fa = rparam("fa", {4, 3}, rng);
  Parameter sv = rparam("sv", {4, 6}, rng), sa = rparam("sa", {4, 6}, rng);
  ParamList ps{&fv, &fa};
  heads.collect(ps);
  const std::vector<std::int64_t> ids{0, 0, 1, 2};
  auto f = [&](Tape& t) {
    Var zv = heads.visual(t, t.param(fv)), za = heads.audio(t, t.param(fa));
    Var zvc = heads.visual_caption(t, t.param(fv)), zac = heads.audio_caption(t, t.param(fa));
    return scale(add(add(loss_infonce_cap(zv, zvc, ids, 0.5), loss_infonce_cap(za, zac, ids, 0.5)), loss_va(zv, za)),
                 0.1);
  };
  CHECK(grad_check(f, ps, 1e-4).max_rel_error < 1e-4);
  ParamList qs{&sv, &sa};
  auto g = [&](Tape& t) {
    return scale(loss_entropy(softmax_lastdim(t.param(sv)), softmax_lastdim(t.param(sa)), -1), 0.1);
  };
  CHECK(grad_check(g, qs, 1e-4).max_rel_error < 1e-4);
}

}  // TEST_SUITE
