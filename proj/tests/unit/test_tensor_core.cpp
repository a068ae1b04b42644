#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "caeav/checkpoint.hpp"
#include "caeav/errors.hpp"
#include "helpers.hpp"

using namespace caeav;
using namespace caeav::test;

TEST_SUITE("tensor_core") {

TEST_CASE("matmul examples") {
  Tape t;
  Var id = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Var b = t.constant(Tensor({2, 1}, {3, 4}));
  CHECK(matmul(id, b).value().data == std::vector<double>{3, 4});
  Var r = t.constant(Tensor({1, 2}, {1, 2}));
  Var z = t.constant(Tensor({2, 1}, {0, 0}));
  CHECK(matmul(r, z).value().data == std::vector<double>{0});
}

TEST_CASE("matmul folds leading axes") {
  Rng rng(1);
  Tape t;
  Tensor a = randn({2, 3, 4}, rng), b = randn({4, 5}, rng);
  Tensor out = matmul(t.constant(a), t.constant(b)).value();
  CHECK(out.shape == Shape{2, 3, 5});
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a.data[r * 4 + k] * b.data[k * 5 + j];
      CHECK(out.data[r * 5 + j] == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(2);
  Parameter a = rparam("a", {3, 4}, rng), b = rparam("b", {4, 2}, rng);
  auto r = grad_check([&](Tape& t) { return sum_all(matmul(t.param(a), t.param(b))); }, {&a, &b});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape t;
  Var a = t.constant(Tensor({2, 3})), b = t.constant(Tensor({2, 2}));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2 x 3]") != std::string::npos);
    CHECK(msg.find("[2 x 2]") != std::string::npos);
  }
}

TEST_CASE("elementwise examples and errors") {
  Tape t;
  Var x = t.constant(Tensor({3}, {1, 2, 3}));
  CHECK(hadamard(x, t.constant(Tensor({3}, {1, 1, 1}))).value().data == std::vector<double>{1, 2, 3});
  CHECK(sub(x, x).value().data == std::vector<double>{0, 0, 0});
  CHECK(scale(x, 2.0).value().data == std::vector<double>{2, 4, 6});
  Var m = t.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK(add(m, t.constant(Tensor({2, 1}, {10, 20}))).value().data == std::vector<double>{11, 12, 13, 24, 25, 26});
  CHECK_THROWS_AS(add(m, t.constant(Tensor({2}, {1, 2}))), DimensionError);
}

TEST_CASE("hadamard gradient") {
  Rng rng(3);
  Parameter a = rparam("a", {2, 3}, rng), b = rparam("b", {2, 3}, rng);
  auto r = grad_check([&](Tape& t) { return probe(t, hadamard(t.param(a), t.param(b))); }, {&a, &b});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("softmax examples") {
  Tape t;
  CHECK(softmax_lastdim(t.constant(Tensor({2}, {0, 0}))).value().data == std::vector<double>{0.5, 0.5});
  CHECK(softmax_lastdim(t.constant(Tensor({2}, {1000, 1000}))).value().data == std::vector<double>{0.5, 0.5});
  Tensor s = softmax_lastdim(t.constant(Tensor({2}, {1, -1}))).value();
  CHECK(s.data[0] == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(s.data[1] == doctest::Approx(0.1192).epsilon(1e-3));
}

TEST_CASE("softmax sums to one and is shift invariant") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Tape t;
    const std::size_t n = 1 + rng.below(12);
    Tensor x = randn({3, n}, rng, 5.0);
    Tensor shifted = x;
    const double c = std::ldexp(static_cast<double>(rng.below(64)), -2);  // exact in binary
    for (double& v : shifted.data) v += c;
    Tensor a = softmax_lastdim(t.constant(x)).value();
    Tensor b = softmax_lastdim(t.constant(shifted)).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) s += a.data[r * n + j];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    CHECK(max_abs_diff(a, b) < 1e-13);
    // integer-valued inputs keep x - max(x) exact, so the shift is invisible bitwise
    Tensor xi = x, xs = x;
    for (std::size_t i = 0; i < xi.size(); ++i) {
      xi.data[i] = std::round(x.data[i]);
      xs.data[i] = xi.data[i] + std::round(c * 4);
    }
    CHECK(softmax_lastdim(t.constant(xi)).value().bit_equal(softmax_lastdim(t.constant(xs)).value()));
  }
}

TEST_CASE("activations") {
  Tape t;
  CHECK(sigmoid(t.constant(Tensor::scalar(0))).item() == 0.5);
  CHECK(relu(t.constant(Tensor::scalar(-3))).item() == 0.0);
  CHECK(relu(t.constant(Tensor::scalar(3))).item() == 3.0);
  // tanh-form GELU at x = 1
  const double g = 0.5 * (1 + std::tanh(std::sqrt(2 / M_PI) * (1 + 0.044715)));
  CHECK(gelu(t.constant(Tensor::scalar(1))).item() == doctest::Approx(g).epsilon(1e-15));
  Parameter x("x", Tensor::scalar(1.0));
  CHECK(grad_check([&](Tape& tp) { return sigmoid(tp.param(x)); }, {&x}).max_rel_error < 1e-6);
  Rng rng(5);
  Parameter y = rparam("y", {7}, rng);
  CHECK(grad_check([&](Tape& tp) { return probe(tp, gelu(tp.param(y))); }, {&y}).max_rel_error < 1e-6);
}

TEST_CASE("layer_norm examples") {
  Tape t;
  Var g4 = t.constant(Tensor({4}, 1.0)), b4 = t.constant(Tensor({4}, 0.0));
  Tensor c = layer_norm(t.constant(Tensor({4}, 5.0)), g4, b4).value();
  for (double v : c.data) CHECK(v == 0.0);
  Var g2 = t.constant(Tensor({2}, 1.0)), b2 = t.constant(Tensor({2}, 0.0));
  Tensor u = layer_norm(t.constant(Tensor({2}, {1, -1})), g2, b2, 1e-12).value();
  CHECK(u.data[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(u.data[1] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK_THROWS_AS(layer_norm(t.constant(Tensor({3}, 1.0)), g2, b2), DimensionError);
}

TEST_CASE("layer_norm gradient on [2,4,8]") {
  Rng rng(6);
  Parameter x = rparam("x", {2, 4, 8}, rng), g = rparam("g", {8}, rng), b = rparam("b", {8}, rng);
  auto r = grad_check([&](Tape& t) { return probe(t, layer_norm(t.param(x), t.param(g), t.param(b))); },
                      {&x, &g, &b});
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("mean_axis") {
  Tape t;
  CHECK(mean_axis(t.constant(Tensor({2, 2}, {1, 3, 5, 7})), 0).value().data == std::vector<double>{3, 5});
  Tensor one = mean_axis(t.constant(Tensor({1, 3}, {1, 2, 3})), 0).value();
  CHECK(one.data == std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS(mean_axis(t.constant(Tensor({2, 2})), 2), DimensionError);
  Rng rng(7);
  Parameter x = rparam("x", {3, 4, 2}, rng);
  CHECK(grad_check([&](Tape& tp) { return probe(tp, mean_axis(tp.param(x), 1)); }, {&x}).max_rel_error < 1e-6);
  // uniform fan-out: d sum(mean)/dx = 1/n everywhere
  x.zero_grad();
  Tape tp;
  tp.backward(sum_all(mean_axis(tp.param(x), 1)));
  for (double v : x.grad.data) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("cosine examples") {
  Tape t;
  Var a = t.constant(Tensor({3}, {1, 2, 3}));
  CHECK(cosine_lastdim(a, a).item() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_lastdim(a, scale(a, -1)).item() == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(cosine_lastdim(t.constant(Tensor({3}, 0.0)), a).item() == 0.0);
  CHECK(cosine_lastdim(a, a).item() <= 1.0);
}

TEST_CASE("depthwise_conv1d examples") {
  Rng rng(8);
  Tape t;
  Tensor x = randn({5, 3}, rng);
  Tensor ident({3, 3}, {0, 1, 0, 0, 1, 0, 0, 1, 0});
  CHECK(depthwise_conv1d(t.constant(x), t.constant(ident)).value().bit_equal(x));
  Tensor ones({1, 3}, {1, 1, 1});
  Tensor y = depthwise_conv1d(t.constant(Tensor({4, 1}, {1, 0, 0, 0})), t.constant(ones)).value();
  CHECK(y.data == std::vector<double>{1, 1, 0, 0});
  CHECK_THROWS_AS(depthwise_conv1d(t.constant(x), t.constant(Tensor({3, 2}))), ConfigError);
  Parameter px = rparam("x", {5, 3}, rng), pk = rparam("k", {3, 3}, rng);
  CHECK(grad_check([&](Tape& tp) { return probe(tp, depthwise_conv1d(tp.param(px), tp.param(pk))); }, {&px, &pk})
            .max_rel_error < 1e-6);
}

TEST_CASE("pointwise_conv1d matches matmul") {
  Rng rng(9);
  Tape t;
  Tensor x = randn({6, 4}, rng), w = randn({4, 3}, rng);
  Tensor p = pointwise_conv1d(t.constant(x), t.constant(w)).value();
  Tensor m = matmul(t.constant(x), t.constant(w)).value();
  CHECK(max_abs_diff(p, m) < 1e-12);
  Tensor eye({4, 4}, 0.0);
  for (int i = 0; i < 4; ++i) eye.data[i * 5] = 1;
  CHECK(pointwise_conv1d(t.constant(x), t.constant(eye)).value().bit_equal(x));
  for (double v : pointwise_conv1d(t.constant(x), t.constant(Tensor({4, 3}, 0.0))).value().data) CHECK(v == 0.0);
  CHECK_THROWS_AS(pointwise_conv1d(t.constant(x), t.constant(Tensor({3, 3}))), DimensionError);
}

TEST_CASE("topk_mask examples") {
  Tape t;
  CHECK(topk_count(10, 0.3) == 3);
  CHECK(topk_count(16, 0.3) == 5);
  TopK eq = topk_mask(t.constant(Tensor({1, 4}, 1.0)), 0.5);
  CHECK(eq.mask.data == std::vector<double>{1, 1, 0, 0});
  TopK k = topk_mask(t.constant(Tensor({1, 4}, {1, 5, 2, 9})), 0.5);
  CHECK(k.mask.data == std::vector<double>{0, 1, 0, 1});
  CHECK_THROWS_AS(topk_mask(t.constant(Tensor({1, 4})), 0.0), ConfigError);
  CHECK_THROWS_AS(topk_mask(t.constant(Tensor({1, 4})), 1.5), ConfigError);
}

TEST_CASE("backward contract") {
  Rng rng(10);
  Parameter p = rparam("p", {2, 3}, rng), q = rparam("q", {2}, rng);
  {
    Tape t;
    t.backward(sum_all(t.param(p)));
    for (double g : p.grad.data) CHECK(g == 1.0);
  }
  {
    p.zero_grad();
    q.zero_grad();
    Tape t;
    Var pv = t.param(p);
    (void)pv;
    t.backward(sum_all(t.param(q)));
    for (double g : p.grad.data) CHECK(g == 0.0);
  }
  {
    Tape t;
    Var v = t.param(p);
    CHECK_THROWS_AS(t.backward(v), UsageError);
    Var s = sum_all(v);
    t.backward(s);
    CHECK_THROWS_AS(t.backward(s), UsageError);
  }
  {
    Parameter f("f", Tensor({2}, {1, 2}), true);
    Tape t;
    t.backward(sum_all(hadamard(t.param(f), t.param(q))));
    for (double g : f.grad.data) CHECK(g == 0.0);
  }
}

TEST_CASE("composite expression over five primitives") {
  Rng rng(11);
  Parameter a = rparam("a", {3, 4}, rng), w = rparam("w", {4, 4}, rng), g = rparam("g", {4}, rng);
  auto f = [&](Tape& t) {
    Var h = matmul(t.param(a), t.param(w));
    Var n = layer_norm(h, t.param(g), t.constant(Tensor({4}, 0.0)));
    Var s = softmax_lastdim(gelu(n));
    return probe(t, mean_axis(hadamard(s, n), 0));
  };
  CHECK(grad_check(f, {&a, &w, &g}).max_rel_error < 1e-5);
}

TEST_CASE("grad_check oracle") {
  Parameter p("p", Tensor({2}, {1, 2}));
  auto f = [&](Tape& t) { Var v = t.param(p); return sum_all(hadamard(v, v)); };
  GradCheckResult r = grad_check(f, {&p});
  CHECK(r.max_rel_error < 1e-9);
  CHECK(r.coords_checked == 2);
  CHECK_THROWS_AS(grad_check(f, {&p}, 1e-3), ConfigError);
  int calls = 0;
  auto noisy = [&](Tape& t) { return scale(sum_all(t.param(p)), 1.0 + 1e-3 * (calls++ % 2)); };
  CHECK_THROWS_AS(grad_check(noisy, {&p}), UsageError);
}

TEST_CASE("primitive gradients on random shapes") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 1 + rng.below(3), L = 1 + rng.below(4), C = 1 + rng.below(5);
    Parameter x = rparam("x", {T, L, C}, rng), y = rparam("y", {T, L, C}, rng);
    Parameter w = rparam("w", {C, 1 + rng.below(4)}, rng);
    auto check = [&](const char* name, const ScalarFn& f, std::vector<Parameter*> ps) {
      INFO(name << " T=" << T << " L=" << L << " C=" << C);
      CHECK(grad_check(f, ps).max_rel_error < 1e-5);
    };
    check("matmul", [&](Tape& t) { return probe(t, matmul(t.param(x), t.param(w))); }, {&x, &w});
    check("softmax", [&](Tape& t) { return probe(t, softmax_lastdim(t.param(x))); }, {&x});
    check("log_softmax", [&](Tape& t) { return probe(t, log_softmax_lastdim(t.param(x))); }, {&x});
    check("sigmoid", [&](Tape& t) { return probe(t, sigmoid(t.param(x))); }, {&x});
    check("gelu", [&](Tape& t) { return probe(t, gelu(t.param(x))); }, {&x});
    check("sub", [&](Tape& t) { return probe(t, sub(t.param(x), t.param(y))); }, {&x, &y});
    check("cosine", [&](Tape& t) { return probe(t, cosine_lastdim(t.param(x), t.param(y))); }, {&x, &y});
    check("l2norm", [&](Tape& t) { return probe(t, l2_normalize_lastdim(t.param(x))); }, {&x});
    check("sum_axis", [&](Tape& t) { return probe(t, sum_axis(t.param(x), 1)); }, {&x});
    check("permute", [&](Tape& t) { return probe(t, permute(t.param(x), {2, 0, 1})); }, {&x});
  }
}

TEST_CASE("checkpoint round trip and version errors") {
  Rng rng(13);
  Parameter a = rparam("a", {2, 3}, rng), b("b", Tensor({4}, {1, 2, 3, 4}), true);
  const auto path = (std::filesystem::temp_directory_path() / "caeav_ckpt_test.bin").string();
  save_checkpoint(path, std::vector<Parameter*>{&a, &b});
  Parameter a2("a", Tensor({2, 3})), b2("b", Tensor({4}), true);
  load_checkpoint(path, {&a2, &b2});
  CHECK(a2.value.bit_equal(a.value));
  CHECK(b2.value.bit_equal(b.value));
  Parameter wrong("a", Tensor({3, 2}));
  CHECK_THROWS_AS(load_checkpoint(path, {&wrong, &b2}), VersionError);
  Parameter renamed("x", Tensor({2, 3}));
  CHECK_THROWS_AS(load_checkpoint(path, {&renamed, &b2}), VersionError);
  std::filesystem::remove(path);
}

TEST_CASE("rng draws are reproducible and forks independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng f1 = Rng(42).fork(1), f2 = Rng(42).fork(2);
  CHECK(f1.next() != f2.next());
  Rng u(7);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK((x >= 0.0 && x < 1.0));
    CHECK(u.below(5) < 5);
  }
}

}  // TEST_SUITE
