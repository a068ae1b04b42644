#include "caeav/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "caeav/errors.hpp"

namespace caeav {

namespace {

using Ids = std::uint32_t;

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw UsageError("operands recorded on different tapes");
  return a.tape();
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.push_back(s[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

// For each flat index of `a`, the flat index of `b` under left-padded broadcasting.
std::vector<std::size_t> broadcast_map(const Shape& a, const Shape& b, const char* op) {
  if (b.size() > a.size())
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b) + " into " + shape_str(a));
  const std::size_t rank = a.size();
  Shape pb(rank - b.size(), 1);
  pb.insert(pb.end(), b.begin(), b.end());
  for (std::size_t i = 0; i < rank; ++i)
    if (pb[i] != 1 && pb[i] != a[i])
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b) + " into " + shape_str(a));
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    stride[i] = pb[i] == 1 ? 0 : s;
    s *= pb[i];
  }
  const std::size_t n = shape_numel(a);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    map[k] = off;
    for (std::size_t r = rank; r-- > 0;) {
      ++idx[r];
      off += stride[r];
      if (idx[r] < a[r]) break;
      off -= stride[r] * a[r];
      idx[r] = 0;
    }
  }
  return map;
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor y;
  y.shape = x.shape;
  y.data.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = f(x.data[i]);
  return y;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

// ---------------------------------------------------------------------------

namespace {

// Row-major accumulating GEMM: O += A B, O += A^T G, O += G B^T. Small products stay
// in plain loops where the BLAS call overhead dominates.
constexpr std::size_t kBlasMinWork = 1 << 14;

void gemm_acc(const double* __restrict A, const double* __restrict B, double* __restrict O, std::size_t M,
              std::size_t K, std::size_t N) {
  if (M * K * N >= kBlasMinWork) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(M), int(N), int(K), 1.0, A, int(K), B, int(N), 1.0, O,
                int(N));
    return;
  }
  for (std::size_t i = 0; i < M; ++i) {
    double* __restrict orow = O + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = A[i * K + k];
      const double* __restrict brow = B + k * N;
      for (std::size_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
    }
  }
}

void gemm_tn_acc(const double* __restrict A, const double* __restrict G, double* __restrict O, std::size_t M,
                 std::size_t K, std::size_t N) {
  if (M * K * N >= kBlasMinWork) {
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(K), int(N), int(M), 1.0, A, int(K), G, int(N), 1.0, O,
                int(N));
    return;
  }
  for (std::size_t i = 0; i < M; ++i) {
    const double* __restrict grow = G + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = A[i * K + k];
      double* __restrict orow = O + k * N;
      for (std::size_t j = 0; j < N; ++j) orow[j] += aik * grow[j];
    }
  }
}

void gemm_nt_acc(const double* __restrict G, const double* __restrict B, double* __restrict O, std::size_t M,
                 std::size_t K, std::size_t N) {
  if (M * K * N >= kBlasMinWork) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(M), int(K), int(N), 1.0, G, int(N), B, int(N), 1.0, O,
                int(K));
    return;
  }
  std::vector<double> BT(K * N);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < N; ++j) BT[j * K + k] = B[k * N + j];
  gemm_acc(G, BT.data(), O, M, N, K);
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (bs.size() != 2 || last_dim(as) != bs[0])
    throw DimensionError("matmul: inner extents differ, " + shape_str(as) + " x " + shape_str(bs));
  const std::size_t K = bs[0], N = bs[1], M = a.size() / K;
  Shape os = as;
  os.back() = N;
  Tensor out(os, 0.0);
  const double* A = a.value().data.data();
  const double* B = b.value().data.data();
  double* O = out.data.data();
  gemm_acc(A, B, O, M, K, N);
  const Ids ia = a.id(), ib = b.id();
  return t.push(std::move(out), {a, b}, [ia, ib, M, K, N](Tape& tp, Ids self) {
    const double* G = tp.grad(self).data();
    const double* A = tp.value(ia).data.data();
    const double* B = tp.value(ib).data.data();
    if (tp.requires_grad(ia)) gemm_nt_acc(G, B, tp.grad(ia).data(), M, K, N);
    if (tp.requires_grad(ib)) gemm_tn_acc(A, G, tp.grad(ib).data(), M, K, N);
  });
}

Var bmm(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1])
    throw DimensionError("bmm: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
  const std::size_t Bn = as[0], M = as[1], K = as[2], N = bs[2];
  Tensor out({Bn, M, N}, 0.0);
  const double* A = a.value().data.data();
  const double* B = b.value().data.data();
  for (std::size_t bi = 0; bi < Bn; ++bi) {
    const double* Ab = A + bi * M * K;
    const double* Bb = B + bi * K * N;
    double* Ob = out.data.data() + bi * M * N;
    gemm_acc(Ab, Bb, Ob, M, K, N);
  }
  const Ids ia = a.id(), ib = b.id();
  return t.push(std::move(out), {a, b}, [ia, ib, Bn, M, K, N](Tape& tp, Ids self) {
    const double* G = tp.grad(self).data();
    const double* A = tp.value(ia).data.data();
    const double* B = tp.value(ib).data.data();
    const bool ga = tp.requires_grad(ia), gb = tp.requires_grad(ib);
    double* GA = ga ? tp.grad(ia).data() : nullptr;
    double* GB = gb ? tp.grad(ib).data() : nullptr;
    for (std::size_t bi = 0; bi < Bn; ++bi) {
      const double* Gb = G + bi * M * N;
      const double* Ab = A + bi * M * K;
      const double* Bb = B + bi * K * N;
      if (ga) gemm_nt_acc(Gb, Bb, GA + bi * M * K, M, K, N);
      if (gb) gemm_tn_acc(Ab, Gb, GB + bi * K * N, M, K, N);
    }
  });
}

// ---------------------------------------------------------------------------

Var elementwise(Elementwise kind, Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool same = av.shape == bv.shape;
  const bool scalar_b = !same && bv.size() == 1;
  std::vector<std::size_t> map;
  if (!same && !scalar_b) map = broadcast_map(av.shape, bv.shape, "elementwise");
  auto bidx = [&](std::size_t i) { return same ? i : (scalar_b ? 0 : map[i]); };

  Tensor out;
  out.shape = av.shape;
  out.data.resize(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av.data[i], y = bv.data[bidx(i)];
    switch (kind) {
      case Elementwise::Add: out.data[i] = x + y; break;
      case Elementwise::Sub: out.data[i] = x - y; break;
      case Elementwise::Hadamard: out.data[i] = x * y; break;
    }
  }
  const Ids ia = a.id(), ib = b.id();
  return t.push(std::move(out), {a, b},
                [kind, ia, ib, same, scalar_b, map = std::move(map)](Tape& tp, Ids self) {
                  const std::vector<double>& G = tp.grad(self);
                  auto bi = [&](std::size_t i) { return same ? i : (scalar_b ? 0 : map[i]); };
                  if (tp.requires_grad(ia)) {
                    std::vector<double>& GA = tp.grad(ia);
                    if (kind == Elementwise::Hadamard) {
                      const auto& B = tp.value(ib).data;
                      for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i] * B[bi(i)];
                    } else {
                      for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i];
                    }
                  }
                  if (tp.requires_grad(ib)) {
                    std::vector<double>& GB = tp.grad(ib);
                    if (kind == Elementwise::Hadamard) {
                      const auto& A = tp.value(ia).data;
                      for (std::size_t i = 0; i < G.size(); ++i) GB[bi(i)] += G[i] * A[i];
                    } else {
                      const double sgn = kind == Elementwise::Sub ? -1.0 : 1.0;
                      for (std::size_t i = 0; i < G.size(); ++i) GB[bi(i)] += sgn * G[i];
                    }
                  }
                });
}

Var scale(Var a, double s) {
  Tensor out = map_unary(a.value(), [s](double x) { return s * x; });
  const Ids ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia, s](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    auto& GA = tp.grad(ia);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i] += s * G[i];
  });
}

Var mask_mul(Var a, const Tensor& mask) { return hadamard(a, a.tape().constant(mask)); }

Var activation(Activation kind, Var x) {
  Tensor out;
  switch (kind) {
    case Activation::Sigmoid:
      out = map_unary(x.value(), [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
      break;
    case Activation::Relu:
      out = map_unary(x.value(), [](double v) { return v > 0 ? v : 0.0; });
      break;
    case Activation::Gelu:
      // tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
      out = map_unary(x.value(), [](double v) {
        return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
      });
      break;
  }
  const Ids ix = x.id();
  return x.tape().push(std::move(out), {x}, [kind, ix](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    const auto& X = tp.value(ix).data;
    const auto& Y = tp.value(self).data;
    auto& GX = tp.grad(ix);
    for (std::size_t i = 0; i < G.size(); ++i) {
      double d = 0.0;
      switch (kind) {
        case Activation::Sigmoid: d = Y[i] * (1.0 - Y[i]); break;
        case Activation::Relu: d = X[i] > 0 ? 1.0 : 0.0; break;
        case Activation::Gelu: {
          const double v = X[i];
          const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
          d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
          break;
        }
      }
      GX[i] += G[i] * d;
    }
  });
}

// ---------------------------------------------------------------------------

Var softmax_lastdim(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = last_dim(xv.shape), rows = xv.size() / n;
  Tensor out;
  out.shape = xv.shape;
  out.data.resize(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data.data() + r * n;
    double* o = out.data.data() + r * n;
    const double m = *std::max_element(in, in + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (o[j] = std::exp(in[j] - m));
    for (std::size_t j = 0; j < n; ++j) o[j] /= s;
  }
  const Ids ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, n, rows](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    const auto& Y = tp.value(self).data;
    auto& GX = tp.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += G[r * n + j] * Y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) GX[r * n + j] += Y[r * n + j] * (G[r * n + j] - dot);
    }
  });
}

Var log_softmax_lastdim(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = last_dim(xv.shape), rows = xv.size() / n;
  Tensor out;
  out.shape = xv.shape;
  out.data.resize(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data.data() + r * n;
    double* o = out.data.data() + r * n;
    const double m = *std::max_element(in, in + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(in[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lse;
  }
  const Ids ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, n, rows](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    const auto& Y = tp.value(self).data;
    auto& GX = tp.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += G[r * n + j];
      for (std::size_t j = 0; j < n; ++j) GX[r * n + j] += G[r * n + j] - std::exp(Y[r * n + j]) * gs;
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
  const Tensor& xv = x.value();
  const std::size_t C = last_dim(xv.shape), rows = xv.size() / C;
  if (gain.shape() != Shape{C} || bias.shape() != Shape{C})
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(C) + "], got " +
                         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  Tensor out;
  out.shape = xv.shape;
  out.data.resize(xv.size());
  std::vector<double> xhat(xv.size()), inv(rows);
  const auto& g = gain.value().data;
  const auto& b = bias.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data.data() + r * C;
    double mean = 0.0;
    for (std::size_t c = 0; c < C; ++c) mean += in[c];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<double>(C);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < C; ++c) {
      xhat[r * C + c] = (in[c] - mean) * inv[r];
      out.data[r * C + c] = xhat[r * C + c] * g[c] + b[c];
    }
  }
  const Ids ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().push(std::move(out), {x, gain, bias},
                       [ix, ig, ib, C, rows, xhat = std::move(xhat), inv = std::move(inv)](Tape& tp, Ids self) {
                         const auto& G = tp.grad(self);
                         if (tp.requires_grad(ig)) {
                           auto& GG = tp.grad(ig);
                           for (std::size_t k = 0; k < G.size(); ++k) GG[k % C] += G[k] * xhat[k];
                         }
                         if (tp.requires_grad(ib)) {
                           auto& GB = tp.grad(ib);
                           for (std::size_t k = 0; k < G.size(); ++k) GB[k % C] += G[k];
                         }
                         if (tp.requires_grad(ix)) {
                           const auto& g = tp.value(ig).data;
                           auto& GX = tp.grad(ix);
                           const double Cd = static_cast<double>(C);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double s1 = 0.0, s2 = 0.0;
                             for (std::size_t c = 0; c < C; ++c) {
                               const double dxh = G[r * C + c] * g[c];
                               s1 += dxh;
                               s2 += dxh * xhat[r * C + c];
                             }
                             for (std::size_t c = 0; c < C; ++c) {
                               const double dxh = G[r * C + c] * g[c];
                               GX[r * C + c] += inv[r] / Cd * (Cd * dxh - s1 - xhat[r * C + c] * s2);
                             }
                           }
                         }
                       });
}

static Var reduce_axis(Var x, std::size_t axis, bool mean) {
  const Shape s = x.shape();
  if (axis >= s.size())
    throw DimensionError("reduce: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const double f = mean ? 1.0 / static_cast<double>(n) : 1.0;
  Tensor out(drop_axis(s, axis), 0.0);
  const auto& X = x.value().data;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out.data[o * inner + i] += X[(o * n + k) * inner + i];
  if (mean)
    for (double& v : out.data) v *= f;
  const Ids ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, outer, n, inner, f](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    auto& GX = tp.grad(ix);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) GX[(o * n + k) * inner + i] += f * G[o * inner + i];
  });
}

Var mean_axis(Var x, std::size_t axis) { return reduce_axis(x, axis, true); }
Var sum_axis(Var x, std::size_t axis) { return reduce_axis(x, axis, false); }

Var sum_all(Var x) {
  double s = 0.0;
  for (double v : x.value().data) s += v;
  const Ids ix = x.id();
  return x.tape().push(Tensor::scalar(s), {x}, [ix](Tape& tp, Ids self) {
    const double g = tp.grad(self)[0];
    for (double& v : tp.grad(ix)) v += g;
  });
}

Var mean_all(Var x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.size())); }

Var cosine_lastdim(Var a, Var b, double eps) {
  Tape& t = same_tape(a, b);
  if (a.shape() != b.shape())
    throw DimensionError("cosine: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t D = last_dim(a.shape()), rows = a.size() / D;
  Shape os = a.shape();
  os.pop_back();
  if (os.empty()) os.push_back(1);
  Tensor out(os, 0.0);
  std::vector<double> na(rows), nb(rows), raw(rows);
  const auto& A = a.value().data;
  const auto& B = b.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t k = 0; k < D; ++k) {
      dot += A[r * D + k] * B[r * D + k];
      sa += A[r * D + k] * A[r * D + k];
      sb += B[r * D + k] * B[r * D + k];
    }
    na[r] = std::sqrt(sa);
    nb[r] = std::sqrt(sb);
    raw[r] = dot / (std::max(na[r], eps) * std::max(nb[r], eps));
    out.data[r] = std::clamp(raw[r], -1.0, 1.0);
  }
  const Ids ia = a.id(), ib = b.id();
  return t.push(std::move(out), {a, b},
                [ia, ib, D, rows, eps, na = std::move(na), nb = std::move(nb), raw = std::move(raw)](Tape& tp,
                                                                                                  Ids self) {
                  const auto& G = tp.grad(self);
                  const auto& A = tp.value(ia).data;
                  const auto& B = tp.value(ib).data;
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double da = std::max(na[r], eps), db = std::max(nb[r], eps);
                    const double g = G[r];
                    // d raw / d a = b/(da db) - raw a/|a|^2 when |a| > eps; only the first term otherwise.
                    if (tp.requires_grad(ia)) {
                      auto& GA = tp.grad(ia);
                      const double ca = na[r] > eps ? raw[r] / (na[r] * na[r]) : 0.0;
                      for (std::size_t k = 0; k < D; ++k)
                        GA[r * D + k] += g * (B[r * D + k] / (da * db) - ca * A[r * D + k]);
                    }
                    if (tp.requires_grad(ib)) {
                      auto& GB = tp.grad(ib);
                      const double cb = nb[r] > eps ? raw[r] / (nb[r] * nb[r]) : 0.0;
                      for (std::size_t k = 0; k < D; ++k)
                        GB[r * D + k] += g * (A[r * D + k] / (da * db) - cb * B[r * D + k]);
                    }
                  }
                });
}

Var l2_normalize_lastdim(Var x, double eps) {
  const Tensor& xv = x.value();
  const std::size_t D = last_dim(xv.shape), rows = xv.size() / D;
  Tensor out;
  out.shape = xv.shape;
  out.data.resize(xv.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < D; ++k) s += xv.data[r * D + k] * xv.data[r * D + k];
    norms[r] = std::sqrt(s);
    const double d = std::max(norms[r], eps);
    for (std::size_t k = 0; k < D; ++k) out.data[r * D + k] = xv.data[r * D + k] / d;
  }
  const Ids ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, D, rows, eps, norms = std::move(norms)](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    const auto& Y = tp.value(self).data;
    auto& GX = tp.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      if (norms[r] > eps) {
        double dot = 0.0;
        for (std::size_t k = 0; k < D; ++k) dot += Y[r * D + k] * G[r * D + k];
        for (std::size_t k = 0; k < D; ++k) GX[r * D + k] += (G[r * D + k] - Y[r * D + k] * dot) / norms[r];
      } else {
        for (std::size_t k = 0; k < D; ++k) GX[r * D + k] += G[r * D + k] / eps;
      }
    }
  });
}

Var entropy_lastdim(Var p) {
  const Tensor& pv = p.value();
  const std::size_t n = last_dim(pv.shape), rows = pv.size() / n;
  Shape os = pv.shape;
  os.pop_back();
  if (os.empty()) os.push_back(1);
  Tensor out(os, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double h = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double q = pv.data[r * n + j];
      if (q > 0) h -= q * std::log(q);
    }
    out.data[r] = h;
  }
  const Ids ip = p.id();
  return p.tape().push(std::move(out), {p}, [ip, n, rows](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    const auto& P = tp.value(ip).data;
    auto& GP = tp.grad(ip);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) {
        const double q = P[r * n + j];
        if (q > 0) GP[r * n + j] += -G[r] * (std::log(q) + 1.0);
      }
  });
}

Var logsumexp_masked_lastdim(Var x, const Tensor& mask) {
  const Tensor& xv = x.value();
  if (mask.shape != xv.shape)
    throw DimensionError("logsumexp_masked: mask " + shape_str(mask.shape) + " vs input " + shape_str(xv.shape));
  const std::size_t n = last_dim(xv.shape), rows = xv.size() / n;
  Shape os = xv.shape;
  os.pop_back();
  if (os.empty()) os.push_back(1);
  Tensor out(os, 0.0);
  std::vector<double> weights(xv.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j)
      if (mask.data[r * n + j] != 0.0) {
        m = std::max(m, xv.data[r * n + j]);
        any = true;
      }
    if (!any) throw InputError("logsumexp_masked: row " + std::to_string(r) + " has no included entries");
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (mask.data[r * n + j] != 0.0) s += (weights[r * n + j] = std::exp(xv.data[r * n + j] - m));
    for (std::size_t j = 0; j < n; ++j) weights[r * n + j] /= s;
    out.data[r] = m + std::log(s);
  }
  const Ids ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, n, rows, weights = std::move(weights)](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    auto& GX = tp.grad(ix);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) GX[r * n + j] += G[r] * weights[r * n + j];
  });
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.shape[0] != labels.size())
    throw DimensionError("cross_entropy: logits " + shape_str(lv.shape) + " vs " + std::to_string(labels.size()) +
                         " labels");
  const std::size_t N = lv.shape[0], K = lv.shape[1];
  std::vector<double> probs(lv.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < N; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= K)
      throw InputError("cross_entropy: label " + std::to_string(labels[r]) + " out of range");
    const double* in = lv.data.data() + r * K;
    const double m = *std::max_element(in, in + K);
    double s = 0.0;
    for (std::size_t j = 0; j < K; ++j) s += (probs[r * K + j] = std::exp(in[j] - m));
    for (std::size_t j = 0; j < K; ++j) probs[r * K + j] /= s;
    loss += m + std::log(s) - in[labels[r]];
  }
  loss /= static_cast<double>(N);
  const Ids il = logits.id();
  return logits.tape().push(Tensor::scalar(loss), {logits},
                            [il, N, K, labels, probs = std::move(probs)](Tape& tp, Ids self) {
                              const double g = tp.grad(self)[0] / static_cast<double>(N);
                              auto& GL = tp.grad(il);
                              for (std::size_t r = 0; r < N; ++r)
                                for (std::size_t j = 0; j < K; ++j)
                                  GL[r * K + j] +=
                                      g * (probs[r * K + j] - (static_cast<int>(j) == labels[r] ? 1.0 : 0.0));
                            });
}

// ---------------------------------------------------------------------------

Var depthwise_conv1d(Var x, Var kernel) {
  Tape& t = same_tape(x, kernel);
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  if (xs.size() != 2 && xs.size() != 3)
    throw DimensionError("depthwise_conv1d: input must be [T, C] or [T, N, C], got " + shape_str(xs));
  if (ks.size() != 2 || ks[0] != xs.back())
    throw DimensionError("depthwise_conv1d: kernel " + shape_str(ks) + " does not match input " + shape_str(xs));
  const std::size_t k = ks[1];
  if (k % 2 == 0) throw ConfigError("depthwise_conv1d: kernel size must be odd, got " + std::to_string(k));
  const std::size_t T = xs[0], C = xs.back(), N = xs.size() == 3 ? xs[1] : 1;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t frame = N * C;
  Tensor out(xs, 0.0);
  const auto& X = x.value().data;
  const auto& W = kernel.value().data;
  for (std::size_t tt = 0; tt < T; ++tt)
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt) + static_cast<std::ptrdiff_t>(j) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
          out.data[tt * frame + n * C + c] += W[c * k + j] * X[static_cast<std::size_t>(src) * frame + n * C + c];
    }
  const Ids ix = x.id(), iw = kernel.id();
  return t.push(std::move(out), {x, kernel}, [ix, iw, T, N, C, k, pad, frame](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    const auto& X = tp.value(ix).data;
    const auto& W = tp.value(iw).data;
    const bool gx = tp.requires_grad(ix), gw = tp.requires_grad(iw);
    double* GX = gx ? tp.grad(ix).data() : nullptr;
    double* GW = gw ? tp.grad(iw).data() : nullptr;
    for (std::size_t tt = 0; tt < T; ++tt)
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt) + static_cast<std::ptrdiff_t>(j) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
        const std::size_t s = static_cast<std::size_t>(src);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const double g = G[tt * frame + n * C + c];
            if (gx) GX[s * frame + n * C + c] += W[c * k + j] * g;
            if (gw) GW[c * k + j] += X[s * frame + n * C + c] * g;
          }
      }
  });
}

Var pointwise_conv1d(Var x, Var w) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (ws.size() != 2 || xs.size() < 2 || xs.back() != ws[0])
    throw DimensionError("pointwise_conv1d: input " + shape_str(xs) + " vs weights " + shape_str(ws));
  return matmul(x, w);
}

// ---------------------------------------------------------------------------

std::size_t topk_count(std::size_t L, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw ConfigError("top-k ratio must lie in (0, 1], got " + std::to_string(ratio));
  if (L == 0) throw DimensionError("top-k over an empty axis");
  const double x = ratio * static_cast<double>(L);
  const double r = std::nearbyint(x);
  const double k = std::abs(x - r) <= 1e-9 * std::max(1.0, x) ? r : std::ceil(x);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, L);
}

TopK topk_mask(Var scores, double ratio) {
  const Tensor& sv = scores.value();
  const std::size_t L = last_dim(sv.shape), rows = sv.size() / L;
  const std::size_t K = topk_count(L, ratio);
  Tensor mask(sv.shape, 0.0);
  std::vector<std::size_t> order(L);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* s = sv.data.data() + r * L;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(K), order.end(),
                      [s](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
    for (std::size_t i = 0; i < K; ++i) mask.data[r * L + order[i]] = 1.0;
  }
  return TopK{std::move(mask), softmax_lastdim(scores)};
}

// ---------------------------------------------------------------------------

Var reshape(Var x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor out(std::move(shape), x.value().data);
  const Ids ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    auto& GX = tp.grad(ix);
    for (std::size_t i = 0; i < G.size(); ++i) GX[i] += G[i];
  });
}

Var permute(Var x, const std::vector<std::size_t>& perm) {
  const Shape s = x.shape();
  const std::size_t rank = s.size();
  if (perm.size() != rank) throw DimensionError("permute: rank mismatch for " + shape_str(s));
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p >= rank || seen[p]) throw DimensionError("permute: invalid axis order for " + shape_str(s));
    seen[p] = true;
  }
  std::vector<std::size_t> in_stride(rank);
  std::size_t st = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_stride[i] = st;
    st *= s[i];
  }
  Shape os(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    os[i] = s[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  const std::size_t n = x.size();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    src[k] = off;
    for (std::size_t r = rank; r-- > 0;) {
      ++idx[r];
      off += stride[r];
      if (idx[r] < os[r]) break;
      off -= stride[r] * os[r];
      idx[r] = 0;
    }
  }
  Tensor out;
  out.shape = os;
  out.data.resize(n);
  const auto& X = x.value().data;
  for (std::size_t k = 0; k < n; ++k) out.data[k] = X[src[k]];
  const Ids ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, src = std::move(src)](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    auto& GX = tp.grad(ix);
    for (std::size_t k = 0; k < G.size(); ++k) GX[src[k]] += G[k];
  });
}

Var concat(const std::vector<Var>& xs, std::size_t axis) {
  if (xs.empty()) throw UsageError("concat of nothing");
  Tape& t = xs.front().tape();
  const Shape s0 = xs.front().shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range for " + shape_str(s0));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> extent;
  std::size_t total = 0;
  for (const Var& v : xs) {
    if (&v.tape() != &t) throw UsageError("concat: operands on different tapes");
    const Shape s = v.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0));
    extent.push_back(s[axis]);
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  Tensor out(os, 0.0);
  std::size_t start = 0;
  for (std::size_t v = 0; v < xs.size(); ++v) {
    const auto& X = xs[v].value().data;
    const std::size_t block = extent[v] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(X.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.data.begin() + static_cast<std::ptrdiff_t>(o * total * inner + start * inner));
    start += extent[v];
  }
  std::vector<Ids> ids;
  for (const Var& v : xs) ids.push_back(v.id());
  return t.push(std::move(out), xs, [ids, extent, outer, inner, total](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    std::size_t start = 0;
    for (std::size_t v = 0; v < ids.size(); ++v) {
      const std::size_t block = extent[v] * inner;
      if (tp.requires_grad(ids[v])) {
        auto& GX = tp.grad(ids[v]);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < block; ++i) GX[o * block + i] += G[o * total * inner + start * inner + i];
      }
      start += extent[v];
    }
  });
}

Var slice(Var x, std::size_t axis, std::size_t offset, std::size_t length) {
  const Shape s = x.shape();
  if (axis >= s.size() || length == 0 || offset + length > s[axis])
    throw DimensionError("slice: [" + std::to_string(offset) + ", +" + std::to_string(length) + ") on axis " +
                         std::to_string(axis) + " of " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape os = s;
  os[axis] = length;
  Tensor out(os, 0.0);
  const auto& X = x.value().data;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(X.begin() + static_cast<std::ptrdiff_t>((o * n + offset) * inner), length * inner,
                out.data.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  const Ids ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, outer, inner, n, offset, length](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    auto& GX = tp.grad(ix);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < length * inner; ++i) GX[(o * n + offset) * inner + i] += G[o * length * inner + i];
  });
}

Var repeat_leading(Var x, std::size_t n) {
  if (n == 0) throw DimensionError("repeat_leading: count must be positive");
  Shape os{n};
  os.insert(os.end(), x.shape().begin(), x.shape().end());
  const std::size_t block = x.size();
  Tensor out(os, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    std::copy(x.value().data.begin(), x.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(r * block));
  const Ids ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, n, block](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    auto& GX = tp.grad(ix);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < block; ++i) GX[i] += G[r * block + i];
  });
}

Var broadcast_to(Var x, const Shape& shape) {
  std::vector<std::size_t> map = broadcast_map(shape, x.shape(), "broadcast_to");
  Tensor out(shape, 0.0);
  const auto& X = x.value().data;
  for (std::size_t i = 0; i < map.size(); ++i) out.data[i] = X[map[i]];
  const Ids ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, map = std::move(map)](Tape& tp, Ids self) {
    const auto& G = tp.grad(self);
    auto& GX = tp.grad(ix);
    for (std::size_t i = 0; i < G.size(); ++i) GX[map[i]] += G[i];
  });
}

}  // namespace caeav
