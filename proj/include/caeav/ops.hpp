#pragma once

#include <cstddef>
#include <vector>

#include "caeav/tape.hpp"

namespace caeav {

inline constexpr double kCosineEps = 1e-8;
inline constexpr double kLayerNormEps = 1e-5;

// --- linear algebra -------------------------------------------------------

/// a[..., M, K] x b[K, N] -> [..., M, N]; leading axes of `a` are folded into rows.
Var matmul(Var a, Var b);
/// Batched product a[B, M, K] x b[B, K, N] -> [B, M, N].
Var bmm(Var a, Var b);

// --- elementwise ----------------------------------------------------------

enum class Elementwise { Add, Sub, Hadamard };

/// `b` may have the same shape as `a` or broadcast into it: after left-padding
/// with ones, every extent of `b` must be 1 or equal to that of `a`.
Var elementwise(Elementwise kind, Var a, Var b);
inline Var add(Var a, Var b) { return elementwise(Elementwise::Add, a, b); }
inline Var sub(Var a, Var b) { return elementwise(Elementwise::Sub, a, b); }
inline Var hadamard(Var a, Var b) { return elementwise(Elementwise::Hadamard, a, b); }
Var scale(Var a, double s);
/// Multiplies by a constant 0/1 (or any) tensor; no gradient flows to the mask.
Var mask_mul(Var a, const Tensor& mask);

enum class Activation { Sigmoid, Relu, Gelu };
Var activation(Activation kind, Var x);
inline Var sigmoid(Var x) { return activation(Activation::Sigmoid, x); }
inline Var relu(Var x) { return activation(Activation::Relu, x); }
inline Var gelu(Var x) { return activation(Activation::Gelu, x); }

// --- reductions and normalization -----------------------------------------

Var softmax_lastdim(Var x);
Var log_softmax_lastdim(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps);
Var mean_axis(Var x, std::size_t axis);
Var sum_axis(Var x, std::size_t axis);
Var sum_all(Var x);
Var mean_all(Var x);
/// <a,b> / (max(|a|,eps) max(|b|,eps)) over the last axis, clamped to [-1, 1].
/// A zero vector yields similarity 0.
Var cosine_lastdim(Var a, Var b, double eps = kCosineEps);
/// x / max(|x|, eps) over the last axis.
Var l2_normalize_lastdim(Var x, double eps = kCosineEps);
/// -sum p log p over the last axis, with 0 log 0 = 0.
Var entropy_lastdim(Var p);
/// log sum_{j: mask=1} exp(x_j) over the last axis. Each row needs one included entry.
Var logsumexp_masked_lastdim(Var x, const Tensor& mask);
/// Mean negative log-likelihood of `labels` under softmax(logits[N, K]).
Var cross_entropy(Var logits, const std::vector<int>& labels);

// --- convolution ----------------------------------------------------------

/// Per-channel convolution along axis 0 of x[T, C] or x[T, N, C] with
/// kernel[C, k], k odd, zero padding (k-1)/2 ("same" length). Tap j reads
/// time t + j - (k-1)/2.
Var depthwise_conv1d(Var x, Var kernel);
/// Per-timestep channel mixing x[T, C_in] (or [T, N, C_in]) x w[C_in, C_out].
Var pointwise_conv1d(Var x, Var w);

// --- selection ------------------------------------------------------------

struct TopK {
  Tensor mask;  ///< [T, L] with exactly K ones per row
  Var soft;     ///< softmax of the scores per row
};

/// K = ceil(ratio * L) computed on the decimal value of ratio (so 0.7 * 10 gives 7).
std::size_t topk_count(std::size_t L, double ratio);
/// Hard per-row Top-K of scores[T, L]; ties go to the lower token index.
TopK topk_mask(Var scores, double ratio);

// --- layout ---------------------------------------------------------------

Var reshape(Var x, Shape shape);
Var permute(Var x, const std::vector<std::size_t>& perm);
Var concat(const std::vector<Var>& xs, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t offset, std::size_t length);
/// Stacks `n` copies of x along a new leading axis.
Var repeat_leading(Var x, std::size_t n);
/// Expands x to `shape` under the elementwise broadcasting rule.
Var broadcast_to(Var x, const Shape& shape);

}  // namespace caeav
