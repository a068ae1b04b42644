#include "caeav/losses.hpp"

#include <cmath>

#include "caeav/errors.hpp"

namespace caeav {

ProjectionHeads::ProjectionHeads(const std::string& name, std::size_t c_visual, std::size_t c_audio,
                                 std::size_t embed, Rng& rng)
    : visual(name + ".visual", c_visual, embed, rng),
      audio(name + ".audio", c_audio, embed, rng),
      visual_caption(name + ".visual_caption", c_visual, embed, rng),
      audio_caption(name + ".audio_caption", c_audio, embed, rng) {}

void ProjectionHeads::collect(ParamList& out) {
  visual.collect(out);
  audio.collect(out);
  visual_caption.collect(out);
  audio_caption.collect(out);
}

Var loss_infonce_cap(Var z_m, Var z_c, const std::vector<std::int64_t>& video_id, double tau) {
  if (!(tau > 0)) throw ConfigError("InfoNCE temperature must be positive");
  const Shape s = z_m.shape();
  if (s.size() != 2 || z_c.shape() != s || video_id.size() != s[0])
    throw DimensionError("InfoNCE: embeddings " + shape_str(s) + " / " + shape_str(z_c.shape()) + " with " +
                         std::to_string(video_id.size()) + " video ids");
  const std::size_t N = s[0];
  Var zm = l2_normalize_lastdim(z_m);
  Var zc = l2_normalize_lastdim(z_c);
  Var logits = scale(matmul(zm, permute(zc, {1, 0})), 1.0 / tau);  // [N, N]

  Tensor allowed({N, N}, 0.0), diag({N, N}, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      if (i == j || video_id[i] != video_id[j]) allowed.data[i * N + j] = 1.0;
      if (i == j) diag.data[i * N + j] = 1.0;
    }
  Var positive = sum_axis(mask_mul(logits, diag), 1);
  Var lse = logsumexp_masked_lastdim(logits, allowed);
  return mean_all(sub(lse, positive));
}

Var loss_va(Var z_v, Var z_a) {
  if (z_v.shape() != z_a.shape() || z_v.shape().size() != 2)
    throw DimensionError("L_va: embeddings " + shape_str(z_v.shape()) + " vs " + shape_str(z_a.shape()));
  Var agreement = mean_all(sum_axis(hadamard(l2_normalize_lastdim(z_v), l2_normalize_lastdim(z_a)), 1));
  Tape& t = z_v.tape();
  return sub(t.constant(Tensor::scalar(1.0)), agreement);
}

static void check_distribution_rows(const Tensor& p, const char* which) {
  const std::size_t n = p.shape.back(), rows = p.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    bool nan = false;
    for (std::size_t j = 0; j < n; ++j) {
      const double q = p.data[r * n + j];
      nan = nan || std::isnan(q);
      if (q < 0 || std::isinf(q))
        throw InputError(std::string("entropy: ") + which + " row " + std::to_string(r) + " has an invalid entry");
      s += q;
    }
    // NaN rows flow into a NaN loss, which the training loop reports with a batch dump
    if (!nan && std::abs(s - 1.0) > 1e-9)
      throw InputError(std::string("entropy: ") + which + " row " + std::to_string(r) + " sums to " +
                       std::to_string(s));
  }
}

Var loss_entropy(Var soft_v, Var soft_a, int sign) {
  if (sign != 1 && sign != -1) throw ConfigError("entropy sign must be +1 or -1");
  if (soft_v.shape().size() != 2 || soft_a.shape().size() != 2 || soft_v.shape()[0] != soft_a.shape()[0])
    throw DimensionError("entropy: distributions " + shape_str(soft_v.shape()) + " and " +
                         shape_str(soft_a.shape()) + " must be [N, L] with equal N");
  check_distribution_rows(soft_v.value(), "visual");
  check_distribution_rows(soft_a.value(), "audio");
  Var h = add(entropy_lastdim(soft_v), entropy_lastdim(soft_a));
  return scale(mean_all(h), static_cast<double>(sign));
}

Var loss_total(const LossTerms& terms, const LossWeights& w, int epoch) {
  if (!terms.task.valid()) throw UsageError("loss_total: task loss is required");
  Var total = terms.task;
  auto accumulate = [&](const Var& term, double weight) {
    if (term.valid() && weight != 0.0) total = add(total, scale(term, weight));
  };
  accumulate(terms.cap_visual, w.alpha);
  accumulate(terms.cap_audio, w.alpha);
  accumulate(terms.va, w.beta);
  accumulate(terms.entropy, w.gamma_effective(epoch));
  return total;
}

}  // namespace caeav
