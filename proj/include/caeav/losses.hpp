#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "caeav/nn.hpp"

namespace caeav {

/// Linear heads mapping frame means to a common embedding width E.
struct ProjectionHeads {
  Linear visual;          ///< P_v
  Linear audio;           ///< P_a
  Linear visual_caption;  ///< P_vc
  Linear audio_caption;   ///< P_ac

  ProjectionHeads() = default;
  ProjectionHeads(const std::string& name, std::size_t c_visual, std::size_t c_audio, std::size_t embed, Rng& rng);
  std::size_t embed_dim() const { return visual.out_features(); }
  void collect(ParamList& out);
};

struct LossWeights {
  double alpha = 0.10;
  double beta = 0.05;
  double gamma = 0.003;
  int gamma_warmup_epochs = 5;
  double tau = 0.07;
  int entropy_sign = -1;  ///< -1 reproduces the printed regularizer; +1 penalizes entropy

  /// 0 strictly before the warm-up epoch, gamma from it on.
  double gamma_effective(int epoch) const { return epoch < gamma_warmup_epochs ? 0.0 : gamma; }
};

/// Caption InfoNCE with within-video negatives removed. Row t of the softmax runs
/// over its own caption plus the captions of frames from other videos. Inputs are
/// raw embeddings [N, E]; they are l2-normalized here.
Var loss_infonce_cap(Var z_modality, Var z_caption, const std::vector<std::int64_t>& video_id, double tau);

/// 1 - mean_t <z_v, z_a> over l2-normalized rows; in [0, 2].
Var loss_va(Var z_visual, Var z_audio);

/// sign * mean_t (H(p_v,t) + H(p_a,t)). Rows must be distributions (sum 1 +- 1e-9).
Var loss_entropy(Var soft_visual, Var soft_audio, int sign);

struct LossTerms {
  Var task;
  Var cap_visual;
  Var cap_audio;
  Var va;
  Var entropy;
};

/// task + alpha (cap_v + cap_a) + beta va + gamma_eff(epoch) entropy. Any term may
/// be an empty Var, in which case it contributes nothing.
Var loss_total(const LossTerms& terms, const LossWeights& w, int epoch);

}  // namespace caeav
