#pragma once

#include <algorithm>
#include <string>

#include "caeav/attention.hpp"

namespace caeav {

/// Caption-aligned saliency-guided enrichment, applied after the last backbone
/// layer. Captions act as fixed semantic anchors: both caption sequences share
/// one self-attention stage, are projected to the backbone widths and repeated
/// along time; the backbone streams attend to them, exchange information across
/// modalities, and the result is injected into the Top-K tokens of each frame
/// with a strength set by caption/feature agreement.
struct CaseConfig {
  std::size_t c_visual = 32;
  std::size_t c_audio = 32;
  std::size_t c_text = 24;
  std::size_t heads = 2;
  std::size_t bottleneck = 0;  ///< hidden width of the caption bottleneck; 0 selects C_t / 2
  double rho = 0.3;
  std::size_t conv_k = 3;
  double gate_init = 0.1;

  std::size_t resolved_bottleneck() const { return bottleneck ? bottleneck : std::max<std::size_t>(1, c_text / 2); }
  void validate() const;
};

/// Raw caption token sequences of one video, [L_c, C_t] each.
struct CaptionBank {
  Tensor visual;
  Tensor audio;
};

struct Bottleneck {
  Linear down;
  Linear up;

  Bottleneck() = default;
  Bottleneck(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  Var operator()(Tape& t, Var x);
  void collect(ParamList& out);
};

struct CaptionParams {
  MhaParams shared_attn;  ///< one parameter set for both caption branches
  LayerNormParams norm_visual;
  LayerNormParams norm_audio;
  Bottleneck to_visual;
  Bottleneck to_audio;

  CaptionParams() = default;
  CaptionParams(const std::string& name, const CaseConfig& cfg, Rng& rng);
  void collect(ParamList& out);
};

struct TemporalConvParams {
  Parameter depthwise;  ///< [C, k]
  Parameter pointwise;  ///< [C, C]

  TemporalConvParams() = default;
  TemporalConvParams(const std::string& name, std::size_t channels, std::size_t k, Rng& rng);
  Var operator()(Tape& t, Var x);
  void collect(ParamList& out);
};

struct CaseParams {
  MhaParams self_visual, self_audio;          ///< backbone token self-attention
  MhaParams caption_self_visual, caption_self_audio;
  MhaParams caption_cross_visual, caption_cross_audio;
  MhaParams cross_visual, cross_audio;        ///< MHCA across modalities
  Linear visual_from_audio;                   ///< W^{v<-a}: C_a -> C_v
  Linear audio_from_visual;                   ///< W^{a<-v}: C_v -> C_a
  TemporalConvParams temporal_visual, temporal_audio;
  LayerNormParams norm_visual, norm_audio;
  Parameter gamma_visual, gamma_audio;

  CaseParams() = default;
  CaseParams(const std::string& name, const CaseConfig& cfg, Rng& rng);
  void collect(ParamList& out);
  void set_gates(double value);
};

struct CaptionFeatures {
  Var visual;  ///< [T, L_c, C_v], constant along T
  Var audio;   ///< [T, L_c, C_a]
};

struct RefinedStreams {
  Var visual;  ///< [T, L_v, C_v]
  Var audio;   ///< [T, L_a, C_a]
};

struct CaseOutput {
  Var visual;
  Var audio;
  Var soft_visual;
  Var soft_audio;
  Tensor mask_visual;
  Tensor mask_audio;
  Var gate_visual;  ///< [T]
  Var gate_audio;   ///< [T]
};

/// S' = LN(S + MHA(S; shared)) per modality, bottleneck to C_v / C_a, repeat T times.
/// Throws InputError on an empty or non-matrix caption sequence.
CaptionFeatures caption_process(Tape& t, Var captions_visual, Var captions_audio, CaptionParams& p, std::size_t T);

RefinedStreams cross_refine(Tape& t, Var v, Var a, const CaptionFeatures& caps, CaseParams& p);

/// sigmoid(cos(mean_tokens(x), mean_tokens(cap))) per frame.
Var frame_gate(Var refined, Var caption);

/// x + gamma * (gate * LN(refined) * M), M = Top-K of |refined|^2 per frame.
struct CaseInjection {
  Var x;
  Var soft;
  Tensor mask;
};
CaseInjection case_inject(Tape& t, Var x, Var refined, Var gate, LayerNormParams& norm, Var gamma, double rho);

CaseOutput case_forward(Tape& t, Var v, Var a, const CaptionFeatures& caps, CaseParams& p, const CaseConfig& cfg);

}  // namespace caeav
