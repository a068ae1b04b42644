#pragma once

#include <string>

#include "caeav/nn.hpp"

namespace caeav {

/// Cross-modal agreement-guided spatio-temporal enrichment.
///
/// Per frame, token-mean prototypes of both modalities are projected into a
/// shared space of width D; their cosine g biases a two-way softmax that mixes a
/// spatial branch (separable attention within the frame) and a temporal branch
/// (depthwise + pointwise convolution along time). The mixture is injected
/// residually into the Top-K highest-energy tokens of each frame only.
struct CasteConfig {
  std::size_t c_visual = 32;
  std::size_t c_audio = 32;
  std::size_t shared_dim = 0;  ///< D; 0 selects min(C_v, C_a) / 2
  std::size_t mlp_hidden = 0;  ///< 0 selects 2 D
  double rho = 0.3;
  std::size_t conv_k = 3;
  double gate_init = 0.1;  ///< initial value of gamma_sp, gamma_tm and gamma

  std::size_t resolved_shared_dim() const;
  std::size_t resolved_mlp_hidden() const;
  /// Throws ConfigError unless rho in (0, 1], conv_k odd, D >= 1.
  void validate() const;
};

struct AgreementGateParams {
  Linear proj_visual;  ///< C_v -> D
  Linear proj_audio;   ///< C_a -> D
  Linear mlp_in;       ///< 4D -> hidden
  Linear mlp_out;      ///< hidden -> 2

  AgreementGateParams() = default;
  AgreementGateParams(const std::string& name, const CasteConfig& cfg, Rng& rng);
  void collect(ParamList& out);
};

struct SpatialParams {
  Parameter w_input;  ///< [C, 1]
  Parameter w_key;    ///< [C, C]
  Parameter w_value;  ///< [C, C]
  Parameter w_out;    ///< [C, C]
  Parameter gamma;
  LayerNormParams norm;

  SpatialParams() = default;
  SpatialParams(const std::string& name, std::size_t channels, double gate_init, Rng& rng);
  void collect(ParamList& out);
};

struct TemporalParams {
  Parameter depthwise;  ///< [C, k]
  Parameter pointwise;  ///< [C, C]
  Parameter gamma;
  LayerNormParams norm;

  TemporalParams() = default;
  TemporalParams(const std::string& name, std::size_t channels, std::size_t k, double gate_init, Rng& rng);
  void collect(ParamList& out);
};

/// Enrichment and injection parameters of one modality.
struct CasteBranchParams {
  SpatialParams spatial;
  TemporalParams temporal;
  Parameter inject_gamma;

  CasteBranchParams() = default;
  CasteBranchParams(const std::string& name, std::size_t channels, const CasteConfig& cfg, Rng& rng);
  void collect(ParamList& out);
};

struct CasteLayerParams {
  AgreementGateParams gate;
  CasteBranchParams visual;
  CasteBranchParams audio;

  CasteLayerParams() = default;
  CasteLayerParams(const std::string& name, const CasteConfig& cfg, Rng& rng);
  void collect(ParamList& out);
  /// Sets gamma_sp, gamma_tm and gamma of both branches.
  void set_gates(double value);
};

struct Prototypes {
  Var visual;  ///< [T, C_v]
  Var audio;   ///< [T, C_a]
};

struct AgreementOutput {
  Var g;     ///< [T], cosine agreement in [-1, 1]
  Var w_sp;  ///< [T]
  Var w_tm;  ///< [T], w_sp + w_tm = 1
};

struct InjectionOutput {
  Var x;        ///< injected stream, same shape as input
  Var soft;     ///< [T, L] softmax over token saliency
  Tensor mask;  ///< [T, L] Top-K selection
};

struct CasteOutput {
  Var visual;
  Var audio;
  AgreementOutput gates;
  Var soft_visual;
  Var soft_audio;
  Tensor mask_visual;
  Tensor mask_audio;
};

Prototypes compute_prototypes(Var v, Var a);
AgreementOutput agreement_gate(Tape& t, Var v_proto, Var a_proto, AgreementGateParams& p);
Var spatial_enrich(Tape& t, Var x, SpatialParams& p);
Var temporal_enrich(Tape& t, Var x, TemporalParams& p);
/// w_sp * x_sp + w_tm * x_tm, saliency on that mixture before gamma, then
/// x + gamma * (mix masked to the Top-K tokens of each frame).
InjectionOutput selective_inject(Tape& t, Var x, Var x_sp, Var x_tm, const AgreementOutput& gates, Var gamma,
                                 double rho);
/// Full module for one layer; a single agreement gate is shared by both modalities.
CasteOutput caste_forward(Tape& t, Var v, Var a, CasteLayerParams& p, const CasteConfig& cfg);

}  // namespace caeav
