#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "caeav/case.hpp"
#include "caeav/caste.hpp"
#include "caeav/losses.hpp"
#include "caeav/synthgen.hpp"

namespace caeav {

/// Where CASTE sits relative to the two MoE adapters of a layer (one after the
/// attention sub-block, one after the feed-forward sub-block).
enum class InsertionLocation { BeforeMoe = 1, BetweenMoe = 2, AfterMoe = 3 };

enum class TaskPreset { Avqa, AvsS4, AvsMs3, Ave, Avvp, Synthetic };

std::string to_string(InsertionLocation l);
InsertionLocation location_from_string(const std::string& s);
std::string to_string(TaskPreset p);
TaskPreset preset_from_string(const std::string& s);

struct ExpertCounts {
  std::size_t unimodal;
  std::size_t crossmodal;
};
/// AVQA uses two unimodal and one cross-modal expert; every other task one of each.
ExpertCounts preset_expert_counts(TaskPreset p);

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t c_visual = 32;
  std::size_t c_audio = 32;
  std::size_t c_text = 24;
  std::size_t n_classes = 6;
  std::size_t n_unimodal_experts = 1;
  std::size_t n_crossmodal_experts = 1;
  std::size_t expert_bottleneck = 0;  ///< 0 selects C / 4
  std::size_t ffn_mult = 2;
  std::size_t embed_dim = 64;
  InsertionLocation insertion_location = InsertionLocation::BeforeMoe;
  bool enable_caste = true;
  bool enable_case = true;
  bool enable_aux_losses = true;
  std::vector<std::uint8_t> caste_layer_mask;  ///< empty inserts CASTE in every layer
  double rho = 0.3;
  double rho_case = 0.3;
  std::size_t conv_k = 3;
  std::size_t caste_shared_dim = 0;
  std::size_t caste_mlp_hidden = 0;
  double gate_init = 0.1;       ///< CASTE gamma_sp, gamma_tm, gamma
  double case_gate_init = 0.5;  ///< CASE gamma_v, gamma_a

  CasteConfig caste_config() const;
  CaseConfig case_config() const;
  bool caste_in_layer(std::size_t layer) const;
  void apply_preset(TaskPreset p);
  void validate() const;
};

struct FrozenBlock {
  MhaParams attn;
  LayerNormParams ffn_norm;
  Linear ffn_in;
  Linear ffn_out;

  FrozenBlock() = default;
  FrozenBlock(const std::string& name, std::size_t channels, std::size_t heads, std::size_t ffn_mult, Rng& rng);
  void collect(ParamList& out);
  Var attention(Tape& t, Var x);
  Var feed_forward(Tape& t, Var x);
};

/// Dense softmax router over bottleneck experts. Unimodal experts read the own
/// tokens; cross-modal experts read the frame mean of the partner modality and
/// broadcast over tokens. Up-projections start at zero so a fresh adapter is an
/// exact no-op.
struct MoEAdapter {
  Linear router;
  std::vector<Bottleneck> unimodal;
  std::vector<Bottleneck> crossmodal;

  MoEAdapter() = default;
  MoEAdapter(const std::string& name, std::size_t c_self, std::size_t c_partner, std::size_t n_uni,
             std::size_t n_cross, std::size_t bottleneck, Rng& rng);
  std::size_t experts() const { return unimodal.size() + crossmodal.size(); }
  void collect(ParamList& out);
};

struct MoEOutput {
  Var x;        ///< [T, L, C]
  Var weights;  ///< [T, L, experts], rows sum to 1
};

MoEOutput moe_forward(Tape& t, Var x_self, Var x_partner, MoEAdapter& adapter);

struct LayerParams {
  FrozenBlock block_visual;
  FrozenBlock block_audio;
  MoEAdapter moe_attn_visual;
  MoEAdapter moe_attn_audio;
  MoEAdapter moe_ffn_visual;
  MoEAdapter moe_ffn_audio;
  CasteLayerParams caste;

  LayerParams() = default;
  LayerParams(const std::string& name, const ModelConfig& cfg, Rng& rng);
  void collect(ParamList& out);
};

struct LayerOutput {
  Var visual;
  Var audio;
  std::optional<CasteOutput> caste;
};

LayerOutput layer_forward(Tape& t, Var v, Var a, LayerParams& p, const ModelConfig& cfg, bool use_caste);

struct LayerDiagnostics {
  bool has_caste = false;
  Tensor g, w_sp, w_tm;  ///< [T]
  Tensor mask_visual, mask_audio;
};

struct ModelOutput {
  Var logits;  ///< [T, classes]
  Var visual;  ///< final visual stream (after CASE when enabled)
  Var audio;
  std::optional<CaptionFeatures> captions;
  Var soft_visual;  ///< selection distribution feeding the entropy term, may be empty
  Var soft_audio;
  std::vector<LayerDiagnostics> layers;
  Tensor frame_gate_visual, frame_gate_audio;  ///< empty when CASE is off
  Tensor case_mask_visual, case_mask_audio;
};

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }

  ModelOutput forward(Tape& t, const Tensor& visual, const Tensor& audio, const CaptionBank& captions);

  /// Every parameter in a fixed order (the checkpoint order).
  ParamList parameters();
  ParamList trainable();
  ParamList frozen();

  std::vector<LayerParams>& layers() { return layers_; }
  CaptionParams& caption_params() { return captions_; }
  CaseParams& case_params() { return case_; }
  ProjectionHeads& heads() { return heads_; }
  Linear& classifier() { return classifier_; }

 private:
  ModelConfig cfg_;
  std::vector<LayerParams> layers_;
  CaptionParams captions_;
  CaseParams case_;
  ProjectionHeads heads_;
  Linear classifier_;
};

/// Captions to use for one episode (its own bank unless an override is given).
struct BatchItem {
  const Episode* episode;
  const CaptionBank* captions;
};

struct ObjectiveTerms {
  Var total;
  LossTerms terms;
  std::vector<ModelOutput> outputs;
};

/// Forward over a batch of episodes and the weighted objective: frame-level
/// cross-entropy plus, when auxiliary losses are enabled, both caption InfoNCE
/// terms, the visual-audio consistency term and the entropy term.
ObjectiveTerms model_objective(Tape& t, Model& m, std::span<const BatchItem> batch, const LossWeights& w, int epoch);

}  // namespace caeav
