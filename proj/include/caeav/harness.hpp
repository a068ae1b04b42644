#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "caeav/caption_file.hpp"
#include "caeav/model.hpp"

namespace caeav {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kCodeVersion = "0.1.0";

struct TrainConfig {
  TaskPreset preset = TaskPreset::Synthetic;
  ModelConfig model;
  GenConfig data;
  LossWeights loss;
  double lr0 = 0.2;
  double lr_decay = 0.35;
  int decay_every = 3;
  int epochs = 30;
  std::size_t batch_episodes = 8;
  std::size_t n_train = 96;
  std::size_t n_test = 32;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> ablation_seeds{0, 1, 2, 3, 4};
  std::string caption_file;

  /// lr0 * (1 - lr_decay)^floor(epoch / decay_every)
  double lr(int epoch) const;
  /// Copies the data widths into the model and checks every field.
  void resolve();
  void validate() const;
};

struct PresetValues {
  double lr0, alpha, beta, gamma;
  int warmup;
};
PresetValues preset_values(TaskPreset p);
/// Loads expert counts, loss weights, warm-up and lr0 for the preset.
void apply_preset(TrainConfig& cfg, TaskPreset p);

/// Flat `key = value` text, `#` comments, `schema_version = 1` required.
/// Unknown keys, duplicate keys and malformed values throw ConfigError.
/// A `train.preset` key (or `preset_override`) is applied before the other keys.
TrainConfig parse_config(const std::string& text, std::optional<TaskPreset> preset_override = std::nullopt);
TrainConfig load_config(const std::string& path, std::optional<TaskPreset> preset_override = std::nullopt);
/// Every key with its resolved value, in a fixed order; parse_config inverts it.
std::string config_to_text(const TrainConfig& cfg);
std::vector<std::pair<std::string, std::string>> config_items(const TrainConfig& cfg);

struct EvalMetrics {
  double acc_overall = 0, acc_aligned = 0, acc_misaligned = 0;
  double g_aligned = 0, g_misaligned = 0;
  double w_tm_aligned = 0, w_tm_misaligned = 0;
  std::size_t frames = 0, frames_aligned = 0, frames_misaligned = 0;
};

struct MetricsRecord {
  int epoch = 0;
  double lr = 0, gamma_eff = 0;
  double loss_total = 0, loss_task = 0, loss_cap_visual = 0, loss_cap_audio = 0, loss_va = 0, loss_entropy = 0;
  EvalMetrics train;  ///< collected on the training forward passes of the epoch
};

/// Fixed metrics.csv header.
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);

/// Accumulates frame predictions and gate statistics.
class MetricsAccumulator {
 public:
  void add(const Episode& ep, const ModelOutput& out);
  EvalMetrics finish() const;

 private:
  std::size_t n_[2] = {0, 0}, correct_[2] = {0, 0}, gated_[2] = {0, 0};
  double g_[2] = {0, 0}, wtm_[2] = {0, 0};
};

/// Per-video caption overrides from --caption-file; nullptr entries mean "use the episode's own".
std::vector<const CaptionBank*> resolve_captions(const std::vector<Episode>& eps, const CaptionTable* table,
                                                 std::size_t c_text);

struct TrainResult {
  std::vector<MetricsRecord> history;
  EvalMetrics test;
  std::vector<Tensor> frozen_before;  ///< frozen values at the start, for auditing
};

/// Deterministic SGD training of a model built from cfg. When out_dir is
/// non-empty writes metrics.csv, eval.csv, checkpoint.bin and manifest.json.
/// A non-finite loss throws NumericError after dumping the batch to
/// out_dir/nonfinite_batch.txt.
TrainResult run_train(const TrainConfig& cfg, const std::string& out_dir, Model* trained = nullptr);

/// Evaluates a checkpoint on a dataset without touching parameters.
EvalMetrics run_eval(const TrainConfig& cfg, const std::string& checkpoint, const std::vector<Episode>& episodes);
EvalMetrics evaluate(Model& m, const std::vector<Episode>& episodes,
                     const std::vector<const CaptionBank*>& captions = {});

struct AblationRow {
  std::string group;  ///< grid, location, entropy_sign
  std::string name;
  bool caste = true, case_ = true, losses = true;
  InsertionLocation location = InsertionLocation::BeforeMoe;
  int entropy_sign = -1;
  std::vector<EvalMetrics> per_seed;
  bool finite = true;
};

/// Five on/off grid rows, three insertion locations and both entropy signs over
/// cfg.ablation_seeds. Identical configurations are trained once and shared.
std::vector<AblationRow> run_ablation(const TrainConfig& cfg, const std::vector<std::string>& groups = {});
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0;
  double threshold = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0, numeric = 0;
  std::size_t coords = 0;
  bool passed() const { return max_rel_error < threshold; }
};

struct GradCheckOptions {
  std::string only;        ///< substring filter on check names
  std::string corrupt;     ///< name of a check whose analytic gradient is perturbed (fault injection)
};

std::vector<GradCheckEntry> run_gradcheck(const GradCheckOptions& opts = {});
std::string gradcheck_report(const std::vector<GradCheckEntry>& entries);

}  // namespace caeav
