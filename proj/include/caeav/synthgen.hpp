#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "caeav/case.hpp"
#include "caeav/rng.hpp"

namespace caeav {

/// Synthetic audio-visual episodes with known alignment.
///
///  aligned   - both tracks show the event class on every frame.
///  offscreen - for one contiguous span the camera shows a distractor class while
///              the audio keeps playing the event class.
///  dubbed    - the audio track carries another class on every frame.
///
/// Tokens are class prototypes (fixed random unit vectors per class and
/// modality) plus isotropic Gaussian noise. Caption tokens encode the majority
/// class of each track in a separate caption space shared by both modalities.
enum class Scenario { Aligned = 0, Offscreen = 1, Dubbed = 2 };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct GenConfig {
  std::size_t n_classes = 6;
  std::size_t frames = 8;          ///< T
  std::size_t tokens_visual = 16;  ///< L_v
  std::size_t tokens_audio = 8;    ///< L_a
  std::size_t c_visual = 32;
  std::size_t c_audio = 32;
  std::size_t c_text = 24;
  std::size_t caption_tokens = 4;  ///< L_c
  double noise_sigma = 0.1;
  double misalign_fraction = 0.5;
  std::size_t offscreen_span = 0;  ///< frames of the off-screen cut; 0 selects max(1, (T-1)/2)
  std::uint64_t seed = 0;

  std::size_t resolved_offscreen_span() const;
  void validate() const;
  bool operator==(const GenConfig&) const = default;
};

struct Episode {
  Tensor visual;  ///< [T, L_v, C_v]
  Tensor audio;   ///< [T, L_a, C_a]
  std::vector<int> event_class;
  std::vector<int> visual_class;
  std::vector<int> audio_class;
  std::vector<std::uint8_t> aligned;
  std::int64_t video_id = 0;
  Scenario scenario = Scenario::Aligned;
  CaptionBank captions;

  std::size_t frames() const { return event_class.size(); }
};

struct ClassPrototypes {
  Tensor visual;   ///< [K, C_v], unit rows
  Tensor audio;    ///< [K, C_a], unit rows
  Tensor caption;  ///< [K, L_c, C_t], unit rows
};

/// Deterministic in cfg.seed alone.
ClassPrototypes make_prototypes(const GenConfig& cfg);

/// Draw order: episode-level choices, then per frame the visual tokens followed
/// by the audio tokens, token-major then channel. Throws ConfigError when
/// class_id is out of range.
Episode gen_episode(const GenConfig& cfg, const ClassPrototypes& protos, int class_id, Scenario scenario, Rng& rng,
                    std::int64_t video_id);

/// Caption tokens for the majority class of each track, plus noise.
CaptionBank gen_caption_bank(const Episode& ep, const GenConfig& cfg, const ClassPrototypes& protos, Rng& rng);

struct Split {
  std::vector<Episode> train;
  std::vector<Episode> test;
};

/// round(f n) misaligned episodes per split, half off-screen (rounded up) and half
/// dubbed; classes assigned round-robin so every class count is within one.
Split make_splits(const GenConfig& cfg, std::size_t n_train, std::size_t n_test, double misalign_fraction);

struct Dataset {
  GenConfig config;
  std::vector<Episode> episodes;
};

/// "CAEAVDS1" | u64 version | GenConfig fields | u64 count | episodes, all
/// little-endian (f64 payloads, i64 labels). Round-trips bit-exactly.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

bool episodes_bit_equal(const Episode& a, const Episode& b);

}  // namespace caeav
