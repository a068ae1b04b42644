#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "caeav/case.hpp"

namespace caeav {

/// Externally encoded caption embeddings, keyed by video id.
///
/// Layout (little-endian): "CAEAVCAP" | u64 version | u64 count |
///   count x { i64 video_id | u64 L_c | u64 C_t | L_c*C_t f64 visual rows | L_c*C_t f64 audio rows }
using CaptionTable = std::map<std::int64_t, CaptionBank>;

void save_caption_file(const std::string& path, const CaptionTable& table);
CaptionTable load_caption_file(const std::string& path);

}  // namespace caeav
