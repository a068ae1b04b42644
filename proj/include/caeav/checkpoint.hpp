#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "caeav/tensor.hpp"

namespace caeav {

inline constexpr std::uint64_t kCheckpointVersion = 1;

/// Layout (all little-endian):
///   "CAEAVCKP" | u64 version | u64 count |
///   count x { string name | u64 rank | rank x u64 extent | u64 frozen | numel x f64 }
/// where string = u64 length followed by raw bytes.
void save_checkpoint(const std::string& path, const std::vector<const Parameter*>& params);
void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params);

/// Reads every entry of a checkpoint file.
std::vector<Parameter> read_checkpoint(const std::string& path);

/// Loads values into `params`, which must match the file entry for entry
/// (name, shape, frozen flag). Throws VersionError on any mismatch.
void load_checkpoint(const std::string& path, const std::vector<Parameter*>& params);

}  // namespace caeav
