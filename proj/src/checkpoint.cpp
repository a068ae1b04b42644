#include "caeav/checkpoint.hpp"

#include <fstream>

#include "caeav/binio.hpp"
#include "caeav/errors.hpp"

namespace caeav {

static constexpr char kMagic[9] = "CAEAVCKP";

void save_checkpoint(const std::string& path, const std::vector<const Parameter*>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot open " + path + " for writing");
  binio::write_magic(os, kMagic);
  binio::write_u64(os, kCheckpointVersion);
  binio::write_u64(os, params.size());
  for (const Parameter* p : params) {
    binio::write_string(os, p->name);
    binio::write_u64(os, p->value.rank());
    for (auto d : p->value.shape) binio::write_u64(os, d);
    binio::write_u64(os, p->frozen ? 1 : 0);
    binio::write_f64s(os, p->value.data);
  }
  if (!os) throw InputError("write failed for " + path);
}

void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
  save_checkpoint(path, std::vector<const Parameter*>(params.begin(), params.end()));
}

std::vector<Parameter> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint " + path);
  binio::expect_magic(is, kMagic, "checkpoint");
  const auto version = binio::read_u64(is);
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  const auto count = binio::read_u64(is);
  std::vector<Parameter> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = binio::read_string(is);
    const auto rank = binio::read_u64(is);
    if (rank > 8) throw InputError("checkpoint entry " + name + " has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = binio::read_u64(is);
    const bool frozen = binio::read_u64(is) != 0;
    auto data = binio::read_f64s(is, shape_numel(shape));
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)), frozen);
  }
  return out;
}

void load_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
  auto stored = read_checkpoint(path);
  if (stored.size() != params.size())
    throw VersionError("checkpoint has " + std::to_string(stored.size()) + " parameters, model has " +
                       std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& s = stored[i];
    Parameter& p = *params[i];
    if (s.name != p.name || s.value.shape != p.value.shape || s.frozen != p.frozen)
      throw VersionError("checkpoint entry " + std::to_string(i) + " (" + s.name + " " + shape_str(s.value.shape) +
                         ") does not match model parameter " + p.name + " " + shape_str(p.value.shape));
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = std::move(stored[i].value);
}

}  // namespace caeav
