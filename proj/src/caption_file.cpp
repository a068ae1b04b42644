#include "caeav/caption_file.hpp"

#include <fstream>

#include "caeav/binio.hpp"
#include "caeav/errors.hpp"

namespace caeav {

static constexpr char kMagic[9] = "CAEAVCAP";
static constexpr std::uint64_t kVersion = 1;

void save_caption_file(const std::string& path, const CaptionTable& table) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot open " + path + " for writing");
  binio::write_magic(os, kMagic);
  binio::write_u64(os, kVersion);
  binio::write_u64(os, table.size());
  for (const auto& [id, bank] : table) {
    if (bank.visual.rank() != 2 || bank.visual.shape != bank.audio.shape)
      throw InputError("caption file: video " + std::to_string(id) + " needs equal [L_c, C_t] matrices");
    binio::write_i64(os, id);
    binio::write_u64(os, bank.visual.shape[0]);
    binio::write_u64(os, bank.visual.shape[1]);
    binio::write_f64s(os, bank.visual.data);
    binio::write_f64s(os, bank.audio.data);
  }
  if (!os) throw InputError("write failed for " + path);
}

CaptionTable load_caption_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open caption file " + path);
  binio::expect_magic(is, kMagic, "caption");
  if (binio::read_u64(is) != kVersion) throw VersionError("unsupported caption file version in " + path);
  const std::uint64_t count = binio::read_u64(is);
  CaptionTable table;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::int64_t id = binio::read_i64(is);
    const std::uint64_t lc = binio::read_u64(is), ct = binio::read_u64(is);
    if (lc == 0 || ct == 0) throw InputError("caption file: empty caption for video " + std::to_string(id));
    if (lc * ct > (1u << 24)) throw InputError("caption file: implausible caption size");
    CaptionBank bank;
    bank.visual = Tensor({lc, ct}, binio::read_f64s(is, lc * ct));
    bank.audio = Tensor({lc, ct}, binio::read_f64s(is, lc * ct));
    if (!table.emplace(id, std::move(bank)).second)
      throw InputError("caption file: duplicate video id " + std::to_string(id));
  }
  return table;
}

}  // namespace caeav
