#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "caeav/errors.hpp"

namespace caeav::binio {

// Little-endian fixed-width encoding for every on-disk format in this project.

inline std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
    return r;
  }
  return v;
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  const std::uint64_t le = to_le(v);
  os.write(reinterpret_cast<const char*>(&le), 8);
}

inline void write_i64(std::ostream& os, std::int64_t v) { write_u64(os, static_cast<std::uint64_t>(v)); }

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void write_f64s(std::ostream& os, const std::vector<double>& vs) {
  for (double v : vs) write_f64(os, v);
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void write_magic(std::ostream& os, const char (&magic)[9]) { os.write(magic, 8); }

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw InputError("unexpected end of file");
  return to_le(v);
}

inline std::int64_t read_i64(std::istream& is) { return static_cast<std::int64_t>(read_u64(is)); }

inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

inline std::vector<double> read_f64s(std::istream& is, std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) v = read_f64(is);
  return out;
}

inline std::string read_string(std::istream& is, std::size_t max_len = 1 << 20) {
  const std::uint64_t n = read_u64(is);
  if (n > max_len) throw InputError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw InputError("unexpected end of file");
  return s;
}

inline void expect_magic(std::istream& is, const char (&magic)[9], const std::string& what) {
  char buf[8];
  if (!is.read(buf, 8) || std::memcmp(buf, magic, 8) != 0) throw VersionError("not a " + what + " file");
}

}  // namespace caeav::binio
