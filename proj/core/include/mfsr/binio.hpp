#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "mfsr/errors.hpp"

namespace mfsr {

// CRC-32 (IEEE 802.3, reflected 0xEDB88320), table-driven.
inline std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = seed ^ 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

// Little-endian scalar plumbing. The in-memory layout on every supported
// target is already little-endian; memcpy keeps it strict-aliasing clean.
inline void write_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32le(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError("truncated file while reading " + what);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void read_exact(std::istream& is, void* dst, std::size_t n, const std::string& what) {
  if (!is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n))) {
    throw DataError("truncated file while reading " + what);
  }
}

// f32 blob: doubles narrowed to IEEE single precision, little-endian, with a
// trailing CRC32 of the payload bytes.
inline void write_f32_blob(std::ostream& os, const double* src, std::size_t n) {
  std::vector<float> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(src[i]);
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(n * sizeof(float)));
  write_u32le(os, crc32(buf.data(), n * sizeof(float)));
}

inline void read_f32_blob(std::istream& is, double* dst, std::size_t n,
                          const std::string& what) {
  std::vector<float> buf(n);
  read_exact(is, buf.data(), n * sizeof(float), what);
  const std::uint32_t want = read_u32le(is, what + " checksum");
  const std::uint32_t got = crc32(buf.data(), n * sizeof(float));
  if (want != got) {
    throw DataError("checksum mismatch in " + what + ": file says " + std::to_string(want) +
                    ", payload hashes to " + std::to_string(got));
  }
  for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<double>(buf[i]);
}

// f64 blob without checksum (checkpoint parameter payloads; the manifest
// carries sizes, and paranoia is cheap to add at the container level).
inline void write_f64_blob(std::ostream& os, const double* src, std::size_t n) {
  static_assert(sizeof(double) == 8);
  os.write(reinterpret_cast<const char*>(src), static_cast<std::streamsize>(n * 8));
}

inline void read_f64_blob(std::istream& is, double* dst, std::size_t n,
                          const std::string& what) {
  read_exact(is, dst, n * 8, what);
}

}  // namespace mfsr
