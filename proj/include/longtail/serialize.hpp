#pragma once

#include "longtail/encoder.hpp"
#include "longtail/types.hpp"

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

namespace longtail {

// 64-bit FNV-1a
inline constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr uint64_t kFnvPrime = 0x100000001b3ull;

inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = kFnvOffset) {
  return fnv1a(s.data(), s.size(), h);
}

uint64_t file_checksum(const std::string& path);

// checksum over row-major little-endian float64 bytes
uint64_t mat_checksum(const Mat& m, uint64_t h = kFnvOffset);

// little-endian scalar IO
inline void put_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}

inline void put_f64_le(std::ostream& os, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= uint64_t(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

// Snapshot layout: magic, version, then the eight encoder config fields, all
// little-endian u32, followed by the named float64 arrays in row-major order.
// A "<path>.manifest.json" sidecar lists name -> offset -> shape.
inline constexpr uint32_t kSnapshotMagic = 0x4c54534eu;
inline constexpr uint32_t kSnapshotVersion = 1;

void save_encoder_snapshot(const std::string& path, const EncoderParams& p);
EncoderParams load_encoder_snapshot(const std::string& path);

}  // namespace longtail
