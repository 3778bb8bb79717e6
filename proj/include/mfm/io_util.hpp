#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "mfm/common.hpp"

namespace mfm::detail {

inline void put_u32_le(std::string& out, std::uint32_t u) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
}

inline void put_u64_le(std::string& out, std::uint64_t u) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
}

inline void put_f32_le(std::string& out, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32_le(out, u);
}

inline void put_f64_le(std::string& out, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  put_u64_le(out, u);
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

inline float get_f32_le(const unsigned char* p) {
  const std::uint32_t u = get_u32_le(p);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

inline double get_f64_le(const unsigned char* p) {
  const std::uint64_t u = get_u64_le(p);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path);
}

}  // namespace mfm::detail
