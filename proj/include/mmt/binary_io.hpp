#pragma once

// Little-endian scalar IO shared by the checkpoint and feature-store formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "mmt/errors.hpp"

namespace mmt {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("unexpected end of binary file");
  return value;
}

inline void write_u32(std::ostream& out, std::uint32_t v) { write_pod(out, v); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_pod(out, v); }
inline void write_f32(std::ostream& out, float v) { write_pod(out, v); }
inline void write_f64(std::ostream& out, double v) { write_pod(out, v); }
inline std::uint32_t read_u32(std::istream& in) { return read_pod<std::uint32_t>(in); }
inline std::uint64_t read_u64(std::istream& in) { return read_pod<std::uint64_t>(in); }
inline float read_f32(std::istream& in) { return read_pod<float>(in); }
inline double read_f64(std::istream& in) { return read_pod<double>(in); }

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto n = read_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw DataError("unexpected end of binary file");
  return s;
}

}  // namespace mmt
