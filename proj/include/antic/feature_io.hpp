#pragma once

// Per-video feature files: an 8-byte magic, clip_count and D as 64-bit
// little-endian unsigned integers, then clip_count x D little-endian float32
// values in row-major order.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "antic/autograd.hpp"
#include "antic/error.hpp"

namespace antic {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline constexpr std::array<char, 8> kFeatureMagic{'A', 'N', 'T', 'F', 'E', 'A', 'T', '1'};

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError(std::string("truncated input while reading ") + what);
  return v;
}

}  // namespace detail

inline void write_features(std::ostream& out, const Matrix& features) {
  out.write(kFeatureMagic.data(), kFeatureMagic.size());
  detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(features.rows()));
  detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(features.cols()));
  for (Eigen::Index i = 0; i < features.size(); ++i) detail::write_pod<float>(out, static_cast<float>(features.data()[i]));
}

inline Matrix read_features(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kFeatureMagic) throw IoError("feature file: bad magic");
  const auto rows = detail::read_pod<std::uint64_t>(in, "clip_count");
  const auto cols = detail::read_pod<std::uint64_t>(in, "feature dimension");
  if (rows > (1u << 24) || cols > (1u << 20)) throw IoError("feature file: implausible header");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float f = detail::read_pod<float>(in, "feature values");
    if (!std::isfinite(f)) throw NumericError("feature file: non-finite value");
    m.data()[i] = f;
  }
  return m;
}

inline void write_features(const std::string& path, const Matrix& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file " + path);
  write_features(out, features);
}

inline Matrix read_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path);
  return read_features(in);
}

}  // namespace antic
