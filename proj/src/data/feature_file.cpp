// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/data/feature_file.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "avfuse/errors.hpp"

namespace avfuse {

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

void write_feature_file(const FeatureSequence& seq, const std::filesystem::path& path) {
  const Tensor& v = seq.values;
  if (v.rank() != 2) {
    throw DimensionError("feature file: expected a T x d matrix, got " +
                         shape_to_string(v.shape()));
  }
  const std::size_t t = v.shape()[0], d = v.shape()[1];
  if (t > std::numeric_limits<std::uint32_t>::max() ||
      d > std::numeric_limits<std::uint32_t>::max()) {
    throw IoError("feature file: extents exceed u32 range");
  }
  std::vector<unsigned char> bytes(kFeatureMagic, kFeatureMagic + 4);
  bytes.reserve(kFeatureHeaderBytes + 4 * v.numel());
  put_u32(bytes, static_cast<std::uint32_t>(t));
  put_u32(bytes, static_cast<std::uint32_t>(d));
  bytes.push_back(kFeatureDtypeF32);
  for (std::size_t i = 0; i < v.numel(); ++i) {
    const auto f = static_cast<float>(v[i]);
    if (!std::isfinite(f)) {
      throw IoError("feature file: value at index " + std::to_string(i) +
                    " is not representable as a finite binary32");
    }
    put_u32(bytes, std::bit_cast<std::uint32_t>(f));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("feature file: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("feature file: write failed for " + path.string());
}

FeatureSequence read_feature_file(const std::filesystem::path& path, Modality modality) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("feature file: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  if (bytes.size() < kFeatureHeaderBytes) throw IoError("feature file: truncated header" + where);
  if (std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) {
    throw IoError("feature file: bad magic, expected \"AVF1\"" + where);
  }
  const std::uint64_t t = get_u32(bytes.data() + 4);
  const std::uint64_t d = get_u32(bytes.data() + 8);
  const std::uint8_t dtype = bytes[12];
  if (dtype != kFeatureDtypeF32) {
    throw IoError("feature file: unsupported dtype code " + std::to_string(dtype) + where);
  }
  // t, d < 2^32 so the product fits in 64 bits; the byte count may not.
  const std::uint64_t count = t * d;
  if (count > (std::numeric_limits<std::uint64_t>::max() - kFeatureHeaderBytes) / 4 ||
      count > std::numeric_limits<std::size_t>::max() / sizeof(double)) {
    throw IoError("feature file: T*d overflows" + where);
  }
  const std::uint64_t expected = kFeatureHeaderBytes + 4 * count;
  if (bytes.size() < expected) {
    throw IoError("feature file: truncated payload, expected " + std::to_string(expected) +
                  " bytes, found " + std::to_string(bytes.size()) + where);
  }
  if (bytes.size() > expected) {
    throw IoError("feature file: trailing bytes after payload" + where);
  }
  Tensor values(Shape{static_cast<std::size_t>(t), static_cast<std::size_t>(d)});
  const unsigned char* p = bytes.data() + kFeatureHeaderBytes;
  for (std::size_t i = 0; i < count; ++i, p += 4) {
    const float f = std::bit_cast<float>(get_u32(p));
    if (!std::isfinite(f)) {
      throw IoError("feature file: non-finite value at index " + std::to_string(i) + where);
    }
    values[i] = static_cast<double>(f);
  }
  return {std::move(values), modality};
}

}  // namespace avfuse
