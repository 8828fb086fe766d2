// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/frontend/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "avfuse/errors.hpp"

namespace avfuse {

namespace {

constexpr std::size_t kHeaderBytes = 44;

std::uint32_t u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put(std::string& out, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("wav: cannot open " + path.string());
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  if (b.size() < kHeaderBytes) throw IoError("wav: truncated header" + where);
  if (std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0 ||
      std::memcmp(b.data() + 12, "fmt ", 4) != 0 || std::memcmp(b.data() + 36, "data", 4) != 0) {
    throw IoError("wav: not a canonical 44-byte RIFF/WAVE header" + where);
  }
  const std::uint16_t format = u16(b.data() + 20);
  const std::uint16_t channels = u16(b.data() + 22);
  const std::uint32_t rate = u32(b.data() + 24);
  const std::uint16_t bits = u16(b.data() + 34);
  const std::uint32_t data_bytes = u32(b.data() + 40);
  if (channels != 1) throw IoError("wav: only mono audio is supported" + where);
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) throw IoError("wav: expected 16-bit PCM or 32-bit float samples" + where);
  if (b.size() < kHeaderBytes + data_bytes) throw IoError("wav: truncated sample data" + where);

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  const unsigned char* p = b.data() + kHeaderBytes;
  if (pcm16) {
    w.samples.resize(data_bytes / 2);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
      w.samples[i] = static_cast<std::int16_t>(u16(p + 2 * i)) / 32768.0;
    }
  } else {
    w.samples.resize(data_bytes / 4);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
      const float f = std::bit_cast<float>(u32(p + 4 * i));
      if (!std::isfinite(f)) throw IoError("wav: non-finite sample" + where);
      w.samples[i] = f;
    }
  }
  return w;
}

void write_wav(const Waveform& wave, const std::filesystem::path& path, WavEncoding encoding) {
  const bool pcm16 = encoding == WavEncoding::kPcm16;
  const std::uint32_t width = pcm16 ? 2 : 4;
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * width);
  const auto rate = static_cast<std::uint32_t>(wave.sample_rate);
  std::string out = "RIFF";
  put(out, 36 + data_bytes, 4);
  out += "WAVEfmt ";
  put(out, 16, 4);
  put(out, pcm16 ? 1 : 3, 2);
  put(out, 1, 2);
  put(out, rate, 4);
  put(out, rate * width, 4);
  put(out, width, 2);
  put(out, width * 8, 2);
  out += "data";
  put(out, data_bytes, 4);
  for (double s : wave.samples) {
    if (pcm16) {
      const double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32767.0);
      put(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)), 2);
    } else {
      put(out, std::bit_cast<std::uint32_t>(static_cast<float>(s)), 4);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("wav: cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace avfuse
