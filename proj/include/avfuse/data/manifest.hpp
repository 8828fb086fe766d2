// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace avfuse {

inline constexpr std::size_t kMaxCaptionsPerRecord = 5;

/// One clip. Paths are stored resolved against the manifest's directory.
struct ManifestRecord {
  std::string id;
  std::filesystem::path audio;  // WAV waveform or AVF1 feature file
  std::optional<std::filesystem::path> visual_features;
  std::vector<std::string> captions;  // 1..5
  std::size_t line = 0;               // 1-based source line
};

struct DatasetManifest {
  std::filesystem::path source;
  std::vector<ManifestRecord> records;

  std::size_t size() const { return records.size(); }
  bool has_visual() const;
  const ManifestRecord* find(const std::string& id) const;
};

/// Parses a line-delimited manifest, one JSON object per non-blank line:
///   {"id": "...", "audio": "...", "visual_features": "..." | null,
///    "captions": ["...", ...]}
/// Every problem in the file is collected and reported together in a
/// ValidationError whose lines each start with "line N:".
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Writes records with paths relative to the manifest's directory when
/// possible.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

bool is_wav_path(const std::filesystem::path& path);

}  // namespace avfuse
