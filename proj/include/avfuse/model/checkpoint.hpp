// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "avfuse/data/text.hpp"
#include "avfuse/model/captioner.hpp"
#include "json.hpp"

namespace avfuse {

/// Versioned container: "AVCK", u32 version, u64 metadata length, UTF-8
/// JSON metadata, u64 tensor count, then per tensor u32 name length, name,
/// u32 rank, u64 extents, little-endian f64 payload.
struct CheckpointData {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

/// Written to a temporary sibling and renamed into place.
void write_checkpoint(const CheckpointData& data, const std::filesystem::path& path);
CheckpointData read_checkpoint(const std::filesystem::path& path);

struct ModelBundle {
  Captioner model;
  Vocabulary vocab;
};

/// Metadata "model_config" and "vocabulary", tensors "param/<name>".
CheckpointData pack_model(const Captioner& model, const Vocabulary& vocab);
/// Throws ValidationError naming the first parameter that disagrees with
/// the embedded config.
ModelBundle unpack_model(const CheckpointData& data);

void save_model(const Captioner& model, const Vocabulary& vocab, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

}  // namespace avfuse
