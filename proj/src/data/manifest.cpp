// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/data/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "avfuse/errors.hpp"
#include "json.hpp"

namespace avfuse {

namespace fs = std::filesystem;
using nlohmann::json;

bool DatasetManifest::has_visual() const {
  return !records.empty() && std::all_of(records.begin(), records.end(), [](const auto& r) {
    return r.visual_features.has_value();
  });
}

const ManifestRecord* DatasetManifest::find(const std::string& id) const {
  for (const auto& r : records)
    if (r.id == id) return &r;
  return nullptr;
}

bool is_wav_path(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".wav";
}

namespace {

std::optional<ManifestRecord> parse_record(const std::string& text, std::size_t line,
                                           const fs::path& base, std::vector<std::string>& errors) {
  const auto fail = [&](const std::string& msg) {
    errors.push_back("line " + std::to_string(line) + ": " + msg);
    return std::nullopt;
  };
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    return fail(std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) return fail("record is not an object");
  for (const char* key : {"id", "audio", "captions"}) {
    if (!j.contains(key)) return fail(std::string("missing field \"") + key + "\"");
  }
  if (!j["id"].is_string() || j["id"].get<std::string>().empty()) {
    return fail("\"id\" must be a non-empty string");
  }
  if (!j["audio"].is_string()) return fail("\"audio\" must be a string path");
  if (!j["captions"].is_array()) return fail("\"captions\" must be an array of strings");

  ManifestRecord rec;
  rec.line = line;
  rec.id = j["id"].get<std::string>();
  rec.audio = base / j["audio"].get<std::string>();
  if (j.contains("visual_features") && !j["visual_features"].is_null()) {
    if (!j["visual_features"].is_string()) return fail("\"visual_features\" must be a string path");
    rec.visual_features = base / j["visual_features"].get<std::string>();
  }
  for (const auto& c : j["captions"]) {
    if (!c.is_string()) return fail("\"captions\" must be an array of strings");
    rec.captions.push_back(c.get<std::string>());
  }
  if (rec.captions.empty()) return fail("record needs at least one caption");
  if (rec.captions.size() > kMaxCaptionsPerRecord) {
    return fail("record has " + std::to_string(rec.captions.size()) + " captions, at most " +
                std::to_string(kMaxCaptionsPerRecord) + " allowed");
  }
  if (!fs::exists(rec.audio)) return fail("audio path does not exist: " + rec.audio.string());
  if (rec.visual_features && !fs::exists(*rec.visual_features)) {
    return fail("visual_features path does not exist: " + rec.visual_features->string());
  }
  return rec;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest: cannot open " + path.string());
  DatasetManifest manifest;
  manifest.source = path;
  const fs::path base = path.parent_path();
  std::vector<std::string> errors;
  std::set<std::string> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    auto rec = parse_record(text, line, base, errors);
    if (!rec) continue;
    if (!seen.insert(rec->id).second) {
      errors.push_back("line " + std::to_string(line) + ": duplicate id \"" + rec->id + "\"");
      continue;
    }
    manifest.records.push_back(std::move(*rec));
  }
  if (!errors.empty()) {
    std::ostringstream os;
    os << "manifest " << path.string() << " is invalid:";
    for (const auto& e : errors) os << "\n  " << e;
    throw ValidationError(os.str());
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("manifest: cannot open " + path.string() + " for writing");
  const fs::path base = path.parent_path();
  const auto rel = [&](const fs::path& p) {
    const fs::path r = p.lexically_relative(base);
    return (r.empty() ? p : r).generic_string();
  };
  for (const auto& r : manifest.records) {
    json j;
    j["id"] = r.id;
    j["audio"] = rel(r.audio);
    j["visual_features"] = r.visual_features ? json(rel(*r.visual_features)) : json(nullptr);
    j["captions"] = r.captions;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("manifest: write failed for " + path.string());
}

}  // namespace avfuse
