// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "avfuse/errors.hpp"

namespace avfuse {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'V', 'C', 'K'};
constexpr std::string_view kParamPrefix = "param/";

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw IoError(path_ + ": truncated checkpoint");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::vector<char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void write_checkpoint(const CheckpointData& data, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(kMagic, 4);
    put<std::uint32_t>(os, CheckpointData::kVersion);
    const std::string meta = data.meta.dump();
    put<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint64_t>(os, data.tensors.size());
    for (const auto& [name, t] : data.tensors) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
      for (std::size_t e : t.shape()) put<std::uint64_t>(os, e);
      os.write(reinterpret_cast<const char*>(t.storage().data()),
               static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());
  if (std::memcmp(r.take(4), kMagic, 4) != 0) {
    throw IoError(path.string() + ": not a checkpoint (expected \"AVCK\")");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != CheckpointData::kVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointData data;
  const auto meta_len = r.get<std::uint64_t>();
  const char* meta = r.take(meta_len);
  try {
    data.meta = nlohmann::json::parse(std::string_view(meta, meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": corrupt metadata: " + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name(r.take(name_len), name_len);
    const auto rank = r.get<std::uint32_t>();
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto e = r.get<std::uint64_t>();
      if (e != 0 && numel > std::numeric_limits<std::size_t>::max() / sizeof(double) / e) {
        throw IoError(path.string() + ": tensor '" + name + "' size overflows");
      }
      numel *= e;
      shape.push_back(e);
    }
    std::vector<double> values(numel);
    std::memcpy(values.data(), r.take(numel * sizeof(double)), numel * sizeof(double));
    data.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw IoError(path.string() + ": trailing bytes after checkpoint");
  return data;
}

CheckpointData pack_model(const Captioner& model, const Vocabulary& vocab) {
  CheckpointData data;
  data.meta["model_config"] = model.config().to_json();
  data.meta["vocabulary"] = vocab.words();
  for (const auto& [name, t] : model.parameters()) {
    data.tensors.emplace_back(std::string(kParamPrefix) + name, t);
  }
  return data;
}

ModelBundle unpack_model(const CheckpointData& data) {
  if (!data.meta.contains("model_config") || !data.meta.contains("vocabulary")) {
    throw ValidationError("checkpoint lacks model_config or vocabulary metadata");
  }
  const ModelConfig cfg = ModelConfig::from_json(data.meta.at("model_config"));
  Vocabulary vocab = Vocabulary::from_words(data.meta.at("vocabulary").get<std::vector<std::string>>());
  if (vocab.size() != cfg.vocab_size) {
    throw ValidationError("checkpoint vocabulary has " + std::to_string(vocab.size()) +
                          " entries but config vocab_size is " + std::to_string(cfg.vocab_size));
  }
  ParameterStore params;
  for (const auto& [name, t] : data.tensors) {
    if (name.starts_with(kParamPrefix)) params.add(name.substr(kParamPrefix.size()), t);
  }
  return ModelBundle{Captioner(cfg, std::move(params)), std::move(vocab)};
}

void save_model(const Captioner& model, const Vocabulary& vocab, const std::filesystem::path& path) {
  write_checkpoint(pack_model(model, vocab), path);
}

ModelBundle load_model(const std::filesystem::path& path) { return unpack_model(read_checkpoint(path)); }

}  // namespace avfuse
