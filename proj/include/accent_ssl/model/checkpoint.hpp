#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "accent_ssl/model/model.hpp"

namespace accent_ssl::model {

namespace fs = std::filesystem;

inline constexpr int kCheckpointFormat = 1;

// A checkpoint is a directory holding model.json (config, trainability,
// parameter index) and model.bin (float32 little-endian values).
template <class S>
struct Checkpoint {
  Model<S> model;
  CodebookTrainability trainability = CodebookTrainability::Both;
  nlohmann::json meta;  // free-form provenance (stage, step, seed)
};

inline fs::path checkpoint_manifest(const fs::path& dir) { return dir / "model.json"; }
inline fs::path checkpoint_blob(const fs::path& dir) { return dir / "model.bin"; }

template <class S>
void save_checkpoint(const fs::path& dir, const Model<S>& m, CodebookTrainability trainability,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  fs::create_directories(dir);
  nlohmann::ordered_json j;
  j["format_version"] = kCheckpointFormat;
  j["config"] = m.config().to_json();
  j["init_seed"] = m.seed();
  j["trainability"] = trainability_name(trainability);
  j["meta"] = meta;
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  std::vector<float> blob;
  blob.reserve(m.params().numel());
  m.params().for_each([&](const Parameter<S>& p) {
    nlohmann::ordered_json e;
    e["name"] = p.name;
    e["shape"] = p.value.shape();
    e["offset"] = blob.size() * sizeof(float);
    e["trainable"] = p.trainable;
    index.push_back(std::move(e));
    for (S v : p.value.values()) blob.push_back(static_cast<float>(v));
  });
  j["parameters"] = std::move(index);
  {
    std::ofstream out(checkpoint_blob(dir), std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + checkpoint_blob(dir).string());
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!out) throw IoError("short write to " + checkpoint_blob(dir).string());
  }
  std::ofstream out(checkpoint_manifest(dir), std::ios::trunc);
  if (!out) throw IoError("cannot write " + checkpoint_manifest(dir).string());
  out << j.dump(2) << '\n';
}

template <class S>
Checkpoint<S> load_checkpoint(const fs::path& dir) {
  if (!fs::exists(checkpoint_manifest(dir)) || !fs::exists(checkpoint_blob(dir)))
    throw MissingArtifactError(dir.string());
  nlohmann::json j;
  try {
    std::ifstream in(checkpoint_manifest(dir));
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint manifest " + checkpoint_manifest(dir).string() + ": " + e.what());
  }
  if (j.value("format_version", 0) != kCheckpointFormat)
    throw IoError("unsupported checkpoint format in " + dir.string());
  Checkpoint<S> ck{Model<S>(ModelConfig::from_json(j.at("config")), j.at("init_seed").get<std::uint64_t>()),
                   parse_trainability(j.at("trainability").get<std::string>()), j.value("meta", nlohmann::json{})};
  std::ifstream in(checkpoint_blob(dir), std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const auto& e : j.at("parameters")) {
    const std::string name = e.at("name");
    Parameter<S>& p = ck.model.param(name);
    const Shape shape = e.at("shape").get<Shape>();
    if (shape != p.value.shape())
      throw IoError("checkpoint parameter " + name + " has shape " + shape_str(shape) + ", model expects " +
                    shape_str(p.value.shape()));
    const std::size_t offset = e.at("offset");
    if (offset + p.value.size() * sizeof(float) > bytes.size()) throw IoError("truncated checkpoint blob in " + dir.string());
    std::vector<float> buf(p.value.size());
    std::memcpy(buf.data(), bytes.data() + offset, buf.size() * sizeof(float));
    for (std::size_t i = 0; i < buf.size(); ++i) p.value[i] = static_cast<S>(buf[i]);
    p.trainable = e.value("trainable", true);
  }
  return ck;
}

}  // namespace accent_ssl::model
