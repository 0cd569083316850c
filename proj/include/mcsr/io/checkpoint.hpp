#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcsr/core/optim.hpp"
#include "mcsr/io/image.hpp"

namespace mcsr {

/// A directory holding manifest.json (tensor name -> shape, byte offset, and
/// the producing config) and tensors.bin (raw little-endian f32).
struct Checkpoint {
  nlohmann::json config;
  std::vector<std::string> order;
  std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;

  void put(const std::string& name, Shape shape, std::vector<float> values) {
    if (!tensors.contains(name)) order.push_back(name);
    tensors[name] = {std::move(shape), std::move(values)};
  }

  template <class T>
  void put(const std::string& name, const Tensor<T>& t) {
    put(name, t.shape(), std::vector<float>(t.values().begin(), t.values().end()));
  }

  template <class T>
  void put_all(const std::string& prefix, const ParamList<T>& params) {
    for (const auto& p : params) put(prefix + p.name, p.tensor);
  }

  const std::pair<Shape, std::vector<float>>& get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
    return it->second;
  }

  /// Copies a stored tensor into an existing one of identical shape.
  template <class T>
  void load_into(const std::string& name, Tensor<T>& t) const {
    const auto& [shape, values] = get(name);
    if (shape != t.shape()) {
      throw IoError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                    shape_str(t.shape()));
    }
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  }

  template <class T>
  void load_all(const std::string& prefix, ParamList<T>& params) const {
    for (auto& p : params) load_into(prefix + p.name, p.tensor);
  }
};

/// Written into a sibling staging directory that then replaces `dir`.
inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  auto staging = dir;
  staging += ".staging";
  fs::remove_all(staging);
  fs::create_directories(staging);
  nlohmann::json manifest;
  manifest["format"] = "mcsr-checkpoint-1";
  manifest["config"] = ckpt.config;
  manifest["tensors"] = nlohmann::json::array();
  std::vector<float> blob;
  for (const auto& name : ckpt.order) {
    const auto& [shape, values] = ckpt.tensors.at(name);
    manifest["tensors"].push_back({{"name", name}, {"shape", shape}, {"offset", blob.size() * 4}});
    blob.insert(blob.end(), values.begin(), values.end());
  }
  detail::write_f32_blob(staging / "tensors.bin", blob);
  write_text_atomic(staging / "manifest.json", manifest.dump(2) + "\n");
  fs::remove_all(dir);
  fs::rename(staging, dir);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.json")) throw IoError("checkpoint: no manifest in " + dir.string());
  const auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  if (manifest.value("format", "") != "mcsr-checkpoint-1") throw IoError("checkpoint: unknown format");
  const auto blob = detail::read_f32_le(dir / "tensors.bin");
  Checkpoint ckpt;
  ckpt.config = manifest.at("config");
  for (const auto& t : manifest.at("tensors")) {
    const Shape shape = t.at("shape").get<Shape>();
    const std::size_t offset = t.at("offset").get<std::size_t>() / 4, n = numel(shape);
    if (offset + n > blob.size()) throw IoError("checkpoint: tensor '" + t.at("name").get<std::string>() + "' overruns blob");
    ckpt.put(t.at("name").get<std::string>(), shape,
             std::vector<float>(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                                blob.begin() + static_cast<std::ptrdiff_t>(offset + n)));
  }
  return ckpt;
}

}  // namespace mcsr
