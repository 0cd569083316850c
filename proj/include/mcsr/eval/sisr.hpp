#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcsr/core.hpp"
#include "mcsr/degrade.hpp"
#include "mcsr/io/checkpoint.hpp"
#include "mcsr/io/corpus.hpp"
#include "mcsr/ucms/cyclegan.hpp"
#include "mcsr/ucms/networks.hpp"

namespace mcsr {

/// Supervised single-image baseline: the generator architecture trained on
/// (bilinear_upsample(I_LR, s), I_HR) pairs of the target modality.
struct SisrConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  double lr = 2e-4;
  std::uint64_t seed = 0;
  GeneratorSpec generator;
};

inline void to_json(nlohmann::json& j, const SisrConfig& c) {
  j = {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr}, {"seed", c.seed}, {"generator", c.generator}};
}
inline void from_json(const nlohmann::json& j, SisrConfig& c) {
  const SisrConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.seed = j.value("seed", d.seed);
  if (j.contains("generator")) c.generator = j.at("generator").get<GeneratorSpec>();
}

struct SisrBaseline {
  Generator<float> net;
  std::size_t scale = 4;  // the factor it was trained for

  /// Upsamples bilinearly to the HR grid, then refines.
  ImageGrid super_resolve(const ImageGrid& lr, std::size_t s) const {
    auto out = net.forward(bilinear_upsample(lr, s));
    out.modality = Modality::output;
    out.subject_id = lr.subject_id;
    return out;
  }
};

struct SisrTrainResult {
  SisrBaseline model;
  std::vector<double> epoch_loss;  // mean training MSE per epoch
};

inline void save_sisr(const SisrBaseline& m, const SisrConfig& cfg, const std::filesystem::path& dir) {
  Checkpoint ck;
  ck.config = {{"sisr", cfg}, {"scale", m.scale}};
  ck.put_all("", m.net.parameters());
  save_checkpoint(ck, dir);
}

inline SisrBaseline load_sisr(const std::filesystem::path& dir) {
  const auto ck = load_checkpoint(dir);
  const auto cfg = ck.config.at("sisr").get<SisrConfig>();
  Rng rng(0);
  SisrBaseline m{Generator<float>(cfg.generator, rng), ck.config.at("scale").get<std::size_t>()};
  auto params = m.net.parameters();
  ck.load_all("", params);
  return m;
}

inline SisrTrainResult train_sisr_baseline(const DatasetLayout& layout, std::size_t s, const SisrConfig& cfg,
                                           const std::filesystem::path& checkpoint_dir = {},
                                           const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (layout.train.empty()) throw std::invalid_argument("train_sisr: training manifest is empty");
  if (cfg.batch_size == 0) throw std::invalid_argument("train_sisr: batch_size must be positive");
  std::vector<ImageGrid> inputs, targets;
  for (const auto& id : layout.train) {
    auto hr = layout.load(id, Modality::target);
    inputs.push_back(bilinear_upsample(make_lr(hr, s).first, s));
    targets.push_back(std::move(hr));
  }
  Rng init(derive_seed(cfg.seed, 0));
  SisrTrainResult result{{Generator<float>(cfg.generator, init), s}, {}};
  auto params = result.model.net.parameters();
  Adam<float> opt(AdamState(cfg.lr, 0.9, 0.999));
  Rng rng(derive_seed(cfg.seed, 1));
  const std::size_t n = inputs.size();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::permutation(n, rng);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - begin);
      const auto x = detail::gather_batch(inputs, order, begin, count, 0, rng);
      const auto y = detail::gather_batch(targets, order, begin, count, 0, rng);
      auto loss = mse(result.model.net.forward(x), y);
      const double v = loss.item();
      if (!std::isfinite(v)) throw std::runtime_error("train_sisr: non-finite loss in epoch " + std::to_string(epoch));
      zero_grads(params);
      loss.backward();
      opt.step(params);
      total += v;
      ++batches;
    }
    result.epoch_loss.push_back(total / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
    if (!checkpoint_dir.empty()) save_sisr(result.model, cfg, checkpoint_dir);
  }
  return result;
}

}  // namespace mcsr
