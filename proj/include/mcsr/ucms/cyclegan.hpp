#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcsr/core.hpp"
#include "mcsr/io/checkpoint.hpp"
#include "mcsr/io/corpus.hpp"
#include "mcsr/ucms/networks.hpp"

namespace mcsr {

/// G_ab maps reference (a) to target (b); G_ba maps back.
template <class T>
struct GanPair {
  Generator<T> g_ab, g_ba;
  Discriminator<T> d_a, d_b;
  double lambda_cyc = 10.0;

  static GanPair init(const GeneratorSpec& gs, const DiscriminatorSpec& ds, double lambda_cyc, std::uint64_t seed) {
    Rng r0(derive_seed(seed, 0)), r1(derive_seed(seed, 1)), r2(derive_seed(seed, 2)), r3(derive_seed(seed, 3));
    return {Generator<T>(gs, r0), Generator<T>(gs, r1), Discriminator<T>(ds, r2), Discriminator<T>(ds, r3),
            lambda_cyc};
  }

  ParamList<T> generator_parameters() const { return join("g_ab.", g_ab.parameters(), "g_ba.", g_ba.parameters()); }
  ParamList<T> discriminator_parameters() const {
    return join("d_a.", d_a.parameters(), "d_b.", d_b.parameters());
  }

 private:
  static ParamList<T> join(const std::string& pa, ParamList<T> a, const std::string& pb, ParamList<T> b) {
    for (auto& p : a) p.name = pa + p.name;
    for (auto& p : b) p.name = pb + p.name;
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }
};

struct CycleGanComponents {
  double adv_ab = 0, adv_ba = 0;    // generator-side BCE against label 1
  double cyc_a = 0, cyc_b = 0;      // L1 reconstruction
  double d_b_real = 0, d_b_fake = 0, d_a_real = 0, d_a_fake = 0;
  double generator = 0, discriminator = 0;
};

inline void to_json(nlohmann::json& j, const CycleGanComponents& c) {
  j = {{"adv_ab", c.adv_ab},       {"adv_ba", c.adv_ba},       {"cyc_a", c.cyc_a},
       {"cyc_b", c.cyc_b},         {"d_b_real", c.d_b_real},   {"d_b_fake", c.d_b_fake},
       {"d_a_real", c.d_a_real},   {"d_a_fake", c.d_a_fake},   {"generator", c.generator},
       {"discriminator", c.discriminator}};
}

template <class T>
struct CycleGanLoss {
  Tensor<T> generator;
  Tensor<T> discriminator;  // built on detached fakes
  CycleGanComponents components;
};

namespace detail {

template <class T>
void require_gan_batches(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || a.shape() != b.shape()) {
    throw std::invalid_argument("cyclegan: batches must share shape, got " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
}

template <class T>
Tensor<T> discriminator_loss(Discriminator<T>& d, const Tensor<T>& real, const Tensor<T>& fake, bool training,
                             double& real_term, double& fake_term) {
  auto lr = bce_with_logits(d.logits(real, training), T(1));
  auto lf = bce_with_logits(d.logits(fake, training), T(0));
  real_term = lr.item();
  fake_term = lf.item();
  return scale(add(lr, lf), T(0.5));
}

}  // namespace detail

/// generator = BCE(D_b(G_ab a),1) + BCE(D_a(G_ba b),1)
///             + lambda (|G_ba G_ab a - a|_1 + |G_ab G_ba b - b|_1)
/// discriminator = 1/2[BCE(D_b b,1) + BCE(D_b fake_b,0)] + 1/2[same for a]
template <class T>
CycleGanLoss<T> cyclegan_loss(GanPair<T>& pair, const Tensor<T>& a, const Tensor<T>& b, bool training = true) {
  detail::require_gan_batches(a, b);
  CycleGanLoss<T> out;
  auto& c = out.components;
  const auto fake_b = pair.g_ab.forward(a), fake_a = pair.g_ba.forward(b);
  const auto rec_a = pair.g_ba.forward(fake_b), rec_b = pair.g_ab.forward(fake_a);

  auto adv_ab = bce_with_logits(pair.d_b.logits(fake_b, training), T(1));
  auto adv_ba = bce_with_logits(pair.d_a.logits(fake_a, training), T(1));
  auto cyc_a = l1(rec_a, a), cyc_b = l1(rec_b, b);
  out.generator = add(add(adv_ab, adv_ba), scale(add(cyc_a, cyc_b), static_cast<T>(pair.lambda_cyc)));
  c.adv_ab = adv_ab.item();
  c.adv_ba = adv_ba.item();
  c.cyc_a = cyc_a.item();
  c.cyc_b = cyc_b.item();

  out.discriminator = add(detail::discriminator_loss(pair.d_b, b, fake_b.detach(), training, c.d_b_real, c.d_b_fake),
                          detail::discriminator_loss(pair.d_a, a, fake_a.detach(), training, c.d_a_real, c.d_a_fake));
  c.generator = out.generator.item();
  c.discriminator = out.discriminator.item();
  return out;
}

struct UcmsConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  double lr_g = 2e-4;
  double lr_d = 7e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double lambda_cyc = 10.0;
  std::uint64_t seed = 0;
  std::size_t crop = 0;  // square random crops of this size; 0 trains on whole images
  bool deterministic = true;
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
};

inline void to_json(nlohmann::json& j, const UcmsConfig& c) {
  j = {{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"lr_g", c.lr_g},
       {"lr_d", c.lr_d},           {"beta1", c.beta1},           {"beta2", c.beta2},
       {"lambda_cyc", c.lambda_cyc}, {"seed", c.seed},           {"crop", c.crop},
       {"deterministic", c.deterministic}, {"generator", c.generator}, {"discriminator", c.discriminator}};
}
inline void from_json(const nlohmann::json& j, UcmsConfig& c) {
  const UcmsConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr_g = j.value("lr_g", d.lr_g);
  c.lr_d = j.value("lr_d", d.lr_d);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.lambda_cyc = j.value("lambda_cyc", d.lambda_cyc);
  c.seed = j.value("seed", d.seed);
  c.crop = j.value("crop", d.crop);
  c.deterministic = j.value("deterministic", d.deterministic);
  if (j.contains("generator")) c.generator = j.at("generator").get<GeneratorSpec>();
  if (j.contains("discriminator")) c.discriminator = j.at("discriminator").get<DiscriminatorSpec>();
}

struct UcmsLogEntry {
  std::size_t epoch = 0;
  std::size_t iteration = 0;  // global, 0-based
  CycleGanComponents losses;
};

inline void to_json(nlohmann::json& j, const UcmsLogEntry& e) {
  j = {{"epoch", e.epoch}, {"iteration", e.iteration}, {"losses", e.losses}};
}

template <class T>
void save_gan(const GanPair<T>& pair, const nlohmann::json& config, const std::filesystem::path& dir) {
  Checkpoint ck;
  ck.config = config;
  ck.put_all("", pair.generator_parameters());
  ck.put_all("", pair.discriminator_parameters());
  for (const auto& [name, d] : {std::pair{"d_a.", &pair.d_a}, std::pair{"d_b.", &pair.d_b}}) {
    const auto& stats = d->running_stats();
    for (std::size_t k = 0; k < stats.size(); ++k) {
      const std::string p = std::string(name) + "bn" + std::to_string(k + 1) + ".running_";
      ck.put(p + "mean", {stats[k].mean.size()}, std::vector<float>(stats[k].mean.begin(), stats[k].mean.end()));
      ck.put(p + "var", {stats[k].var.size()}, std::vector<float>(stats[k].var.begin(), stats[k].var.end()));
    }
  }
  save_checkpoint(ck, dir);
}

/// Rebuilds the networks from the specs echoed in the checkpoint config.
template <class T>
GanPair<T> load_gan(const std::filesystem::path& dir, nlohmann::json* config_out = nullptr) {
  const auto ck = load_checkpoint(dir);
  const auto cfg = ck.config.at("ucms").get<UcmsConfig>();
  auto pair = GanPair<T>::init(cfg.generator, cfg.discriminator, cfg.lambda_cyc, 0);
  auto gp = pair.generator_parameters();
  auto dp = pair.discriminator_parameters();
  ck.load_all("", gp);
  ck.load_all("", dp);
  for (const auto& [name, d] : {std::pair{"d_a.", &pair.d_a}, std::pair{"d_b.", &pair.d_b}}) {
    auto& stats = d->running_stats();
    for (std::size_t k = 0; k < stats.size(); ++k) {
      const std::string p = std::string(name) + "bn" + std::to_string(k + 1) + ".running_";
      const auto& mean = ck.get(p + "mean").second;
      const auto& var = ck.get(p + "var").second;
      if (mean.size() != stats[k].mean.size() || var.size() != stats[k].var.size()) {
        throw IoError("checkpoint: running statistics '" + p + "' have the wrong length");
      }
      std::copy(mean.begin(), mean.end(), stats[k].mean.begin());
      std::copy(var.begin(), var.end(), stats[k].var.begin());
    }
  }
  if (config_out) *config_out = ck.config;
  return pair;
}

namespace detail {

/// Copies image crops (or whole images) into an [N,1,c,c] batch.
inline Tensor<float> gather_batch(const std::vector<ImageGrid>& images, const std::vector<std::size_t>& order,
                                  std::size_t begin, std::size_t count, std::size_t crop, Rng& rng) {
  const std::size_t h = crop ? crop : images[order[begin]].height, w = crop ? crop : images[order[begin]].width;
  std::vector<float> data(count * h * w);
  for (std::size_t n = 0; n < count; ++n) {
    const auto& img = images[order[begin + n]];
    if (crop == 0 && (img.height != h || img.width != w)) {
      throw std::invalid_argument("train_ucms: training images differ in size; set a crop");
    }
    const std::size_t oy = crop ? static_cast<std::size_t>(rng.below(img.height - h + 1)) : 0;
    const std::size_t ox = crop ? static_cast<std::size_t>(rng.below(img.width - w + 1)) : 0;
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>((oy + i) * img.width + ox), w,
                  data.begin() + static_cast<std::ptrdiff_t>((n * h + i) * w));
  }
  return Tensor<float>({count, 1, h, w}, std::move(data));
}

inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[static_cast<std::size_t>(rng.below(i))]);
  return p;
}

inline void require_finite_losses(const CycleGanComponents& c, std::size_t epoch, std::size_t iteration) {
  if (std::isfinite(c.generator) && std::isfinite(c.discriminator)) return;
  throw std::runtime_error("train_ucms: non-finite loss at epoch " + std::to_string(epoch) + ", iteration " +
                           std::to_string(iteration) + ": " + nlohmann::json(c).dump());
}

}  // namespace detail

struct UcmsTrainResult {
  GanPair<float> pair;
  std::vector<UcmsLogEntry> log;
  std::size_t iterations = 0;
};

/// Number of iterations per epoch: ceil(n / batch), dropping a trailing
/// single-image batch since batch norm needs two samples.
inline std::size_t ucms_iterations_per_epoch(std::size_t n, std::size_t batch) {
  if (batch == 0) return 0;
  std::size_t it = n / batch;
  if (n % batch >= 2 || (n % batch == 1 && it == 0)) ++it;
  return it;
}

/// Unpaired training on the manifest's train split: reference images form
/// domain a and target images domain b, each shuffled independently every
/// epoch. Each iteration updates the discriminators on detached fakes, then
/// the generators against the updated discriminators. When `checkpoint_dir`
/// is non-empty a checkpoint is written there after every epoch.
inline UcmsTrainResult train_ucms(const DatasetLayout& layout, const UcmsConfig& cfg,
                                  const std::filesystem::path& checkpoint_dir = {},
                                  const std::function<void(const UcmsLogEntry&)>& on_iteration = {}) {
  if (layout.train.empty()) throw std::invalid_argument("train_ucms: training manifest is empty");
  if (cfg.batch_size < 2) throw std::invalid_argument("train_ucms: batch_size must be at least 2");
  std::vector<ImageGrid> domain_a, domain_b;
  for (const auto& id : layout.train) {
    domain_a.push_back(layout.load(id, Modality::reference));
    domain_b.push_back(layout.load(id, Modality::target));
  }
  if (domain_a.size() < 2) throw std::invalid_argument("train_ucms: need at least two training subjects");
  if (cfg.crop) {
    for (const auto& img : domain_a) {
      if (img.height < cfg.crop || img.width < cfg.crop) throw std::invalid_argument("train_ucms: crop exceeds image");
    }
  }

  UcmsTrainResult result{GanPair<float>::init(cfg.generator, cfg.discriminator, cfg.lambda_cyc, cfg.seed), {}, 0};
  auto& pair = result.pair;
  auto g_params = pair.generator_parameters();
  auto d_params = pair.discriminator_parameters();
  Adam<float> opt_g(AdamState(cfg.lr_g, cfg.beta1, cfg.beta2));
  Adam<float> opt_d(AdamState(cfg.lr_d, cfg.beta1, cfg.beta2));
  Rng rng(derive_seed(cfg.seed, 100));
  const float lambda = static_cast<float>(cfg.lambda_cyc);
  const std::size_t n = domain_a.size();
  const std::size_t per_epoch = ucms_iterations_per_epoch(n, cfg.batch_size);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order_a = detail::permutation(n, rng), order_b = detail::permutation(n, rng);
    for (std::size_t it = 0; it < per_epoch; ++it) {
      const std::size_t begin = it * cfg.batch_size, count = std::min(cfg.batch_size, n - begin);
      const auto a = detail::gather_batch(domain_a, order_a, begin, count, cfg.crop, rng);
      const auto b = detail::gather_batch(domain_b, order_b, begin, count, cfg.crop, rng);
      UcmsLogEntry entry{epoch, result.iterations, {}};
      auto& c = entry.losses;

      // The generators are unchanged by the discriminator step, so one
      // forward pass serves both updates.
      const auto fake_b = pair.g_ab.forward(a), fake_a = pair.g_ba.forward(b);

      zero_grads(d_params);
      auto d_loss = add(detail::discriminator_loss(pair.d_b, b, fake_b.detach(), true, c.d_b_real, c.d_b_fake),
                        detail::discriminator_loss(pair.d_a, a, fake_a.detach(), true, c.d_a_real, c.d_a_fake));
      c.discriminator = d_loss.item();
      if (!std::isfinite(c.discriminator)) detail::require_finite_losses(c, epoch, result.iterations);
      d_loss.backward();
      opt_d.step(d_params);

      const auto rec_a = pair.g_ba.forward(fake_b), rec_b = pair.g_ab.forward(fake_a);
      auto adv_ab = bce_with_logits(pair.d_b.logits(fake_b, true), 1.0f);
      auto adv_ba = bce_with_logits(pair.d_a.logits(fake_a, true), 1.0f);
      auto cyc_a = l1(rec_a, a), cyc_b = l1(rec_b, b);
      auto g_loss = add(add(adv_ab, adv_ba), scale(add(cyc_a, cyc_b), lambda));
      c.adv_ab = adv_ab.item();
      c.adv_ba = adv_ba.item();
      c.cyc_a = cyc_a.item();
      c.cyc_b = cyc_b.item();
      c.generator = g_loss.item();
      detail::require_finite_losses(c, epoch, result.iterations);
      zero_grads(g_params);
      g_loss.backward();
      opt_g.step(g_params);

      result.log.push_back(entry);
      if (on_iteration) on_iteration(entry);
      ++result.iterations;
    }
    if (!checkpoint_dir.empty()) {
      nlohmann::json meta = {{"ucms", cfg}, {"epoch", epoch + 1}, {"iterations", result.iterations}};
      save_gan(pair, meta, checkpoint_dir);
    }
  }
  return result;
}

/// I_SHR: the frozen reference-to-target generator applied at full resolution.
inline ImageGrid synthesize(const Generator<float>& g_ab, const ImageGrid& reference) {
  g_ab.check_extent(reference.height, reference.width);
  auto out = g_ab.forward(reference);
  out.modality = Modality::synthesized;
  return out;
}

}  // namespace mcsr
