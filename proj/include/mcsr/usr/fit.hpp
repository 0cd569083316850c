#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcsr/core.hpp"
#include "mcsr/degrade.hpp"
#include "mcsr/io/image.hpp"
#include "mcsr/usr/inr.hpp"

namespace mcsr {

struct UsrConfig {
  double alpha = 1.0;  // weight of the data-consistency term
  double beta = 0.8;   // weight of the synthesis-fidelity term
  double lr = 2e-4;
  bool cosine = true;
  std::size_t coord_batch = 5000;
  std::size_t iterations = 2000;
  std::uint64_t seed = 0;
  bool deterministic = true;
  InrSpec inr;

  void validate() const {
    if (!(alpha >= 0) || !(beta >= 0)) throw std::invalid_argument("usr: alpha and beta must be non-negative");
    if (coord_batch == 0) throw std::invalid_argument("usr: coord_batch must be at least 1");
    if (!(lr > 0)) throw std::invalid_argument("usr: lr must be positive");
  }
};

inline void to_json(nlohmann::json& j, const UsrConfig& c) {
  j = {{"alpha", c.alpha},
       {"beta", c.beta},
       {"lr", c.lr},
       {"schedule", c.cosine ? "cosine" : "constant"},
       {"coord_batch", c.coord_batch},
       {"iterations", c.iterations},
       {"seed", c.seed},
       {"deterministic", c.deterministic},
       {"inr", c.inr}};
}
inline void from_json(const nlohmann::json& j, UsrConfig& c) {
  const UsrConfig d;
  c.alpha = j.value("alpha", d.alpha);
  c.beta = j.value("beta", d.beta);
  c.lr = j.value("lr", d.lr);
  const auto schedule = j.value("schedule", std::string("cosine"));
  if (schedule != "cosine" && schedule != "constant") throw std::invalid_argument("usr: unknown schedule " + schedule);
  c.cosine = schedule == "cosine";
  c.coord_batch = j.value("coord_batch", d.coord_batch);
  c.iterations = j.value("iterations", d.iterations);
  c.seed = j.value("seed", d.seed);
  c.deterministic = j.value("deterministic", d.deterministic);
  if (j.contains("inr")) c.inr = j.at("inr").get<InrSpec>();
}

namespace detail {

template <class T>
Tensor<T> pixel_values(const ImageGrid& img, const std::vector<std::size_t>& pixels, const char* what) {
  std::vector<T> v(pixels.size());
  for (std::size_t k = 0; k < pixels.size(); ++k) {
    if (pixels[k] >= img.size()) {
      throw std::out_of_range(std::string(what) + ": pixel " + std::to_string(pixels[k]) + " outside " +
                              std::to_string(img.height) + "x" + std::to_string(img.width));
    }
    v[k] = static_cast<T>(img.pixels[pixels[k]]);
  }
  return Tensor<T>({pixels.size()}, std::move(v));
}

/// Flat HR indices of the s x s children of each LR pixel, block by block.
inline std::vector<std::size_t> child_pixels(const std::vector<std::size_t>& lr_pixels, std::size_t lr_width,
                                             std::size_t s) {
  const std::size_t hr_width = lr_width * s;
  std::vector<std::size_t> out;
  out.reserve(lr_pixels.size() * s * s);
  for (std::size_t p : lr_pixels) {
    const std::size_t a = p / lr_width, b = p % lr_width;
    for (std::size_t di = 0; di < s; ++di)
      for (std::size_t dj = 0; dj < s; ++dj) out.push_back((a * s + di) * hr_width + b * s + dj);
  }
  return out;
}

inline std::vector<Coord> coords_of(const std::vector<std::size_t>& pixels, std::size_t h, std::size_t w) {
  std::vector<Coord> out;
  out.reserve(pixels.size());
  for (std::size_t p : pixels) out.push_back(pixel_center(p / w, p % w, h, w));
  return out;
}

inline void require_lr_range(const ImageGrid& lr, const std::vector<std::size_t>& lr_pixels) {
  for (std::size_t p : lr_pixels) {
    if (p >= lr.size()) {
      throw std::out_of_range("loss_dc: LR pixel " + std::to_string(p) + " outside " + std::to_string(lr.height) +
                              "x" + std::to_string(lr.width));
    }
  }
}

}  // namespace detail

/// Mean squared error between the field and I_SHR at the given pixels
/// (flat row-major indices into I_SHR's grid).
template <class T>
Tensor<T> loss_syn(const InrModel<T>& model, const ImageGrid& shr, const std::vector<std::size_t>& pixels) {
  const auto target = detail::pixel_values<T>(shr, pixels, "loss_syn");
  return mse(model.forward(detail::coords_of(pixels, shr.height, shr.width)), target);
}

/// For each LR pixel: the box mean of the field over its s x s HR children,
/// compared to the LR value; averaged over the batch.
template <class T>
Tensor<T> loss_dc(const InrModel<T>& model, const ImageGrid& lr, const DegradationOp& op,
                  const std::vector<std::size_t>& lr_pixels) {
  detail::require_lr_range(lr, lr_pixels);
  const std::size_t s = op.scale;
  const auto children = detail::child_pixels(lr_pixels, lr.width, s);
  const auto field = model.forward(detail::coords_of(children, lr.height * s, lr.width * s));
  return mse(group_mean(field, s * s), detail::pixel_values<T>(lr, lr_pixels, "loss_dc"));
}

inline std::vector<std::size_t> all_pixels(const ImageGrid& img) {
  std::vector<std::size_t> p(img.size());
  std::iota(p.begin(), p.end(), 0);
  return p;
}

struct UsrTraceEntry {
  std::size_t iteration = 0;
  double total = 0, dc = 0, syn = 0;
};

inline void to_json(nlohmann::json& j, const UsrTraceEntry& e) {
  j = {{"iteration", e.iteration}, {"total", e.total}, {"dc", e.dc}, {"syn", e.syn}};
}

/// Thrown when a fit produces a non-finite loss; carries the trace so far.
struct UsrDivergence : std::runtime_error {
  std::vector<UsrTraceEntry> trace;
  UsrDivergence(const std::string& what, std::vector<UsrTraceEntry> t)
      : std::runtime_error(what), trace(std::move(t)) {}
};

template <class T>
struct UsrFitResult {
  InrModel<T> model;
  std::vector<UsrTraceEntry> trace;
};

namespace detail {

/// k distinct values from [0, n) in random order; all of [0, n) once k >= n.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  if (k >= n) return p;
  for (std::size_t i = 0; i < k; ++i) std::swap(p[i], p[i + static_cast<std::size_t>(rng.below(n - i))]);
  p.resize(k);
  return p;
}

}  // namespace detail

/// Fits a fresh field to one subject by Adam on alpha L_DC + beta L_Syn.
/// Each iteration draws coord_batch HR pixels for L_Syn and
/// ceil(coord_batch / s^2) LR pixels for L_DC, without replacement. Both
/// terms are computed from a single field evaluation over the union of the
/// HR pixels they touch. `on_iteration` sees every trace entry.
template <class T = float>
UsrFitResult<T> fit_usr(const ImageGrid& lr, const ImageGrid& shr, const DegradationOp& op, const UsrConfig& cfg,
                        const std::function<void(const UsrTraceEntry&)>& on_iteration = {}) {
  cfg.validate();
  const std::size_t s = op.scale;
  if (s < 1 || shr.height != lr.height * s || shr.width != lr.width * s) {
    throw std::invalid_argument("fit_usr: prior is " + std::to_string(shr.height) + "x" + std::to_string(shr.width) +
                                " but LR " + std::to_string(lr.height) + "x" + std::to_string(lr.width) +
                                " at scale " + std::to_string(s) + " needs " + std::to_string(lr.height * s) + "x" +
                                std::to_string(lr.width * s));
  }
  UsrFitResult<T> result{InrModel<T>(cfg.inr, cfg.seed), {}};
  auto& model = result.model;
  auto params = model.parameters();
  Adam<T> opt(AdamState(cfg.lr, 0.9, 0.999));
  LrSchedule schedule{cfg.cosine ? LrSchedule::Kind::cosine : LrSchedule::Kind::constant, cfg.lr, cfg.iterations};
  Rng rng(derive_seed(cfg.seed, 2));

  const std::size_t hr_count = shr.size(), lr_count = lr.size();
  const std::size_t syn_batch = std::min(cfg.coord_batch, hr_count);
  const std::size_t dc_batch = std::min((cfg.coord_batch + s * s - 1) / (s * s), lr_count);
  const bool use_syn = cfg.beta > 0, use_dc = cfg.alpha > 0;

  const auto table = model.encoder().template encode<T>(grid_for(shr.height, shr.width));
  const std::size_t dim = model.encoder().dim();
  const auto shr_values = detail::pixel_values<T>(shr, all_pixels(shr), "fit_usr");
  const auto lr_values = detail::pixel_values<T>(lr, all_pixels(lr), "fit_usr");
  std::vector<std::ptrdiff_t> slot(hr_count, -1);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    opt.set_lr(schedule.lr_at(it));
    // Always draw both batches so the sampling stream does not depend on the weights.
    const auto syn_pixels = detail::sample_without_replacement(hr_count, syn_batch, rng);
    const auto dc_lr = detail::sample_without_replacement(lr_count, dc_batch, rng);
    const auto dc_pixels = detail::child_pixels(dc_lr, lr.width, s);

    // Union of touched HR pixels; identity layout when it covers the grid.
    std::vector<std::size_t> rows;
    auto place = [&](std::size_t p) {
      if (slot[p] < 0) {
        slot[p] = static_cast<std::ptrdiff_t>(rows.size());
        rows.push_back(p);
      }
    };
    if (use_syn) for (std::size_t p : syn_pixels) place(p);
    if (use_dc) for (std::size_t p : dc_pixels) place(p);
    Tensor<T> field;
    const bool full = rows.size() == hr_count;
    if (full) {
      field = model.forward_encoded(table);
    } else {
      std::vector<T> enc(rows.size() * dim);
      for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy_n(table.values().begin() + static_cast<std::ptrdiff_t>(rows[r] * dim), dim,
                    enc.begin() + static_cast<std::ptrdiff_t>(r * dim));
      field = model.forward_encoded(Tensor<T>({rows.size(), dim}, std::move(enc)));
    }
    auto index_of = [&](const std::vector<std::size_t>& pixels) {
      std::vector<std::size_t> idx(pixels.size());
      for (std::size_t k = 0; k < pixels.size(); ++k) idx[k] = full ? pixels[k] : static_cast<std::size_t>(slot[pixels[k]]);
      return idx;
    };

    UsrTraceEntry entry{it, 0, 0, 0};
    Tensor<T> total = Tensor<T>::scalar(T(0));
    if (use_dc) {
      auto dc = mse(group_mean(take(field, index_of(dc_pixels)), s * s), take(lr_values, dc_lr));
      entry.dc = dc.item();
      total = add(total, scale(dc, static_cast<T>(cfg.alpha)));
    }
    if (use_syn) {
      auto syn = mse(take(field, index_of(syn_pixels)), take(shr_values, syn_pixels));
      entry.syn = syn.item();
      total = add(total, scale(syn, static_cast<T>(cfg.beta)));
    }
    for (std::size_t p : rows) slot[p] = -1;
    entry.total = total.item();
    result.trace.push_back(entry);
    if (!std::isfinite(entry.total)) {
      throw UsrDivergence("fit_usr: non-finite loss at iteration " + std::to_string(it), std::move(result.trace));
    }
    if (on_iteration) on_iteration(entry);
    if (!use_dc && !use_syn) continue;
    zero_grads(params);
    total.backward();
    opt.step(params);
  }
  return result;
}

}  // namespace mcsr
