#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcsr/degrade.hpp"
#include "mcsr/eval/metrics.hpp"
#include "mcsr/eval/sisr.hpp"
#include "mcsr/eval/wilcoxon.hpp"
#include "mcsr/io/corpus.hpp"
#include "mcsr/ucms/cyclegan.hpp"
#include "mcsr/usr/fit.hpp"

namespace mcsr {

enum class Method { bilinear, sisr, inr, cyclegan, full };

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> m{Method::bilinear, Method::sisr, Method::inr, Method::cyclegan, Method::full};
  return m;
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::bilinear: return "bilinear";
    case Method::sisr: return "sisr";
    case Method::inr: return "inr";
    case Method::cyclegan: return "cyclegan";
    case Method::full: return "full";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (Method m : all_methods())
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method '" + s + "' (expected bilinear, sisr, inr, cyclegan or full)");
}

/// Row labels as printed in the text table.
inline std::string display_name(Method m) {
  switch (m) {
    case Method::bilinear: return "Bilinear";
    case Method::sisr: return "SISR U-Net";
    case Method::inr: return "INR";
    case Method::cyclegan: return "CycleGAN";
    case Method::full: return "Full pipeline";
  }
  return "?";
}

struct EvalRow {
  std::string subject_id;
  Method method = Method::full;
  std::size_t scale = 4;
  double psnr_db = 0;
  double ssim = 0;
};

struct EvalAggregate {
  Method method = Method::full;
  std::size_t scale = 4;
  std::size_t n = 0;
  double psnr_mean = 0, psnr_std = 0, ssim_mean = 0, ssim_std = 0;
};

struct EvalTest {
  Method method = Method::full;  // compared against the full pipeline
  std::size_t scale = 4;
  std::string metric;
  std::optional<WilcoxonResult> result;
  std::string skipped;  // reason when no test was run
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<EvalAggregate> aggregates;
  std::vector<EvalTest> tests;
  nlohmann::json provenance;

  const EvalAggregate* aggregate(Method m, std::size_t scale) const {
    for (const auto& a : aggregates)
      if (a.method == m && a.scale == scale) return &a;
    return nullptr;
  }
};

inline void to_json(nlohmann::json& j, const EvalRow& r) {
  j = {{"subject_id", r.subject_id}, {"method", to_string(r.method)}, {"scale", r.scale},
       {"psnr_db", r.psnr_db},       {"ssim", r.ssim}};
}
inline void from_json(const nlohmann::json& j, EvalRow& r) {
  r.subject_id = j.at("subject_id").get<std::string>();
  r.method = method_from_string(j.at("method").get<std::string>());
  r.scale = j.at("scale").get<std::size_t>();
  r.psnr_db = j.at("psnr_db").get<double>();
  r.ssim = j.at("ssim").get<double>();
}
inline void to_json(nlohmann::json& j, const EvalAggregate& a) {
  j = {{"method", to_string(a.method)}, {"scale", a.scale},         {"n", a.n},
       {"psnr_mean", a.psnr_mean},      {"psnr_std", a.psnr_std},   {"ssim_mean", a.ssim_mean},
       {"ssim_std", a.ssim_std}};
}
inline void to_json(nlohmann::json& j, const EvalTest& t) {
  j = {{"method", to_string(t.method)}, {"versus", "full"}, {"scale", t.scale}, {"metric", t.metric}};
  if (t.result) j["wilcoxon"] = *t.result;
  if (!t.skipped.empty()) j["skipped"] = t.skipped;
}
inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"rows", r.rows}, {"aggregates", r.aggregates}, {"tests", r.tests}, {"provenance", r.provenance}};
}

/// Mean and population standard deviation.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0, 0};
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

/// Rebuilds aggregates and Wilcoxon tests from the per-subject rows.
inline void summarize(EvalReport& report) {
  std::vector<Method> methods;
  std::vector<std::size_t> scales;
  for (const auto& r : report.rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(scales.begin(), scales.end(), r.scale) == scales.end()) scales.push_back(r.scale);
  }
  std::sort(methods.begin(), methods.end());
  std::sort(scales.begin(), scales.end());
  auto column = [&](Method m, std::size_t s, bool use_psnr) {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& r : report.rows)
      if (r.method == m && r.scale == s) out.emplace_back(r.subject_id, use_psnr ? r.psnr_db : r.ssim);
    std::sort(out.begin(), out.end());
    return out;
  };
  auto values = [](const std::vector<std::pair<std::string, double>>& c) {
    std::vector<double> v;
    for (const auto& p : c) v.push_back(p.second);
    return v;
  };

  report.aggregates.clear();
  report.tests.clear();
  for (std::size_t s : scales) {
    for (Method m : methods) {
      const auto p = values(column(m, s, true)), q = values(column(m, s, false));
      if (p.empty()) continue;
      EvalAggregate a{m, s, p.size(), 0, 0, 0, 0};
      std::tie(a.psnr_mean, a.psnr_std) = mean_std(p);
      std::tie(a.ssim_mean, a.ssim_std) = mean_std(q);
      report.aggregates.push_back(a);
    }
    for (Method m : methods) {
      if (m == Method::full) continue;
      for (const char* metric : {"psnr", "ssim"}) {
        const bool use_psnr = std::string(metric) == "psnr";
        const auto a = column(m, s, use_psnr), f = column(Method::full, s, use_psnr);
        EvalTest t{m, s, metric, std::nullopt, {}};
        bool paired = !a.empty() && a.size() == f.size();
        for (std::size_t i = 0; paired && i < a.size(); ++i) paired = a[i].first == f[i].first;
        if (!paired) {
          t.skipped = "full pipeline rows missing or unpaired";
        } else {
          try {
            auto w = wilcoxon_signed_rank(values(f), values(a));
            if (!w.degenerate && w.n < kWilcoxonMinN) {
              t.skipped = "need at least " + std::to_string(kWilcoxonMinN) + " non-zero differences, got " +
                          std::to_string(w.n);
            } else {
              t.result = w;
            }
          } catch (const std::invalid_argument& e) {
            t.skipped = e.what();
          }
        }
        report.tests.push_back(std::move(t));
      }
    }
  }
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.rows = j.at("rows").get<std::vector<EvalRow>>();
  r.provenance = j.value("provenance", nlohmann::json::object());
  summarize(r);
  return r;
}

/// Methods as rows, "mean (std)" PSNR and SSIM per scale as columns.
inline std::string format_table(const EvalReport& report) {
  std::vector<std::size_t> scales;
  std::vector<Method> methods;
  for (const auto& a : report.aggregates) {
    if (std::find(scales.begin(), scales.end(), a.scale) == scales.end()) scales.push_back(a.scale);
    if (std::find(methods.begin(), methods.end(), a.method) == methods.end()) methods.push_back(a.method);
  }
  std::sort(scales.begin(), scales.end());
  std::sort(methods.begin(), methods.end());
  auto cell = [](double m, double s, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f (%.*f)", digits, m, digits, s);
    return std::string(buf);
  };
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"Method"};
  for (std::size_t s : scales) {
    header.push_back(std::to_string(s) + "x PSNR");
    header.push_back(std::to_string(s) + "x SSIM");
  }
  grid.push_back(header);
  for (Method m : methods) {
    std::vector<std::string> line{display_name(m)};
    for (std::size_t s : scales) {
      const auto* a = report.aggregate(m, s);
      line.push_back(a ? cell(a->psnr_mean, a->psnr_std, 2) : "-");
      line.push_back(a ? cell(a->ssim_mean, a->ssim_std, 4) : "-");
    }
    grid.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : grid)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream os;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t c = 0; c < grid[r].size(); ++c) {
      const auto& v = grid[r][c];
      if (c == 0) {
        os << v << std::string(width[c] - v.size(), ' ');
      } else {
        os << "  " << std::string(width[c] - v.size(), ' ') << v;
      }
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  os << "mean (population std) over " << (report.aggregates.empty() ? 0 : report.aggregates.front().n)
     << " test subjects\n";
  return os.str();
}

/// 64-bit FNV-1a of a compact JSON dump, as hex.
inline std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline constexpr double kErrorMapDisplayMax = 0.3;

struct PipelineOptions {
  std::vector<std::size_t> scales{4, 8};
  std::vector<Method> methods = all_methods();
  UsrConfig usr;
  std::filesystem::path gan_checkpoint;               // needed for cyclegan and full
  std::map<std::size_t, std::filesystem::path> sisr;  // per-scale checkpoints, needed for sisr
  std::filesystem::path out_dir;                      // empty: no files written
  bool write_images = true;
  std::size_t max_subjects = 0;  // 0 evaluates the whole test split
};

inline void to_json(nlohmann::json& j, const PipelineOptions& o) {
  std::vector<std::string> methods;
  for (Method m : o.methods) methods.push_back(to_string(m));
  j = {{"scales", o.scales}, {"methods", methods}, {"usr", o.usr}, {"max_subjects", o.max_subjects}};
}

struct PipelineProgress {
  std::string subject_id;
  std::size_t scale = 0;
  Method method = Method::full;
  double psnr_db = 0;
  const ImageGrid* output = nullptr;  // valid only during the callback
};

namespace detail {

inline bool wants(const PipelineOptions& o, Method m) {
  return std::find(o.methods.begin(), o.methods.end(), m) != o.methods.end();
}

inline void write_method_images(const std::filesystem::path& dir, Method m, const ImageGrid& out,
                                const ImageGrid& truth) {
  const auto name = to_string(m);
  const auto err = abs_error_map(out, truth);
  std::filesystem::create_directories(dir);
  save_image(out, dir / (name + ".img"));
  save_image(err, dir / (name + "_error.img"));
  save_pgm(out, dir / (name + ".pgm"));
  save_pgm(err, dir / (name + "_error.pgm"), 0.0, kErrorMapDisplayMax);
}

}  // namespace detail

/// Evaluates every requested method on the test split at each scale.
/// The CycleGAN prior depends only on the HR reference, so it is computed
/// once per subject and shared across scales. INR-only and the full
/// pipeline start from the same per-subject seed.
inline EvalReport run_pipeline(const DatasetLayout& layout, const PipelineOptions& opt,
                               const std::function<void(const PipelineProgress&)>& on_progress = {}) {
  if (layout.test.empty()) throw std::invalid_argument("run_pipeline: test manifest is empty");
  if (opt.scales.empty() || opt.methods.empty()) throw std::invalid_argument("run_pipeline: nothing to evaluate");
  opt.usr.validate();
  const bool need_gan = detail::wants(opt, Method::cyclegan) || detail::wants(opt, Method::full);
  nlohmann::json gan_config;
  std::optional<GanPair<float>> gan;
  if (need_gan) {
    if (opt.gan_checkpoint.empty() || !std::filesystem::exists(opt.gan_checkpoint)) {
      throw std::invalid_argument("run_pipeline: cyclegan/full requested but no U-CMS checkpoint at '" +
                                  opt.gan_checkpoint.string() + "'");
    }
    gan = load_gan<float>(opt.gan_checkpoint, &gan_config);
  }
  std::map<std::size_t, SisrBaseline> sisr;
  nlohmann::json sisr_hashes = nlohmann::json::object();
  if (detail::wants(opt, Method::sisr)) {
    for (std::size_t s : opt.scales) {
      const auto it = opt.sisr.find(s);
      if (it == opt.sisr.end() || !std::filesystem::exists(it->second)) {
        throw std::invalid_argument("run_pipeline: sisr requested but no checkpoint for scale " + std::to_string(s));
      }
      sisr.emplace(s, load_sisr(it->second));
      sisr_hashes[std::to_string(s)] = config_hash(load_checkpoint(it->second).config);
    }
  }

  EvalReport report;
  report.provenance = {{"degradation", to_string(DegradationKind::box)},
                       {"std", "population"},
                       {"psnr_cap_db", kPsnrCapDb},
                       {"ssim", {{"window", 11}, {"sigma", 1.5}, {"k1", 0.01}, {"k2", 0.03}, {"range", 1.0}}},
                       {"error_map_display_range", {0.0, kErrorMapDisplayMax}},
                       {"options", opt},
                       {"config_hashes",
                        {{"usr", config_hash(opt.usr)},
                         {"ucms", need_gan ? config_hash(gan_config) : "none"},
                         {"sisr", sisr_hashes}}}};

  std::vector<std::string> subjects = layout.test;
  if (opt.max_subjects && subjects.size() > opt.max_subjects) subjects.resize(opt.max_subjects);
  for (std::size_t si = 0; si < subjects.size(); ++si) {
    const auto& id = subjects[si];
    const auto truth = layout.load(id, Modality::target);
    std::optional<ImageGrid> prior;
    if (need_gan) prior = synthesize(gan->g_ab, layout.load(id, Modality::reference));
    for (std::size_t s : opt.scales) {
      const auto [lr, op] = make_lr(truth, s);
      const auto dir = opt.out_dir / "images" / id / ("x" + std::to_string(s));
      auto record = [&](Method m, ImageGrid out) {
        out.subject_id = id;
        EvalRow row{id, m, s, psnr(out, truth), ssim(out, truth)};
        report.rows.push_back(row);
        if (!opt.out_dir.empty() && opt.write_images) detail::write_method_images(dir, m, out, truth);
        if (on_progress) on_progress({id, s, m, row.psnr_db, &out});
      };
      UsrConfig usr = opt.usr;
      usr.seed = derive_seed(opt.usr.seed, si);
      for (Method m : opt.methods) {
        switch (m) {
          case Method::bilinear: record(m, bilinear_upsample(lr, s)); break;
          case Method::sisr: record(m, sisr.at(s).super_resolve(lr, s)); break;
          case Method::cyclegan: record(m, *prior); break;
          case Method::inr: {
            UsrConfig c = usr;
            c.beta = 0;
            // The prior is unused at beta = 0; pass an image of the right size.
            record(m, render(fit_usr(lr, prior ? *prior : truth, op, c).model, truth.height, truth.width));
            break;
          }
          case Method::full:
            record(m, render(fit_usr(lr, *prior, op, usr).model, truth.height, truth.width));
            break;
        }
      }
    }
  }
  summarize(report);
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    write_text_atomic(opt.out_dir / "report.json", nlohmann::json(report).dump(2) + "\n");
    write_text_atomic(opt.out_dir / "report.txt", format_table(report));
  }
  return report;
}

}  // namespace mcsr
