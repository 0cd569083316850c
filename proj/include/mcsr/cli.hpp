#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcsr/degrade.hpp"
#include "mcsr/eval/pipeline.hpp"
#include "mcsr/io.hpp"
#include "mcsr/ucms/cyclegan.hpp"
#include "mcsr/usr/fit.hpp"

namespace mcsr::cli {

namespace fs = std::filesystem;

/// Flags shared by the subcommands that accept them.
struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  bool deterministic = false;
  std::string out;
};

inline nlohmann::json load_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
}

inline nlohmann::json section(const nlohmann::json& cfg, const char* name) {
  return cfg.contains(name) ? cfg.at(name) : nlohmann::json::object();
}

/// --seed, then MCSR_SEED, then the config file, then `fallback`.
inline std::uint64_t resolve_seed(const Common& c, const nlohmann::json& sec, std::uint64_t fallback = 0) {
  if (c.seed) return *c.seed;
  if (const char* env = std::getenv("MCSR_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(std::string("MCSR_SEED is not an unsigned integer: ") + env);
  }
  return sec.value("seed", fallback);
}

inline void add_common(CLI::App* sub, Common& c, bool out_required = true) {
  sub->add_option("--seed", c.seed, "random seed (falls back to MCSR_SEED)");
  sub->add_option("--config", c.config, "JSON config; explicit flags take precedence")->check(CLI::ExistingFile);
  sub->add_flag("--deterministic", c.deterministic, "record and require deterministic execution");
  auto* o = sub->add_option("--out", c.out, "output path");
  if (out_required) o->required();
}

template <class T>
void override_if(const CLI::App* sub, const char* flag, T& field, const T& value) {
  if (sub->count(flag)) field = value;
}

/// Runs the command line; returns the process exit code. Parse errors give
/// 2, runtime failures 1 with a one-line diagnostic on `err`.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multi-contrast super-resolution: phantom corpus, U-CMS synthesis, U-SR fitting, evaluation"};
  app.name("mcsr");
  app.require_subcommand(1);

  // corpus
  Common corpus_c;
  std::size_t n_train = 32, n_test = 20, size = 64;
  auto* corpus = app.add_subcommand("corpus", "build a seeded phantom corpus");
  add_common(corpus, corpus_c);
  corpus->add_option("--train", n_train, "training subjects");
  corpus->add_option("--test", n_test, "test subjects");
  corpus->add_option("--size", size, "image extent in pixels");
  bool overwrite = false;
  corpus->add_flag("--overwrite", overwrite, "replace an existing corpus");

  // degrade
  Common degrade_c;
  std::string degrade_in;
  std::size_t degrade_scale = 4;
  auto* degrade = app.add_subcommand("degrade", "box-downsample an HR image");
  add_common(degrade, degrade_c);
  degrade->add_option("--input", degrade_in, "HR image (.img)")->required();
  degrade->add_option("--scale", degrade_scale, "scale factor")->required();

  // train-ucms
  Common ucms_c;
  std::string ucms_corpus;
  std::size_t ucms_epochs = 0, ucms_batch = 0, ucms_crop = 0;
  auto* train_ucms_cmd = app.add_subcommand("train-ucms", "train the unpaired synthesis networks");
  add_common(train_ucms_cmd, ucms_c);
  train_ucms_cmd->add_option("--corpus", ucms_corpus, "corpus directory")->required();
  train_ucms_cmd->add_option("--epochs", ucms_epochs);
  train_ucms_cmd->add_option("--batch", ucms_batch);
  train_ucms_cmd->add_option("--crop", ucms_crop, "random square crop size, 0 for whole images");

  // train-sisr
  Common sisr_c;
  std::string sisr_corpus;
  std::size_t sisr_scale = 4, sisr_epochs = 0;
  auto* train_sisr_cmd = app.add_subcommand("train-sisr", "train the supervised single-image baseline");
  add_common(train_sisr_cmd, sisr_c);
  train_sisr_cmd->add_option("--corpus", sisr_corpus, "corpus directory")->required();
  train_sisr_cmd->add_option("--scale", sisr_scale, "scale factor")->required();
  train_sisr_cmd->add_option("--epochs", sisr_epochs);

  // synthesize
  Common synth_c;
  std::string synth_gan, synth_in;
  auto* synth = app.add_subcommand("synthesize", "map an HR reference image to the target contrast");
  add_common(synth, synth_c);
  synth->add_option("--gan", synth_gan, "U-CMS checkpoint directory")->required();
  synth->add_option("--input", synth_in, "reference image (.img)")->required();

  // fit
  Common fit_c;
  std::string fit_lr, fit_prior;
  std::size_t fit_scale = 4, fit_iters = 0, fit_render = 0;
  double fit_alpha = 1, fit_beta = 0.8;
  auto* fit = app.add_subcommand("fit", "fit a coordinate field to one subject");
  add_common(fit, fit_c);
  fit->add_option("--lr", fit_lr, "LR target image (.img)")->required();
  fit->add_option("--prior", fit_prior, "synthesized HR prior (.img)")->required();
  fit->add_option("--scale", fit_scale, "scale factor")->required();
  fit->add_option("--alpha", fit_alpha, "data-consistency weight");
  fit->add_option("--beta", fit_beta, "prior weight; 0 gives the LR-only INR baseline");
  fit->add_option("--iters", fit_iters, "iterations");
  fit->add_option("--render", fit_render, "also render at this square extent");

  // evaluate
  Common eval_c;
  std::string eval_corpus, eval_gan, eval_sisr;
  std::vector<std::size_t> eval_scales;
  std::vector<std::string> eval_methods;
  std::size_t eval_iters = 0, eval_max = 0;
  double eval_alpha = 1, eval_beta = 0.8;
  bool eval_no_images = false;
  auto* evaluate = app.add_subcommand("evaluate", "run every method on the test split and write a report");
  add_common(evaluate, eval_c);
  evaluate->add_option("--corpus", eval_corpus, "corpus directory")->required();
  evaluate->add_option("--gan", eval_gan, "U-CMS checkpoint directory");
  evaluate->add_option("--sisr", eval_sisr, "directory holding x<scale> SISR checkpoints");
  evaluate->add_option("--scale", eval_scales, "scale factor (repeatable)");
  evaluate->add_option("--method", eval_methods, "bilinear|sisr|inr|cyclegan|full (repeatable)");
  evaluate->add_option("--alpha", eval_alpha);
  evaluate->add_option("--beta", eval_beta);
  evaluate->add_option("--iters", eval_iters);
  evaluate->add_option("--max-subjects", eval_max);
  evaluate->add_flag("--no-images", eval_no_images, "skip per-subject image output");

  // report
  std::string report_in, report_out;
  auto* report = app.add_subcommand("report", "recompute aggregates from a report.json and print the table");
  report->add_option("--input", report_in, "report.json")->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_out, "also write the table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "mcsr: " << e.what() << "\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return 2;
  }

  try {
    if (*corpus) {
      const auto cfg = load_config(corpus_c.config);
      const auto sec = section(cfg, "corpus");
      CorpusOptions o;
      o.master_seed = resolve_seed(corpus_c, sec);
      o.n_train = sec.value("n_train", n_train);
      o.n_test = sec.value("n_test", n_test);
      o.base.height = o.base.width = sec.value("size", size);
      override_if(corpus, "--train", o.n_train, n_train);
      override_if(corpus, "--test", o.n_test, n_test);
      override_if(corpus, "--size", o.base.height, size);
      override_if(corpus, "--size", o.base.width, size);
      o.overwrite = overwrite;
      const auto layout = build_corpus(o, corpus_c.out);
      out << "corpus: " << layout.train.size() << " train, " << layout.test.size() << " test subjects in "
          << corpus_c.out << "\n";
    } else if (*degrade) {
      const auto hr = load_image(degrade_in);
      const auto [lr, op] = make_lr(hr, degrade_scale);
      save_image(lr, degrade_c.out);
      out << "degrade: " << hr.height << "x" << hr.width << " -> " << lr.height << "x" << lr.width << " ("
          << to_string(op.kind) << ", scale " << op.scale << ")\n";
    } else if (*train_ucms_cmd) {
      const auto cfg = load_config(ucms_c.config);
      auto uc = section(cfg, "ucms").get<UcmsConfig>();
      uc.seed = resolve_seed(ucms_c, section(cfg, "ucms"));
      override_if(train_ucms_cmd, "--epochs", uc.epochs, ucms_epochs);
      override_if(train_ucms_cmd, "--batch", uc.batch_size, ucms_batch);
      override_if(train_ucms_cmd, "--crop", uc.crop, ucms_crop);
      if (ucms_c.deterministic) uc.deterministic = true;
      const auto layout = open_corpus(ucms_corpus);
      const auto r = train_ucms(layout, uc, ucms_c.out, [&](const UcmsLogEntry& e) {
        out << nlohmann::json(e).dump() << "\n" << std::flush;
      });
      out << "train-ucms: " << r.iterations << " iterations, checkpoint in " << ucms_c.out << "\n";
    } else if (*train_sisr_cmd) {
      const auto cfg = load_config(sisr_c.config);
      auto sc = section(cfg, "sisr").get<SisrConfig>();
      sc.seed = resolve_seed(sisr_c, section(cfg, "sisr"));
      override_if(train_sisr_cmd, "--epochs", sc.epochs, sisr_epochs);
      const auto layout = open_corpus(sisr_corpus);
      train_sisr_baseline(layout, sisr_scale, sc, sisr_c.out, [&](std::size_t epoch, double loss) {
        out << nlohmann::json{{"epoch", epoch}, {"loss", loss}}.dump() << "\n" << std::flush;
      });
      out << "train-sisr: scale " << sisr_scale << ", checkpoint in " << sisr_c.out << "\n";
    } else if (*synth) {
      const auto pair = load_gan<float>(synth_gan);
      save_image(synthesize(pair.g_ab, load_image(synth_in)), synth_c.out);
      out << "synthesize: wrote " << synth_c.out << "\n";
    } else if (*fit) {
      const auto cfg = load_config(fit_c.config);
      auto uc = section(cfg, "usr").get<UsrConfig>();
      uc.seed = resolve_seed(fit_c, section(cfg, "usr"));
      override_if(fit, "--alpha", uc.alpha, fit_alpha);
      override_if(fit, "--beta", uc.beta, fit_beta);
      override_if(fit, "--iters", uc.iterations, fit_iters);
      if (fit_c.deterministic) uc.deterministic = true;
      const auto lr = load_image(fit_lr);
      const auto prior = load_image(fit_prior);
      const DegradationOp op{fit_scale, DegradationKind::box};
      const auto r = fit_usr(lr, prior, op, uc);
      const fs::path dir = fit_c.out;
      save_inr(r.model, {{"usr", uc}, {"scale", fit_scale}}, dir / "model");
      write_text_atomic(dir / "trace.json", nlohmann::json(r.trace).dump() + "\n");
      auto img = render(r.model, prior.height, prior.width);
      img.subject_id = lr.subject_id;
      save_image(img, dir / "render.img");
      if (fit_render) save_image(render(r.model, fit_render, fit_render), dir / "render_custom.img");
      out << "fit: " << uc.iterations << " iterations, final loss " << r.trace.back().total << ", output in " << dir
          << "\n";
    } else if (*evaluate) {
      const auto cfg = load_config(eval_c.config);
      PipelineOptions p;
      p.usr = section(cfg, "usr").get<UsrConfig>();
      p.usr.seed = resolve_seed(eval_c, section(cfg, "usr"));
      override_if(evaluate, "--alpha", p.usr.alpha, eval_alpha);
      override_if(evaluate, "--beta", p.usr.beta, eval_beta);
      override_if(evaluate, "--iters", p.usr.iterations, eval_iters);
      if (eval_c.deterministic) p.usr.deterministic = true;
      if (!eval_scales.empty()) p.scales = eval_scales;
      if (!eval_methods.empty()) {
        p.methods.clear();
        for (const auto& m : eval_methods) p.methods.push_back(method_from_string(m));
      }
      p.gan_checkpoint = eval_gan;
      if (!eval_sisr.empty())
        for (std::size_t s : p.scales) p.sisr[s] = fs::path(eval_sisr) / ("x" + std::to_string(s));
      p.max_subjects = eval_max;
      p.out_dir = eval_c.out;
      p.write_images = !eval_no_images;
      const auto layout = open_corpus(eval_corpus);
      const auto rep = run_pipeline(layout, p, [&](const PipelineProgress& pr) {
        out << pr.subject_id << " x" << pr.scale << " " << to_string(pr.method) << " " << pr.psnr_db << " dB\n"
            << std::flush;
      });
      out << format_table(rep);
    } else if (*report) {
      const auto rep = report_from_json(nlohmann::json::parse(read_text(report_in)));
      const auto table = format_table(rep);
      if (!report_out.empty()) write_text_atomic(report_out, table);
      out << table;
    }
  } catch (const std::exception& e) {
    err << "mcsr: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace mcsr::cli
