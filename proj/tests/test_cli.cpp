#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "mcsr/cli.hpp"
#include "test_util.hpp"

using namespace mcsr;
using mcsr::testing::TempDir;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "mcsr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// Tiny networks so the end-to-end commands finish in seconds.
const char* kTinyConfig = R"({
  "ucms": {"epochs": 1, "batch_size": 2,
           "generator": {"encoder_channels": [8, 8, 8, 8], "bottleneck_channels": 8, "groups": 4},
           "discriminator": {"channels": [4, 4, 4, 4], "slope": 0.2}},
  "sisr": {"epochs": 1, "batch_size": 2,
           "generator": {"encoder_channels": [8, 8, 8, 8], "bottleneck_channels": 8, "groups": 4}},
  "usr": {"iterations": 10, "lr": 0.002,
          "inr": {"fourier_features": 8, "b_sigma": 1.0, "hidden": 16, "layers": 3}}
})";

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  const auto r = run({"corpus", "--train", "3"});  // --out missing
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--out"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({"corpus", "--out", "x", "--bogus"}).code, 2);
}

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("train-ucms"), std::string::npos);
}

TEST(Cli, RuntimeFailureIsOneLine) {
  TempDir dir;
  const auto r = run({"synthesize", "--gan", (dir / "missing").string(), "--input", (dir / "x.img").string(), "--out",
                      (dir / "y.img").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("mcsr: error: ", 0), 0u);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, SeedFallsBackToEnvironment) {
  TempDir dir;
  ::setenv("MCSR_SEED", "77", 1);
  ASSERT_EQ(run({"corpus", "--out", (dir / "a").string(), "--train", "2", "--test", "1", "--size", "32"}).code, 0);
  ::unsetenv("MCSR_SEED");
  ASSERT_EQ(run({"corpus", "--out", (dir / "b").string(), "--train", "2", "--test", "1", "--size", "32", "--seed",
                 "77"})
                .code,
            0);
  ASSERT_EQ(run({"corpus", "--out", (dir / "c").string(), "--train", "2", "--test", "1", "--size", "32", "--seed",
                 "78"})
                .code,
            0);
  const auto a = open_corpus(dir / "a"), b = open_corpus(dir / "b"), c = open_corpus(dir / "c");
  EXPECT_EQ(a.load(a.test[0], Modality::target).pixels, b.load(b.test[0], Modality::target).pixels);
  EXPECT_NE(a.load(a.test[0], Modality::target).pixels, c.load(c.test[0], Modality::target).pixels);
  ::setenv("MCSR_SEED", "seven", 1);
  EXPECT_EQ(run({"corpus", "--out", (dir / "d").string()}).code, 1);
  ::unsetenv("MCSR_SEED");
}

class CliPipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    write_text_atomic(dir_ / "tiny.json", kTinyConfig);
    ASSERT_EQ(run({"corpus", "--out", corpus(), "--train", "4", "--test", "5", "--size", "32", "--seed", "3"}).code,
              0);
  }
  std::string corpus() const { return (dir_ / "corpus").string(); }
  std::string config() const { return (dir_ / "tiny.json").string(); }
  TempDir dir_;
};

TEST_F(CliPipeline, EndToEnd) {
  ASSERT_EQ(run({"train-ucms", "--corpus", corpus(), "--config", config(), "--out", (dir_ / "gan").string()}).code, 0);
  for (const char* s : {"4", "8"}) {
    ASSERT_EQ(run({"train-sisr", "--corpus", corpus(), "--config", config(), "--scale", s, "--out",
                   (dir_ / "sisr" / (std::string("x") + s)).string()})
                  .code,
              0);
  }
  const auto layout = open_corpus(corpus());
  const auto ref = layout.image_path(layout.test[0], Modality::reference).string();
  const auto hr = layout.image_path(layout.test[0], Modality::target).string();
  ASSERT_EQ(run({"synthesize", "--gan", (dir_ / "gan").string(), "--input", ref, "--out",
                 (dir_ / "prior.img").string()})
                .code,
            0);
  ASSERT_EQ(run({"degrade", "--input", hr, "--scale", "4", "--out", (dir_ / "lr.img").string()}).code, 0);
  EXPECT_EQ(load_image(dir_ / "lr.img").height, 8u);

  // fit --beta 0 is the INR-only baseline: the prior does not matter.
  const auto fit = [&](const std::string& prior, const std::string& out) {
    return run({"fit", "--config", config(), "--lr", (dir_ / "lr.img").string(), "--prior", prior, "--scale", "4",
                "--beta", "0", "--render", "48", "--out", (dir_ / out).string()});
  };
  ASSERT_EQ(fit((dir_ / "prior.img").string(), "fit_a").code, 0);
  ASSERT_EQ(fit(hr, "fit_b").code, 0);
  EXPECT_EQ(load_image(dir_ / "fit_a" / "render.img").pixels, load_image(dir_ / "fit_b" / "render.img").pixels);
  EXPECT_EQ(load_image(dir_ / "fit_a" / "render_custom.img").height, 48u);
  const auto model = load_inr<float>(dir_ / "fit_a" / "model");
  EXPECT_EQ(model.spec().hidden, 16u);

  const auto r = run({"evaluate", "--corpus", corpus(), "--config", config(), "--gan", (dir_ / "gan").string(),
                      "--sisr", (dir_ / "sisr").string(), "--scale", "4", "--scale", "8", "--deterministic",
                      "--out", (dir_ / "eval").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read_text(dir_ / "eval" / "report.json"));
  EXPECT_EQ(j.at("rows").size(), 5u * 2u * 5u);
  EXPECT_EQ(j.at("provenance").at("options").at("usr").at("iterations"), 10);

  const auto rep = run({"report", "--input", (dir_ / "eval" / "report.json").string(), "--out",
                        (dir_ / "table.txt").string()});
  ASSERT_EQ(rep.code, 0);
  EXPECT_EQ(rep.out, read_text(dir_ / "eval" / "report.txt"));
  EXPECT_NE(rep.out.find("SISR U-Net"), std::string::npos);
}

TEST_F(CliPipeline, EvaluateWithoutCheckpointFails) {
  const auto r = run({"evaluate", "--corpus", corpus(), "--config", config(), "--method", "full", "--out",
                      (dir_ / "eval").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("checkpoint"), std::string::npos);
}

TEST_F(CliPipeline, FlagsOverrideConfig) {
  const auto layout = open_corpus(corpus());
  const auto hr = layout.image_path(layout.test[0], Modality::target).string();
  ASSERT_EQ(run({"degrade", "--input", hr, "--scale", "4", "--out", (dir_ / "lr.img").string()}).code, 0);
  ASSERT_EQ(run({"fit", "--config", config(), "--lr", (dir_ / "lr.img").string(), "--prior", hr, "--scale", "4",
                 "--iters", "3", "--alpha", "0.5", "--out", (dir_ / "fit").string()})
                .code,
            0);
  const auto trace = nlohmann::json::parse(read_text(dir_ / "fit" / "trace.json"));
  EXPECT_EQ(trace.size(), 3u);
  nlohmann::json cfg;
  load_inr<float>(dir_ / "fit" / "model", &cfg);
  EXPECT_EQ(cfg.at("usr").at("alpha"), 0.5);
  EXPECT_EQ(cfg.at("usr").at("lr"), 0.002);
}
