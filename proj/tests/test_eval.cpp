#include <gtest/gtest.h>

#include <cmath>

#include "mcsr/eval/pipeline.hpp"
#include "mcsr/io.hpp"
#include "test_util.hpp"

using namespace mcsr;
using mcsr::testing::TempDir;

namespace {

GeneratorSpec tiny_generator() { return {{8, 8, 8, 8}, 8, 4}; }

// One small corpus, GAN and SISR pair shared by the whole suite.
class EvalFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    CorpusOptions o;
    o.base.height = o.base.width = 32;
    o.base.num_structures = 2;
    o.n_train = 4;
    o.n_test = 6;
    o.master_seed = 5;
    layout_ = build_corpus(o, *dir_ / "corpus");

    UcmsConfig u;
    u.epochs = 1;
    u.batch_size = 2;
    u.generator = tiny_generator();
    u.discriminator = {{4, 4, 4, 4}, 0.2};
    u.seed = 2;
    train_ucms(layout_, u, *dir_ / "gan");

    SisrConfig sc;
    sc.epochs = 6;
    sc.batch_size = 2;
    sc.lr = 2e-3;
    sc.generator = tiny_generator();
    for (std::size_t s : {4, 8}) {
      sisr_loss_[s] = train_sisr_baseline(layout_, s, sc, *dir_ / ("sisr" + std::to_string(s))).epoch_loss;
    }
  }
  static void TearDownTestSuite() { delete dir_; }

  static PipelineOptions options() {
    PipelineOptions p;
    p.usr.inr.fourier_features = 16;
    p.usr.inr.b_sigma = 1.0;
    p.usr.inr.hidden = 32;
    p.usr.inr.layers = 4;
    p.usr.iterations = 30;
    p.usr.lr = 2e-3;
    p.usr.seed = 4;
    p.gan_checkpoint = *dir_ / "gan";
    p.sisr = {{4, *dir_ / "sisr4"}, {8, *dir_ / "sisr8"}};
    return p;
  }

  static inline TempDir* dir_ = nullptr;
  static inline DatasetLayout layout_;
  static inline std::map<std::size_t, std::vector<double>> sisr_loss_;
};

}  // namespace

TEST_F(EvalFixture, SisrTrainingLossTrendsDown) {
  for (const auto& [s, loss] : sisr_loss_) {
    ASSERT_EQ(loss.size(), 6u);
    EXPECT_LT(loss.back(), loss.front()) << "scale " << s;
  }
}

TEST_F(EvalFixture, SisrCheckpointRoundTripAndExtents) {
  const auto m = load_sisr(*dir_ / "sisr4");
  EXPECT_EQ(m.scale, 4u);
  const auto hr = layout_.load(layout_.test[0], Modality::target);
  const auto lr = make_lr(hr, 4).first;
  const auto out = m.super_resolve(lr, 4);
  EXPECT_EQ(out.height, hr.height);
  EXPECT_EQ(out.width, hr.width);
  EXPECT_EQ(out.pixels, load_sisr(*dir_ / "sisr4").super_resolve(lr, 4).pixels);
}

TEST(SisrTraining, EmptyCorpusThrows) {
  DatasetLayout empty;
  EXPECT_THROW(train_sisr_baseline(empty, 4, SisrConfig{}), std::invalid_argument);
}

TEST_F(EvalFixture, ReportCoversEveryMethodScaleAndSubject) {
  TempDir out;
  auto opt = options();
  opt.out_dir = out.path();
  std::size_t progress = 0;
  const auto report = run_pipeline(layout_, opt, [&](const PipelineProgress&) { ++progress; });
  EXPECT_EQ(report.rows.size(), 5u * 2u * 6u);
  EXPECT_EQ(progress, report.rows.size());
  EXPECT_EQ(report.aggregates.size(), 10u);
  EXPECT_EQ(report.tests.size(), 4u * 2u * 2u);
  for (const auto& t : report.tests) EXPECT_TRUE(t.result.has_value()) << t.skipped;

  // The CycleGAN prior ignores the scale factor.
  for (const auto& a : report.rows)
    for (const auto& b : report.rows)
      if (a.method == Method::cyclegan && b.method == Method::cyclegan && a.subject_id == b.subject_id) {
        EXPECT_EQ(a.psnr_db, b.psnr_db);
        EXPECT_EQ(a.ssim, b.ssim);
      }

  const auto id = layout_.test[2];
  const auto dir = out.path() / "images" / id / "x8";
  const auto img = load_image(dir / "full.img"), err = load_image(dir / "full_error.img");
  const auto truth = layout_.load(id, Modality::target);
  for (std::size_t k = 0; k < img.size(); ++k) ASSERT_EQ(err.pixels[k], std::abs(img.pixels[k] - truth.pixels[k]));
  EXPECT_TRUE(std::filesystem::exists(dir / "full_error.pgm"));
  EXPECT_TRUE(std::filesystem::exists(out.path() / "report.txt"));

  // The JSON rows alone reproduce aggregates and tests.
  const auto j = nlohmann::json::parse(read_text(out.path() / "report.json"));
  const auto back = report_from_json(j);
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(report));
  EXPECT_EQ(j.at("provenance").at("std"), "population");
}

TEST_F(EvalFixture, InrOnlyMatchesBetaZeroFit) {
  auto opt = options();
  opt.methods = {Method::inr};
  opt.scales = {4};
  opt.max_subjects = 1;
  const auto report = run_pipeline(layout_, opt);
  ASSERT_EQ(report.rows.size(), 1u);
  const auto truth = layout_.load(layout_.test[0], Modality::target);
  const auto [lr, op] = make_lr(truth, 4);
  auto cfg = opt.usr;
  cfg.beta = 0;
  cfg.seed = derive_seed(opt.usr.seed, 0);
  const auto direct = render(fit_usr(lr, truth, op, cfg).model, 32, 32);
  EXPECT_EQ(report.rows[0].psnr_db, psnr(direct, truth));
}

TEST_F(EvalFixture, DeterministicReport) {
  auto opt = options();
  opt.methods = {Method::bilinear, Method::cyclegan, Method::full};
  opt.max_subjects = 2;
  EXPECT_EQ(nlohmann::json(run_pipeline(layout_, opt)).dump(), nlohmann::json(run_pipeline(layout_, opt)).dump());
}

TEST_F(EvalFixture, MissingCheckpointsAreReported) {
  auto opt = options();
  opt.gan_checkpoint = *dir_ / "nowhere";
  EXPECT_THROW(run_pipeline(layout_, opt), std::invalid_argument);
  opt = options();
  opt.methods = {Method::sisr};
  opt.sisr.erase(8);
  EXPECT_THROW(run_pipeline(layout_, opt), std::invalid_argument);
  opt.methods = {Method::bilinear};
  EXPECT_NO_THROW(run_pipeline(layout_, opt));
}

TEST(Report, AggregatesUsePopulationStd) {
  EvalReport r;
  for (int k = 0; k < 4; ++k) {
    r.rows.push_back({"s" + std::to_string(k), Method::bilinear, 4, 20.0 + k, 0.5});
    r.rows.push_back({"s" + std::to_string(k), Method::full, 4, 30.0 + 2 * k, 0.9});
  }
  summarize(r);
  const auto* a = r.aggregate(Method::full, 4);
  ASSERT_NE(a, nullptr);
  EXPECT_DOUBLE_EQ(a->psnr_mean, 33.0);
  EXPECT_DOUBLE_EQ(a->psnr_std, std::sqrt(5.0));  // (9+1+1+9)/4
  EXPECT_EQ(a->ssim_std, 0.0);
  // Only four pairs, below the Wilcoxon minimum; SSIM differences are all equal.
  ASSERT_EQ(r.tests.size(), 2u);
  EXPECT_FALSE(r.tests[0].result.has_value());
  EXPECT_FALSE(r.tests[0].skipped.empty());
}

TEST(Report, TableLayout) {
  EvalReport r;
  for (int k = 0; k < 3; ++k)
    for (std::size_t s : {4, 8}) r.rows.push_back({"s" + std::to_string(k), Method::full, s, 35.0 + k, 0.95});
  summarize(r);
  const auto t = format_table(r);
  EXPECT_NE(t.find("Full pipeline"), std::string::npos);
  EXPECT_NE(t.find("36.00 (0.82)"), std::string::npos);
  EXPECT_NE(t.find("0.9500 (0.0000)"), std::string::npos);
  EXPECT_NE(t.find("8x SSIM"), std::string::npos);
}

TEST(Report, MethodNames) {
  for (Method m : all_methods()) EXPECT_EQ(method_from_string(to_string(m)), m);
  EXPECT_THROW(method_from_string("nearest"), std::invalid_argument);
}
