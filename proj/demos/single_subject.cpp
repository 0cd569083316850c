// Walks one phantom subject through the pipeline with small settings:
// corpus -> U-CMS -> prior -> U-SR fit -> render at 4x and 8x, then prints
// PSNR/SSIM for each method and writes PGM previews to the output directory.
//
//   single_subject [out_dir] [fit_iterations]

#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "mcsr/eval/pipeline.hpp"
#include "mcsr/io.hpp"
#include "mcsr/platform.hpp"

using namespace mcsr;

int main(int argc, char** argv) {
  tune_allocator();
  const std::filesystem::path out = argc > 1 ? argv[1] : "demo_out";
  const std::size_t iters = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 200;

  CorpusOptions co;
  co.n_train = 16;
  co.n_test = 1;
  co.master_seed = 42;
  co.overwrite = true;
  const auto layout = build_corpus(co, out / "corpus");

  UcmsConfig uc;
  uc.epochs = 20;
  uc.batch_size = 2;
  uc.generator = {{16, 16, 32, 32}, 64, 8};
  uc.discriminator = {{16, 32, 32, 64}, 0.2};
  uc.seed = 42;
  std::printf("training U-CMS (%zu epochs, reduced widths)...\n", uc.epochs);
  const auto gan = train_ucms(layout, uc, out / "gan");

  const auto& id = layout.test[0];
  const auto ref = layout.load(id, Modality::reference), truth = layout.load(id, Modality::target);
  const auto prior = synthesize(gan.pair.g_ab, ref);
  save_pgm(ref, out / "reference.pgm");
  save_pgm(truth, out / "target.pgm");
  save_pgm(prior, out / "prior.pgm");
  std::printf("prior vs target: %.2f dB\n", psnr(prior, truth));

  UsrConfig usr;
  usr.lr = 3e-3;  // short budget; the default 2e-4 pairs with 2000 iterations
  usr.iterations = iters;
  usr.seed = 42;
  for (std::size_t s : {4, 8}) {
    const auto [lr, op] = make_lr(truth, s);
    const auto bilinear = bilinear_upsample(lr, s);
    const auto fitted = fit_usr(lr, prior, op, usr);
    const auto full = render(fitted.model, truth.height, truth.width);
    std::printf("x%zu  bilinear %.2f dB / %.4f   full %.2f dB / %.4f   (loss %.2e -> %.2e)\n", s,
                psnr(bilinear, truth), ssim(bilinear, truth), psnr(full, truth), ssim(full, truth),
                fitted.trace.front().total, fitted.trace.back().total);
    save_pgm(full, out / ("full_x" + std::to_string(s) + ".pgm"));
    save_pgm(abs_error_map(full, truth), out / ("full_x" + std::to_string(s) + "_error.pgm"), 0, kErrorMapDisplayMax);
    // The same field, queried on a finer grid than it was fitted on.
    save_pgm(render(fitted.model, 2 * truth.height, 2 * truth.width), out / ("full_x" + std::to_string(s) + "_128.pgm"));
  }
  std::printf("previews in %s\n", out.string().c_str());
}
