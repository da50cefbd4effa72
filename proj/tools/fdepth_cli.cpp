// Command-line front end: gen-data, train, eval, predict.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "fdepth/image_io.hpp"
#include "fdepth/metrics.hpp"
#include "fdepth/photometric.hpp"
#include "fdepth/trainer.hpp"

namespace fs = std::filesystem;

namespace {

void print_report(const std::string& mode, const fdepth::EvalReport& report) {
  std::cout << "# " << mode << "\n" << fdepth::metrics_csv_header() << "\n";
  for (const auto& row : report.per_sample) std::cout << fdepth::metrics_csv_row(row) << "\n";
  std::cout << "# " << mode << " aggregate\n" << fdepth::metrics_csv_row(report.aggregate) << std::endl;
  std::fprintf(stderr, "%s: mean abs disparity error %.4f px\n", mode.c_str(), report.mean_abs_disparity_error);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised stereo depth: synthetic data, training, evaluation, prediction"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Render a synthetic rectified stereo set");
  std::string gen_out;
  std::int64_t gen_count = 40, gen_width = 64, gen_height = 64;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", gen_count, "Number of samples")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gen_seed, "Random seed");
  gen->add_option("--width", gen_width, "Image width in pixels")->check(CLI::PositiveNumber);
  gen->add_option("--height", gen_height, "Image height in pixels")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Run the staged training schedule");
  std::string train_config;
  bool no_fusion = false, no_coordconv = false;
  train->add_option("--config", train_config, "key = value training config")->required();
  train->add_flag("--no-fusion", no_fusion, "Disable the feature fusion sub-networks");
  train->add_flag("--no-coordconv", no_coordconv, "Disable coordinate channels");

  auto* eval = app.add_subcommand("eval", "Report depth metrics on a dataset");
  std::string eval_ckpt, eval_data;
  bool eval_pp = false;
  double eval_cap = fdepth::kDefaultCap;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_flag("--pp", eval_pp, "Also report post-processed predictions");
  eval->add_option("--cap", eval_cap, "Depth cap in meters")->check(CLI::PositiveNumber);

  auto* predict = app.add_subcommand("predict", "Predict disparity or depth for one image");
  std::string pred_ckpt, pred_image, pred_out, pred_manifest;
  bool pred_pp = false, pred_depth = false;
  predict->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required();
  predict->add_option("--image", pred_image, "Input PPM image")->required();
  predict->add_option("--out", pred_out, "Output 16-bit PGM (value x 256)")->required();
  predict->add_flag("--pp", pred_pp, "Blend with the prediction for the mirrored image");
  predict->add_flag("--depth", pred_depth, "Write metric depth instead of disparity");
  predict->add_option("--manifest", pred_manifest,
                      "Directory whose manifest.txt holds the calibration (default: image directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) {
      const auto m = fdepth::generate_dataset(gen_out, gen_count, gen_seed, gen_width, gen_height);
      std::cerr << "wrote " << m.indices.size() << " samples to " << gen_out << "\n";
    } else if (train->parsed()) {
      fdepth::TrainConfig cfg = fdepth::load_train_config(train_config);
      if (no_fusion) cfg.arch.fusion = false;
      if (no_coordconv) cfg.arch.coordconv = false;
      const auto result = fdepth::run_schedule(cfg, [](const fdepth::EpochRecord& r) {
        std::fprintf(stderr, "epoch %d stage %d mean_loss %.6f\n", r.epoch, r.stage, r.mean_loss);
      });
      std::cerr << "final checkpoint " << result.checkpoints.back().string() << "\n";
    } else if (eval->parsed()) {
      const fdepth::DepthNet net = fdepth::load_model(eval_ckpt);
      const auto samples = fdepth::load_dataset(eval_data);
      print_report("raw", fdepth::evaluate(net, samples, false, eval_cap));
      if (eval_pp) print_report("pp", fdepth::evaluate(net, samples, true, eval_cap));
    } else if (predict->parsed()) {
      const fdepth::DepthNet net = fdepth::load_model(pred_ckpt);
      const fdepth::Tensor image = fdepth::read_image(pred_image);
      fdepth::Tensor out = fdepth::predict_disparity(net, image, pred_pp);
      if (pred_depth) {
        const fs::path dir = pred_manifest.empty() ? fs::path(pred_image).parent_path() : fs::path(pred_manifest);
        const auto m = fdepth::read_manifest(dir.empty() ? fs::path(".") : dir);
        out = fdepth::disparity_to_depth(out, m.baseline, m.focal);
      }
      fdepth::write_image(pred_out, out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
