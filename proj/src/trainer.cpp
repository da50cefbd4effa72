#include "fdepth/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fdepth/checkpoint.hpp"
#include "fdepth/image_io.hpp"
#include "fdepth/ops.hpp"
#include "fdepth/optimizer.hpp"

namespace fdepth {

namespace fs = std::filesystem;

StagePlan stage_plan(int stage) {
  switch (stage) {
    case 1:
      return {kAllScales, LossTerms{}};
    case 2:
      return {ScaleSet{true, true, false, false}, LossTerms{}};
    case 3: {
      LossTerms terms;
      terms.smoothness = false;
      terms.occlusion = false;
      return {ScaleSet{true, true, false, false}, terms};
    }
    default:
      throw std::invalid_argument("stage must be 1, 2 or 3");
  }
}

Tensor training_loss(const DepthNet& net, const StereoSample& sample, const LossWeights& w,
                     const StagePlan& plan) {
  const DisparitySet left = net.forward(sample.left);
  const DisparitySet right = net.forward(sample.right);
  return total_loss(left, right, sample, w, plan.scales, plan.terms);
}

void save_model(const fs::path& path, const DepthNet& net) {
  save_checkpoint(path, net.parameters());
  fs::path sidecar = path;
  sidecar += ".arch";
  std::ofstream f(sidecar);
  if (!f) throw std::runtime_error(sidecar.string() + ": cannot open for writing");
  f << format_arch_config(net.config());
}

DepthNet load_model(const fs::path& path) {
  fs::path sidecar = path;
  sidecar += ".arch";
  std::ifstream f(sidecar);
  if (!f) throw std::runtime_error(sidecar.string() + ": missing architecture sidecar");
  DepthNet net(parse_arch_config(f), 0);
  load_checkpoint(path, net.parameters());
  return net;
}

TrainResult run_schedule(const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (!fs::exists(cfg.dataset_dir / "manifest.txt")) {
    throw std::runtime_error(cfg.dataset_dir.string() + ": no dataset manifest");
  }
  const std::vector<StereoSample> data = load_dataset(cfg.dataset_dir);
  if (data.empty()) throw std::runtime_error(cfg.dataset_dir.string() + ": dataset is empty");
  fs::create_directories(cfg.checkpoint_dir);

  TrainResult result{DepthNet(cfg.arch, cfg.seed), {}, {}};
  DepthNet& net = result.net;
  std::vector<Tensor> params;
  for (const auto& p : net.parameters().entries()) params.push_back(p.value);
  OptimizerState state;
  std::mt19937_64 rng(cfg.seed);

  std::ofstream log(cfg.checkpoint_dir / "train_log.csv");
  if (!log) throw std::runtime_error((cfg.checkpoint_dir / "train_log.csv").string() + ": cannot open");
  log << "epoch,stage,mean_loss\n";
  log.precision(17);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
  int epoch = 0;
  for (int stage = 1; stage <= 3; ++stage) {
    const StagePlan plan = stage_plan(stage);
    for (int e = 0; e < cfg.stage_epochs[static_cast<std::size_t>(stage - 1)]; ++e) {
      std::shuffle(order.begin(), order.end(), rng);
      double sum = 0.0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        net.parameters().zero_grad();
        for (std::size_t k = start; k < stop; ++k) {
          const Tensor loss = training_loss(net, data[order[k]], cfg.loss, plan);
          sum += loss.item();
          scale(loss, inv_batch).backward();
        }
        adam_step(params, state, cfg.adam);
      }
      const EpochRecord rec{++epoch, stage, sum / static_cast<double>(data.size())};
      result.log.push_back(rec);
      log << rec.epoch << "," << rec.stage << "," << rec.mean_loss << "\n" << std::flush;
      if (on_epoch) on_epoch(rec);
    }
    const fs::path ckpt = cfg.checkpoint_dir / ("stage" + std::to_string(stage) + ".ckpt");
    save_model(ckpt, net);
    result.checkpoints.push_back(ckpt);
  }
  const fs::path final_ckpt = cfg.checkpoint_dir / "final.ckpt";
  save_model(final_ckpt, net);
  result.checkpoints.push_back(final_ckpt);
  return result;
}

Tensor predict_disparity(const DepthNet& net, const Tensor& image, bool pp) {
  const double width = static_cast<double>(image.shape().w);
  const Tensor disp = net.forward(image.detach()).scales[0].detach();
  if (!pp) return scale(disp, width);
  const Tensor mirrored = net.forward(flip_horizontal(image.detach())).scales[0].detach();
  return scale(postprocess(disp, mirrored), width);
}

EvalReport evaluate(const DepthNet& net, const std::vector<StereoSample>& samples, bool pp, double cap) {
  EvalReport report;
  double err_sum = 0.0;
  std::size_t err_count = 0;
  for (const StereoSample& s : samples) {
    if (!s.gt_disparity) continue;
    const Tensor pred = predict_disparity(net, s.left, pp);
    const Tensor& gt = *s.gt_disparity;
    std::vector<double> mask(gt.values().size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
      const bool valid = gt.values()[i] > 0.0 && (!s.visible || s.visible->values()[i] > 0.5);
      mask[i] = valid ? 1.0 : 0.0;
      if (valid) {
        err_sum += std::abs(pred.values()[i] - gt.values()[i]);
        ++err_count;
      }
    }
    const Tensor m = Tensor::from_values(gt.shape(), std::move(mask));
    // Invalid gt pixels map to depth 0, which the metric mask drops.
    std::vector<double> gt_depth(gt.values().size(), 0.0);
    for (std::size_t i = 0; i < gt_depth.size(); ++i) {
      if (gt.values()[i] > 0.0) gt_depth[i] = s.baseline * s.focal / gt.values()[i];
    }
    DepthMetrics row = compute_metrics(disparity_to_depth(pred, s.baseline, s.focal),
                                       Tensor::from_values(gt.shape(), std::move(gt_depth)), m, cap);
    row.d1_all = compute_d1(pred, gt, m);
    report.per_sample.push_back(row);
  }
  if (report.per_sample.empty()) throw std::invalid_argument("evaluate: no sample carries ground truth");
  report.aggregate = average(report.per_sample);
  report.mean_abs_disparity_error = err_sum / static_cast<double>(err_count);
  return report;
}

}  // namespace fdepth
