#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "fdepth/config.hpp"
#include "fdepth/metrics.hpp"
#include "fdepth/network.hpp"
#include "fdepth/photometric.hpp"

namespace fdepth {

/// Scales and loss terms active in a training stage (1, 2 or 3).
struct StagePlan {
  ScaleSet scales;
  LossTerms terms;
};
StagePlan stage_plan(int stage);

/// Objective for one stereo pair: the network runs on each view and
/// total_loss ties the two disparity sets together.
Tensor training_loss(const DepthNet& net, const StereoSample& sample, const LossWeights& w,
                     const StagePlan& plan);

struct EpochRecord {
  int epoch = 0;  // 1-based, counted across stages
  int stage = 0;
  double mean_loss = 0.0;
};

struct TrainResult {
  DepthNet net;
  std::vector<EpochRecord> log;
  std::vector<std::filesystem::path> checkpoints;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Full staged schedule. Writes train_log.csv (epoch,stage,mean_loss) and
/// stage1/2/3.ckpt plus final.ckpt, each with an .arch sidecar, into the
/// checkpoint directory. Throws before any compute when the dataset or its
/// manifest is missing or empty.
TrainResult run_schedule(const TrainConfig& cfg, const EpochCallback& on_epoch = {});

void save_model(const std::filesystem::path& path, const DepthNet& net);
/// Rebuilds the network from the .arch sidecar and loads the weights.
DepthNet load_model(const std::filesystem::path& path);

/// Scale-0 disparity in pixels, shape (1,1,H,W). With `pp` the mirrored
/// image is also run and the two maps are blended by postprocess.
Tensor predict_disparity(const DepthNet& net, const Tensor& image, bool pp);

struct EvalReport {
  std::vector<DepthMetrics> per_sample;
  DepthMetrics aggregate;
  // Mean |pred - gt| in pixels over all non-occluded ground-truth pixels.
  double mean_abs_disparity_error = 0.0;
};

/// Metrics over samples that carry ground truth; gt disparity 0 is invalid.
EvalReport evaluate(const DepthNet& net, const std::vector<StereoSample>& samples, bool pp,
                    double cap = kDefaultCap);

}  // namespace fdepth
