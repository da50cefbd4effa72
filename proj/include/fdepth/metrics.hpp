#pragma once

#include <optional>
#include <span>
#include <string>

#include "fdepth/tensor.hpp"

namespace fdepth {

/// Error columns of the usual depth benchmark tables. d1_all is a percent
/// and only present when disparities were available.
struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;      // meters
  double rmse_log = 0.0;
  std::optional<double> d1_all;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
};

inline constexpr double kMinDepth = 1e-3;
inline constexpr double kDefaultCap = 80.0;

/// Pixels count when mask > 0.5 and min_depth < gt <= cap; predictions are
/// clamped to [min_depth, cap]. Throws when no pixel qualifies.
DepthMetrics compute_metrics(const Tensor& pred_depth, const Tensor& gt_depth, const Tensor& mask,
                             double cap = kDefaultCap, double min_depth = kMinDepth);

/// Percent of pixels (mask > 0.5, gt > 0) whose error exceeds both 3 px and
/// 5% of the ground truth.
double compute_d1(const Tensor& pred_disp, const Tensor& gt_disp, const Tensor& mask);

/// Blends a disparity map with the un-mirrored map predicted for the
/// mirrored image. Outside 5%-wide border bands the two are averaged; inside
/// the left band the un-mirrored map takes over, and symmetrically on the
/// right.
Tensor postprocess(const Tensor& disp, const Tensor& disp_of_flipped);

/// Mean of each column over a set of per-sample reports. d1_all is kept only
/// if every sample has it.
DepthMetrics average(std::span<const DepthMetrics> rows);

// CSV with columns abs_rel,sq_rel,rmse,rmse_log,d1_all,delta1,delta2,delta3.
std::string metrics_csv_header();
std::string metrics_csv_row(const DepthMetrics& m);

}  // namespace fdepth
