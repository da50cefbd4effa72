#include "fdepth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "fdepth/ops.hpp"

namespace fdepth {

namespace {

void require_same(const char* op, const Shape& a, const Shape& b) {
  if (!(a == b)) {
    throw std::invalid_argument(std::string(op) + ": shape " + a.str() + " does not match " + b.str());
  }
}

}  // namespace

DepthMetrics compute_metrics(const Tensor& pred_depth, const Tensor& gt_depth, const Tensor& mask,
                             double cap, double min_depth) {
  require_same("compute_metrics", pred_depth.shape(), gt_depth.shape());
  require_same("compute_metrics", mask.shape(), gt_depth.shape());
  const auto p = pred_depth.values();
  const auto g = gt_depth.values();
  const auto m = mask.values();

  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
  std::size_t d1 = 0, d2 = 0, d3 = 0, count = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(m[i] > 0.5 && g[i] > min_depth && g[i] <= cap)) continue;
    const double pred = std::clamp(p[i], min_depth, cap);
    const double gt = g[i];
    const double diff = pred - gt;
    abs_rel += std::abs(diff) / gt;
    sq_rel += diff * diff / gt;
    sq += diff * diff;
    const double log_diff = std::log(pred) - std::log(gt);
    sq_log += log_diff * log_diff;
    const double ratio = std::max(pred / gt, gt / pred);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("compute_metrics: mask selects no valid pixel");
  const double n = static_cast<double>(count);
  DepthMetrics out;
  out.abs_rel = abs_rel / n;
  out.sq_rel = sq_rel / n;
  out.rmse = std::sqrt(sq / n);
  out.rmse_log = std::sqrt(sq_log / n);
  out.delta1 = static_cast<double>(d1) / n;
  out.delta2 = static_cast<double>(d2) / n;
  out.delta3 = static_cast<double>(d3) / n;
  return out;
}

double compute_d1(const Tensor& pred_disp, const Tensor& gt_disp, const Tensor& mask) {
  require_same("compute_d1", pred_disp.shape(), gt_disp.shape());
  require_same("compute_d1", mask.shape(), gt_disp.shape());
  const auto p = pred_disp.values();
  const auto g = gt_disp.values();
  const auto m = mask.values();
  std::size_t outliers = 0, count = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(m[i] > 0.5 && g[i] > 0.0)) continue;
    const double err = std::abs(p[i] - g[i]);
    outliers += (err > 3.0 && err > 0.05 * std::abs(g[i]));
    ++count;
  }
  if (count == 0) throw std::invalid_argument("compute_d1: mask selects no valid pixel");
  return 100.0 * static_cast<double>(outliers) / static_cast<double>(count);
}

Tensor postprocess(const Tensor& disp, const Tensor& disp_of_flipped) {
  require_same("postprocess", disp.shape(), disp_of_flipped.shape());
  const Shape s = disp.shape();
  const Tensor unflipped = flip_horizontal(disp_of_flipped.detach());
  const auto a = disp.values();
  const auto b = unflipped.values();
  // Left-band weight of the un-mirrored map: 1 at column 0, fading to 0 at
  // 5% of the width.
  std::vector<double> left_w(static_cast<std::size_t>(s.w));
  for (std::int64_t j = 0; j < s.w; ++j) {
    const double x = s.w > 1 ? static_cast<double>(j) / static_cast<double>(s.w - 1) : 0.0;
    left_w[static_cast<std::size_t>(j)] = 1.0 - std::clamp(20.0 * (x - 0.05), 0.0, 1.0);
  }
  std::vector<double> out(a.size());
  for (std::int64_t r = 0; r < s.n * s.c * s.h; ++r) {
    for (std::int64_t j = 0; j < s.w; ++j) {
      const auto k = static_cast<std::size_t>(r * s.w + j);
      const double wl = left_w[static_cast<std::size_t>(j)];
      const double wr = left_w[static_cast<std::size_t>(s.w - 1 - j)];
      out[k] = wr * a[k] + wl * b[k] + (1.0 - wl - wr) * 0.5 * (a[k] + b[k]);
    }
  }
  return Tensor::from_values(s, std::move(out));
}

DepthMetrics average(std::span<const DepthMetrics> rows) {
  if (rows.empty()) throw std::invalid_argument("average: no metric rows");
  DepthMetrics out;
  bool all_d1 = true;
  double d1 = 0.0;
  for (const auto& r : rows) {
    out.abs_rel += r.abs_rel;
    out.sq_rel += r.sq_rel;
    out.rmse += r.rmse;
    out.rmse_log += r.rmse_log;
    out.delta1 += r.delta1;
    out.delta2 += r.delta2;
    out.delta3 += r.delta3;
    if (r.d1_all) d1 += *r.d1_all; else all_d1 = false;
  }
  const double n = static_cast<double>(rows.size());
  out.abs_rel /= n;
  out.sq_rel /= n;
  out.rmse /= n;
  out.rmse_log /= n;
  out.delta1 /= n;
  out.delta2 /= n;
  out.delta3 /= n;
  if (all_d1) out.d1_all = d1 / n;
  return out;
}

std::string metrics_csv_header() { return "abs_rel,sq_rel,rmse,rmse_log,d1_all,delta1,delta2,delta3"; }

std::string metrics_csv_row(const DepthMetrics& m) {
  char buf[256];
  const double d1 = m.d1_all.value_or(std::nan(""));
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", m.abs_rel, m.sq_rel, m.rmse,
                m.rmse_log, d1, m.delta1, m.delta2, m.delta3);
  return buf;
}

}  // namespace fdepth
