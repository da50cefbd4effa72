#pragma once

#include <array>
#include <optional>

#include "fdepth/network.hpp"
#include "fdepth/tensor.hpp"

namespace fdepth {

/// Rectified stereo pair. Images are in [0, 1]; gt_disparity is in pixels
/// and is only used for evaluation. A zero ground-truth pixel is invalid.
struct StereoSample {
  Tensor left;
  Tensor right;
  double baseline = 1.0;  // meters
  double focal = 1.0;     // pixels
  std::optional<Tensor> gt_disparity;
  // 1 where the left pixel is also visible in the right image.
  std::optional<Tensor> visible;

  void validate() const;
};

struct LossWeights {
  double alpha_ssim = 0.85;
  // Divided by 2^s at scale s on top of the per-scale factor.
  double smoothness = 0.1;
  double lr_consistency = 1.0;
  double occlusion = 0.01;
  std::array<double, kNumScales> scale_factors{1.0, 0.5, 0.25, 0.125};

  void validate() const;
};

struct LossTerms {
  bool appearance = true;
  bool smoothness = true;
  bool lr_consistency = true;
  bool occlusion = true;
};

using ScaleSet = std::array<bool, kNumScales>;
inline constexpr ScaleSet kAllScales{true, true, true, true};

enum class Eye { kLeft, kRight };

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kDepthEpsilon = 1e-6;

/// Rebuilds the `target` eye's view by sampling `source` (the other eye)
/// horizontally: the left view reads the right image at j - d, the right
/// view reads the left image at j + d. Disparity is in units of width.
Tensor reconstruct(const Tensor& source, const Tensor& disparity, Eye target);

/// SSIM over 3x3 unpadded windows, one value per window and channel.
Tensor ssim(const Tensor& x, const Tensor& y);

/// alpha * mean(clamp((1 - SSIM) / 2, 0, 1)) + (1 - alpha) * mean|target - recon|.
Tensor appearance_loss(const Tensor& target, const Tensor& reconstruction, const LossWeights& w);

/// Edge-aware first-order smoothness: mean |d_x d| e^{-|d_x I|} + mean |d_y d| e^{-|d_y I|},
/// with image gradients averaged over channels.
Tensor smoothness_loss(const Tensor& disparity, const Tensor& image);

/// Average over both eyes of mean |d_this - d_other sampled through d_this|.
Tensor lr_consistency_loss(const Tensor& disp_left, const Tensor& disp_right);

Tensor occlusion_reg(const Tensor& disparity);

/// Image at scales 0..3 by repeated 2x2 average pooling.
std::array<Tensor, kNumScales> image_pyramid(const Tensor& image);

/// Weighted multi-scale objective over both eyes. Scales or terms switched
/// off contribute exactly zero.
Tensor total_loss(const DisparitySet& left, const DisparitySet& right, const StereoSample& sample,
                  const LossWeights& w, const ScaleSet& active_scales = kAllScales,
                  const LossTerms& terms = {});

// Metric depth from pixel disparity, d clamped to kDepthEpsilon first.
Tensor disparity_to_depth(const Tensor& disparity_px, double baseline, double focal);
Tensor depth_to_disparity(const Tensor& depth, double baseline, double focal);

}  // namespace fdepth
