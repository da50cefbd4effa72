#include "fdepth/photometric.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fdepth/ops.hpp"

namespace fdepth {

void StereoSample::validate() const {
  if (!(left.shape() == right.shape())) {
    throw std::invalid_argument("stereo images differ in shape: " + left.shape().str() + " vs " +
                                right.shape().str());
  }
  if (!(baseline > 0.0) || !(focal > 0.0)) {
    throw std::invalid_argument("baseline and focal length must be positive");
  }
  const Shape one{left.shape().n, 1, left.shape().h, left.shape().w};
  if (gt_disparity && !(gt_disparity->shape() == one)) {
    throw std::invalid_argument("ground-truth disparity " + gt_disparity->shape().str() +
                                " does not match " + one.str());
  }
  if (visible && !(visible->shape() == one)) {
    throw std::invalid_argument("visibility mask " + visible->shape().str() + " does not match " +
                                one.str());
  }
}

void LossWeights::validate() const {
  if (!(alpha_ssim >= 0.0 && alpha_ssim <= 1.0)) {
    throw std::invalid_argument("alpha_ssim must lie in [0, 1]");
  }
  if (smoothness < 0.0 || lr_consistency < 0.0 || occlusion < 0.0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  for (double f : scale_factors) {
    if (f < 0.0) throw std::invalid_argument("scale factors must be non-negative");
  }
}

Tensor reconstruct(const Tensor& source, const Tensor& disparity, Eye target) {
  const double sign = target == Eye::kLeft ? -1.0 : 1.0;
  return grid_sample_bilinear(source, scale(disparity, sign));
}

Tensor ssim(const Tensor& x, const Tensor& y) {
  if (!(x.shape() == y.shape())) {
    throw std::invalid_argument("ssim: shapes differ, " + x.shape().str() + " vs " + y.shape().str());
  }
  const Tensor mu_x = avg_pool2d(x, 3, 1);
  const Tensor mu_y = avg_pool2d(y, 3, 1);
  const Tensor mu_xx = square(mu_x);
  const Tensor mu_yy = square(mu_y);
  const Tensor mu_xy = mul(mu_x, mu_y);
  const Tensor sigma_x = sub(avg_pool2d(square(x), 3, 1), mu_xx);
  const Tensor sigma_y = sub(avg_pool2d(square(y), 3, 1), mu_yy);
  const Tensor sigma_xy = sub(avg_pool2d(mul(x, y), 3, 1), mu_xy);
  const Tensor num = mul(add_scalar(scale(mu_xy, 2.0), kSsimC1), add_scalar(scale(sigma_xy, 2.0), kSsimC2));
  const Tensor den = mul(add_scalar(add(mu_xx, mu_yy), kSsimC1), add_scalar(add(sigma_x, sigma_y), kSsimC2));
  return div(num, den);
}

Tensor appearance_loss(const Tensor& target, const Tensor& reconstruction, const LossWeights& w) {
  if (!(target.shape() == reconstruction.shape())) {
    throw std::invalid_argument("appearance_loss: shapes differ, " + target.shape().str() + " vs " +
                                reconstruction.shape().str());
  }
  const Tensor dssim = mean(clamp(scale(add_scalar(scale(ssim(target, reconstruction), -1.0), 1.0), 0.5), 0.0, 1.0));
  const Tensor l1 = mean(abs(sub(target, reconstruction)));
  return add(scale(dssim, w.alpha_ssim), scale(l1, 1.0 - w.alpha_ssim));
}

Tensor smoothness_loss(const Tensor& disparity, const Tensor& image) {
  const AxisSet channels{false, true, false, false};
  const Tensor weight_x = exp(scale(mean(abs(gradient_x(image)), channels), -1.0));
  const Tensor weight_y = exp(scale(mean(abs(gradient_y(image)), channels), -1.0));
  const Tensor sx = mean(mul(abs(gradient_x(disparity)), weight_x));
  const Tensor sy = mean(mul(abs(gradient_y(disparity)), weight_y));
  return add(sx, sy);
}

Tensor lr_consistency_loss(const Tensor& disp_left, const Tensor& disp_right) {
  if (!(disp_left.shape() == disp_right.shape())) {
    throw std::invalid_argument("lr_consistency_loss: shapes differ");
  }
  const Tensor right_in_left = reconstruct(disp_right, disp_left, Eye::kLeft);
  const Tensor left_in_right = reconstruct(disp_left, disp_right, Eye::kRight);
  return scale(add(mean(abs(sub(disp_left, right_in_left))), mean(abs(sub(disp_right, left_in_right)))),
               0.5);
}

Tensor occlusion_reg(const Tensor& disparity) { return mean(abs(disparity)); }

std::array<Tensor, kNumScales> image_pyramid(const Tensor& image) {
  std::array<Tensor, kNumScales> out;
  out[0] = image;
  for (std::size_t s = 1; s < out.size(); ++s) out[s] = avg_pool2d(out[s - 1], 2, 2);
  return out;
}

Tensor total_loss(const DisparitySet& left, const DisparitySet& right, const StereoSample& sample,
                  const LossWeights& w, const ScaleSet& active_scales, const LossTerms& terms) {
  if (std::none_of(active_scales.begin(), active_scales.end(), [](bool b) { return b; })) {
    throw std::invalid_argument("total_loss: no active scales");
  }
  sample.validate();
  w.validate();
  const auto left_img = image_pyramid(sample.left);
  const auto right_img = image_pyramid(sample.right);

  Tensor total = Tensor::scalar(0.0);
  for (std::size_t s = 0; s < kNumScales; ++s) {
    if (!active_scales[s]) continue;
    const Tensor& dl = left.scales[s];
    const Tensor& dr = right.scales[s];
    Tensor per_scale = Tensor::scalar(0.0);
    if (terms.appearance) {
      per_scale = add(per_scale, appearance_loss(left_img[s], reconstruct(right_img[s], dl, Eye::kLeft), w));
      per_scale = add(per_scale, appearance_loss(right_img[s], reconstruct(left_img[s], dr, Eye::kRight), w));
    }
    if (terms.smoothness && w.smoothness > 0.0) {
      const double weight = w.smoothness / std::ldexp(1.0, static_cast<int>(s));
      per_scale = add(per_scale, scale(add(smoothness_loss(dl, left_img[s]), smoothness_loss(dr, right_img[s])), weight));
    }
    if (terms.lr_consistency && w.lr_consistency > 0.0) {
      per_scale = add(per_scale, scale(lr_consistency_loss(dl, dr), w.lr_consistency));
    }
    if (terms.occlusion && w.occlusion > 0.0) {
      per_scale = add(per_scale, scale(add(occlusion_reg(dl), occlusion_reg(dr)), w.occlusion));
    }
    total = add(total, scale(per_scale, w.scale_factors[s]));
  }
  return total;
}

Tensor disparity_to_depth(const Tensor& disparity_px, double baseline, double focal) {
  std::vector<double> out(disparity_px.values().begin(), disparity_px.values().end());
  const double bf = baseline * focal;
  for (double& v : out) v = bf / std::max(v, kDepthEpsilon);
  return Tensor::from_values(disparity_px.shape(), std::move(out));
}

Tensor depth_to_disparity(const Tensor& depth, double baseline, double focal) {
  // bf/d is its own inverse.
  return disparity_to_depth(depth, baseline, focal);
}

}  // namespace fdepth
