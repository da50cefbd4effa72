#pragma once

#include <array>
#include <optional>
#include <vector>

#include "fdepth/tensor.hpp"

namespace fdepth {

// Convolution with square odd kernels and symmetric zero padding.
// weight is (out_ch, in_ch, k, k); bias, when given, is (1, out_ch, 1, 1).
Tensor conv2d(const Tensor& input, const Tensor& weight,
              const std::optional<Tensor>& bias, int stride, int padding);

// Elementwise unary ops.
Tensor elu(const Tensor& x, double alpha = 1.0);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
// Gradient is zero where the input lies outside [lo, hi].
Tensor clamp(const Tensor& x, double lo, double hi);

// Binary ops with broadcasting: per axis the extents must match or one
// operand must have extent 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Shape broadcast_shape(const Shape& a, const Shape& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor upsample_nearest(const Tensor& x, int factor);

// (N, C*r*r, H, W) -> (N, C, H*r, W*r); channel c*r*r + dy*r + dx lands at
// row h*r + dy, column w*r + dx.
Tensor pixel_shuffle(const Tensor& x, int factor);
Tensor pixel_unshuffle(const Tensor& x, int factor);

// Horizontal bilinear resampling for rectified stereo. Output pixel (i, j)
// reads source row i at column j + offset(i, j) * W, clamped to the border.
Tensor grid_sample_bilinear(const Tensor& source, const Tensor& x_offsets);

enum class Reduce { kSum, kMean };
using AxisSet = std::array<bool, 4>;
inline constexpr AxisSet kAllAxes{true, true, true, true};

// Reduced axes keep extent 1.
Tensor reduce(const Tensor& x, Reduce kind, AxisSet axes);
inline Tensor sum(const Tensor& x, AxisSet axes = kAllAxes) {
  return reduce(x, Reduce::kSum, axes);
}
inline Tensor mean(const Tensor& x, AxisSet axes = kAllAxes) {
  return reduce(x, Reduce::kMean, axes);
}

Tensor concat_channels(const std::vector<Tensor>& inputs);
Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t count);

// Unpadded average pooling over k x k windows.
Tensor avg_pool2d(const Tensor& x, int kernel, int stride);

// Forward differences along width (W-1 wide) and height (H-1 tall).
Tensor gradient_x(const Tensor& x);
Tensor gradient_y(const Tensor& x);

Tensor flip_horizontal(const Tensor& x);

}  // namespace fdepth
