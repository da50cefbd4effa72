#include "fdepth/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fdepth {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BackwardFn = std::function<void(std::span<const double>, std::span<const std::span<double>>)>;

Tensor make_result(const char* kind, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->value = std::move(values);
  impl->requires_grad = needs_grad;
  if (needs_grad) {
    auto node = std::make_shared<detail::Node>();
    node->kind = kind;
    for (auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(backward);
    impl->node = std::move(node);
  }
  Tensor out(std::move(impl));
  require_finite(out, kind);
  return out;
}

std::size_t offset(const Shape& s, std::int64_t n, std::int64_t c, std::int64_t h,
                   std::int64_t w) {
  return static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w);
}

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

// ---------------------------------------------------------------- unary

template <typename Fwd, typename Deriv>
Tensor unary(const char* kind, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  auto xi = x.impl();
  // deriv(x, y) receives the input and the forward output.
  auto saved = std::make_shared<std::vector<double>>(out);
  return make_result(kind, x.shape(), std::move(out), {x},
                     [xi, saved, deriv](std::span<const double> g,
                                        std::span<const std::span<double>> gin) {
                       const auto& xv = xi->value;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         gin[0][i] += g[i] * deriv(xv[i], (*saved)[i]);
                       }
                     });
}

// ---------------------------------------------------------------- binary

struct Broadcast {
  Shape out;
  std::array<std::int64_t, 4> stride_a{};
  std::array<std::int64_t, 4> stride_b{};
};

std::array<std::int64_t, 4> broadcast_strides(const Shape& s, const Shape& out) {
  const std::array<std::int64_t, 4> natural{s.c * s.h * s.w, s.h * s.w, s.w, 1};
  std::array<std::int64_t, 4> strides{};
  for (int ax = 0; ax < 4; ++ax) strides[ax] = (s[ax] == 1 && out[ax] != 1) ? 0 : natural[ax];
  return strides;
}

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast plan;
  std::array<std::int64_t, 4> ext{};
  for (int ax = 0; ax < 4; ++ax) {
    if (a[ax] == b[ax] || b[ax] == 1) {
      ext[ax] = a[ax];
    } else if (a[ax] == 1) {
      ext[ax] = b[ax];
    } else {
      shape_error(op, "cannot broadcast " + a.str() + " with " + b.str());
    }
  }
  plan.out = Shape{ext[0], ext[1], ext[2], ext[3]};
  plan.stride_a = broadcast_strides(a, plan.out);
  plan.stride_b = broadcast_strides(b, plan.out);
  return plan;
}

// Visits every output element with the matching flat indices of a and b.
template <typename Visit>
void for_each_broadcast(const Broadcast& p, Visit visit) {
  std::size_t o = 0;
  for (std::int64_t n = 0; n < p.out.n; ++n) {
    for (std::int64_t c = 0; c < p.out.c; ++c) {
      for (std::int64_t h = 0; h < p.out.h; ++h) {
        std::int64_t ia = n * p.stride_a[0] + c * p.stride_a[1] + h * p.stride_a[2];
        std::int64_t ib = n * p.stride_b[0] + c * p.stride_b[1] + h * p.stride_b[2];
        for (std::int64_t w = 0; w < p.out.w; ++w, ++o) {
          visit(o, static_cast<std::size_t>(ia), static_cast<std::size_t>(ib));
          ia += p.stride_a[3];
          ib += p.stride_b[3];
        }
      }
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

Tensor binary(const char* kind_name, BinaryKind kind, const Tensor& a, const Tensor& b) {
  const Broadcast plan = plan_broadcast(kind_name, a.shape(), b.shape());
  std::vector<double> out(static_cast<std::size_t>(plan.out.numel()));
  const auto av = a.values();
  const auto bv = b.values();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    switch (kind) {
      case BinaryKind::kAdd: out[o] = av[ia] + bv[ib]; break;
      case BinaryKind::kSub: out[o] = av[ia] - bv[ib]; break;
      case BinaryKind::kMul: out[o] = av[ia] * bv[ib]; break;
      case BinaryKind::kDiv: out[o] = av[ia] / bv[ib]; break;
    }
  });
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result(kind_name, plan.out, std::move(out), {a, b},
                     [plan, kind, ai, bi](std::span<const double> g,
                                          std::span<const std::span<double>> gin) {
                       const auto& av = ai->value;
                       const auto& bv = bi->value;
                       const bool want_a = !gin[0].empty();
                       const bool want_b = !gin[1].empty();
                       for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                         switch (kind) {
                           case BinaryKind::kAdd:
                             if (want_a) gin[0][ia] += g[o];
                             if (want_b) gin[1][ib] += g[o];
                             break;
                           case BinaryKind::kSub:
                             if (want_a) gin[0][ia] += g[o];
                             if (want_b) gin[1][ib] -= g[o];
                             break;
                           case BinaryKind::kMul:
                             if (want_a) gin[0][ia] += g[o] * bv[ib];
                             if (want_b) gin[1][ib] += g[o] * av[ia];
                             break;
                           case BinaryKind::kDiv:
                             if (want_a) gin[0][ia] += g[o] / bv[ib];
                             if (want_b) gin[1][ib] -= g[o] * av[ia] / (bv[ib] * bv[ib]);
                             break;
                         }
                       });
                     });
}

// ---------------------------------------------------------------- conv helpers

struct ConvGeometry {
  std::int64_t channels, height, width;
  std::int64_t kernel, stride, pad;
  std::int64_t out_h, out_w;
};

// cols is (channels*k*k) x (out_h*out_w), row-major.
void im2col(const double* img, const ConvGeometry& g, double* cols) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ky = 0; ky < g.kernel; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
        double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = img + (c * g.height + iy) * g.width;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_accumulate(const double* cols, const ConvGeometry& g, double* img) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ky = 0; ky < g.kernel; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
        const double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const double* src = row + oy * g.out_w;
          double* dst = img + (c * g.height + iy) * g.width;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ==================================================================== conv2d

Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              int stride, int padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (stride != 1 && stride != 2) {
    shape_error("conv2d", "stride must be 1 or 2, got " + std::to_string(stride));
  }
  if (ws.h != ws.w || ws.h % 2 == 0) {
    shape_error("conv2d", "weight " + ws.str() + " must have a square odd kernel");
  }
  if (ws.c != is.c) {
    shape_error("conv2d", "input " + is.str() + " has " + std::to_string(is.c) +
                              " channels but weight " + ws.str() + " expects " +
                              std::to_string(ws.c));
  }
  if (padding < 0) shape_error("conv2d", "negative padding");
  if (bias && !(bias->shape() == Shape{1, ws.n, 1, 1})) {
    shape_error("conv2d", "bias " + bias->shape().str() + " does not match " +
                              std::to_string(ws.n) + " output channels");
  }
  ConvGeometry g{is.c, is.h, is.w, ws.h, stride, padding, 0, 0};
  g.out_h = (is.h + 2 * padding - ws.h) / stride + 1;
  g.out_w = (is.w + 2 * padding - ws.h) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) {
    shape_error("conv2d", "input " + is.str() + " too small for kernel " + ws.str());
  }
  const std::int64_t out_ch = ws.n;
  const std::int64_t patch = is.c * ws.h * ws.w;
  const std::int64_t plane = g.out_h * g.out_w;
  const bool direct = ws.h == 1 && stride == 1 && padding == 0;

  // Every Eigen operand lives in Eigen-owned (aligned) storage. Eigen picks
  // packet or scalar code paths from pointer alignment, and the two round
  // differently, so results on raw vector memory would vary run to run.
  auto wmat = std::make_shared<RowMatrix>(Eigen::Map<const RowMatrix>(weight.values().data(), out_ch, patch));
  // Column matrices per batch item are kept for the weight gradient.
  auto cols = std::make_shared<std::vector<RowMatrix>>();
  cols->reserve(static_cast<std::size_t>(is.n));

  const Shape out_shape{is.n, out_ch, g.out_h, g.out_w};
  std::vector<double> out(static_cast<std::size_t>(out_shape.numel()));
  const auto bv = bias ? bias->values() : std::span<const double>{};
  for (std::int64_t n = 0; n < is.n; ++n) {
    const double* img = input.values().data() + n * is.c * is.h * is.w;
    RowMatrix& col = cols->emplace_back(patch, plane);
    if (direct) {
      std::copy(img, img + patch * plane, col.data());
    } else {
      im2col(img, g, col.data());
    }
    const RowMatrix prod = *wmat * col;
    double* dst = out.data() + n * out_ch * plane;
    for (std::int64_t o = 0; o < out_ch; ++o) {
      const double b = bias ? bv[static_cast<std::size_t>(o)] : 0.0;
      for (std::int64_t k = 0; k < plane; ++k) dst[o * plane + k] = prod(o, k) + b;
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  return make_result(
      "conv2d", out_shape, std::move(out), std::move(inputs),
      [g, is, out_ch, patch, plane, direct, cols, wmat](std::span<const double> gout,
                                                        std::span<const std::span<double>> gin) {
        for (std::int64_t n = 0; n < is.n; ++n) {
          const RowMatrix gmat = Eigen::Map<const RowMatrix>(gout.data() + n * out_ch * plane, out_ch, plane);
          const RowMatrix& col = (*cols)[static_cast<std::size_t>(n)];
          if (!gin[1].empty()) {
            const RowMatrix gw = gmat * col.transpose();
            for (std::int64_t k = 0; k < out_ch * patch; ++k) gin[1][static_cast<std::size_t>(k)] += gw.data()[k];
          }
          if (gin.size() > 2 && !gin[2].empty()) {
            for (std::int64_t o = 0; o < out_ch; ++o) {
              double acc = 0.0;
              for (std::int64_t k = 0; k < plane; ++k) acc += gmat(o, k);
              gin[2][static_cast<std::size_t>(o)] += acc;
            }
          }
          if (!gin[0].empty()) {
            double* gimg = gin[0].data() + n * is.c * is.h * is.w;
            const RowMatrix gc = wmat->transpose() * gmat;
            if (direct) {
              for (std::int64_t k = 0; k < patch * plane; ++k) gimg[k] += gc.data()[k];
            } else {
              col2im_accumulate(gc.data(), g, gimg);
            }
          }
        }
      });
}

// ==================================================================== unary

Tensor elu(const Tensor& x, double alpha) {
  return unary(
      "elu", x, [alpha](double v) { return v > 0.0 ? v : alpha * std::expm1(v); },
      [alpha](double v, double y) { return v > 0.0 ? 1.0 : y + alpha; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double off) {
  return unary(
      "add_scalar", x, [off](double v) { return v + off; }, [](double, double) { return 1.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ==================================================================== binary

Shape broadcast_shape(const Shape& a, const Shape& b) {
  return plan_broadcast("broadcast", a, b).out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinaryKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinaryKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinaryKind::kMul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary("div", BinaryKind::kDiv, a, b); }

// ==================================================================== resampling

Tensor upsample_nearest(const Tensor& x, int factor) {
  if (factor < 1) shape_error("upsample_nearest", "factor must be >= 1");
  const Shape s = x.shape();
  const Shape os{s.n, s.c, s.h * factor, s.w * factor};
  std::vector<double> out(static_cast<std::size_t>(os.numel()));
  const auto xv = x.values();
  std::size_t o = 0;
  for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
    for (std::int64_t y = 0; y < os.h; ++y) {
      const double* src = xv.data() + (nc * s.h + y / factor) * s.w;
      for (std::int64_t xx = 0; xx < os.w; ++xx) out[o++] = src[xx / factor];
    }
  }
  return make_result("upsample_nearest", os, std::move(out), {x},
                     [s, os, factor](std::span<const double> g,
                                     std::span<const std::span<double>> gin) {
                       std::size_t o = 0;
                       for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
                         for (std::int64_t y = 0; y < os.h; ++y) {
                           double* dst = gin[0].data() + (nc * s.h + y / factor) * s.w;
                           for (std::int64_t xx = 0; xx < os.w; ++xx) dst[xx / factor] += g[o++];
                         }
                       }
                     });
}

namespace {

// Flat source index in the (N, C*r*r, H, W) tensor for every element of the
// shuffled (N, C, H*r, W*r) tensor.
std::vector<std::size_t> shuffle_map(const Shape& packed, int r) {
  const std::int64_t oc = packed.c / (r * r);
  const std::int64_t oh = packed.h * r;
  const std::int64_t ow = packed.w * r;
  std::vector<std::size_t> map(static_cast<std::size_t>(packed.numel()));
  std::size_t o = 0;
  for (std::int64_t n = 0; n < packed.n; ++n) {
    for (std::int64_t c = 0; c < oc; ++c) {
      for (std::int64_t y = 0; y < oh; ++y) {
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          const std::int64_t src_c = c * r * r + (y % r) * r + (xx % r);
          map[o++] = offset(packed, n, src_c, y / r, xx / r);
        }
      }
    }
  }
  return map;
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, int factor) {
  const Shape s = x.shape();
  if (factor < 1 || s.c % (factor * factor) != 0) {
    shape_error("pixel_shuffle", "channel count " + std::to_string(s.c) +
                                     " is not divisible by " + std::to_string(factor * factor));
  }
  const Shape os{s.n, s.c / (factor * factor), s.h * factor, s.w * factor};
  auto map = std::make_shared<std::vector<std::size_t>>(shuffle_map(s, factor));
  std::vector<double> out(map->size());
  const auto xv = x.values();
  for (std::size_t o = 0; o < map->size(); ++o) out[o] = xv[(*map)[o]];
  return make_result("pixel_shuffle", os, std::move(out), {x},
                     [map](std::span<const double> g, std::span<const std::span<double>> gin) {
                       for (std::size_t o = 0; o < map->size(); ++o) gin[0][(*map)[o]] += g[o];
                     });
}

Tensor pixel_unshuffle(const Tensor& x, int factor) {
  const Shape s = x.shape();
  if (factor < 1 || s.h % factor != 0 || s.w % factor != 0) {
    shape_error("pixel_unshuffle", "extents of " + s.str() + " are not divisible by " +
                                       std::to_string(factor));
  }
  const Shape os{s.n, s.c * factor * factor, s.h / factor, s.w / factor};
  auto map = std::make_shared<std::vector<std::size_t>>(shuffle_map(os, factor));
  std::vector<double> out(map->size());
  const auto xv = x.values();
  for (std::size_t o = 0; o < map->size(); ++o) out[(*map)[o]] = xv[o];
  return make_result("pixel_unshuffle", os, std::move(out), {x},
                     [map](std::span<const double> g, std::span<const std::span<double>> gin) {
                       for (std::size_t o = 0; o < map->size(); ++o) gin[0][o] += g[(*map)[o]];
                     });
}

Tensor grid_sample_bilinear(const Tensor& source, const Tensor& x_offsets) {
  const Shape s = source.shape();
  const Shape os = x_offsets.shape();
  if (!(os == Shape{s.n, 1, s.h, s.w})) {
    shape_error("grid_sample_bilinear", "offsets " + os.str() + " do not match source " +
                                            s.str() + " (expected " +
                                            Shape{s.n, 1, s.h, s.w}.str() + ")");
  }
  // Per output pixel: left tap, right tap, fractional weight, and whether
  // the sample position moves with the offset (false when clamped).
  struct Tap {
    std::int64_t x0, x1;
    double frac;
    bool live;
  };
  auto taps = std::make_shared<std::vector<Tap>>(static_cast<std::size_t>(os.numel()));
  const auto ov = x_offsets.values();
  const double width = static_cast<double>(s.w);
  const double max_x = width - 1.0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t i = 0; i < s.h; ++i) {
      for (std::int64_t j = 0; j < s.w; ++j) {
        const std::size_t k = offset(os, n, 0, i, j);
        double xs = static_cast<double>(j) + ov[k] * width;
        bool live = true;
        if (xs <= 0.0) {
          live = xs == 0.0;
          xs = 0.0;
        } else if (xs >= max_x) {
          live = false;
          xs = max_x;
        }
        const auto x0 = static_cast<std::int64_t>(std::floor(xs));
        const std::int64_t x1 = std::min<std::int64_t>(x0 + 1, s.w - 1);
        (*taps)[k] = Tap{x0, x1, xs - static_cast<double>(x0), live};
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(s.numel()));
  const auto sv = source.values();
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      for (std::int64_t i = 0; i < s.h; ++i) {
        const double* row = sv.data() + offset(s, n, c, i, 0);
        double* dst = out.data() + offset(s, n, c, i, 0);
        for (std::int64_t j = 0; j < s.w; ++j) {
          const Tap& t = (*taps)[offset(os, n, 0, i, j)];
          dst[j] = (1.0 - t.frac) * row[t.x0] + t.frac * row[t.x1];
        }
      }
    }
  }
  auto src_impl = source.impl();
  return make_result(
      "grid_sample_bilinear", s, std::move(out), {source, x_offsets},
      [s, os, taps, src_impl, width](std::span<const double> g,
                                     std::span<const std::span<double>> gin) {
        const auto& sv = src_impl->value;
        for (std::int64_t n = 0; n < s.n; ++n) {
          for (std::int64_t c = 0; c < s.c; ++c) {
            for (std::int64_t i = 0; i < s.h; ++i) {
              const std::size_t base = offset(s, n, c, i, 0);
              for (std::int64_t j = 0; j < s.w; ++j) {
                const std::size_t k = offset(os, n, 0, i, j);
                const Tap& t = (*taps)[k];
                const double go = g[base + static_cast<std::size_t>(j)];
                if (!gin[0].empty()) {
                  gin[0][base + static_cast<std::size_t>(t.x0)] += (1.0 - t.frac) * go;
                  gin[0][base + static_cast<std::size_t>(t.x1)] += t.frac * go;
                }
                if (!gin[1].empty() && t.live) {
                  const double slope = sv[base + static_cast<std::size_t>(t.x1)] -
                                       sv[base + static_cast<std::size_t>(t.x0)];
                  gin[1][k] += go * slope * width;
                }
              }
            }
          }
        }
      });
}

// ==================================================================== reductions

Tensor reduce(const Tensor& x, Reduce kind, AxisSet axes) {
  const Shape s = x.shape();
  const Shape os{axes[0] ? 1 : s.n, axes[1] ? 1 : s.c, axes[2] ? 1 : s.h, axes[3] ? 1 : s.w};
  std::int64_t count = 1;
  for (int ax = 0; ax < 4; ++ax) {
    if (axes[ax]) count *= s[ax];
  }
  if (count == 0) shape_error("reduce", "empty reduction over shape " + s.str());
  const double factor = kind == Reduce::kMean ? 1.0 / static_cast<double>(count) : 1.0;
  // Broadcasting the output back onto x gives the reduction map.
  Broadcast plan;
  plan.out = s;
  plan.stride_a = broadcast_strides(os, s);
  plan.stride_b = plan.stride_a;
  std::vector<double> out(static_cast<std::size_t>(os.numel()), 0.0);
  const auto xv = x.values();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t o, std::size_t) { out[o] += xv[i]; });
  for (double& v : out) v *= factor;
  return make_result(kind == Reduce::kMean ? "mean" : "sum", os, std::move(out), {x},
                     [plan, factor](std::span<const double> g,
                                    std::span<const std::span<double>> gin) {
                       for_each_broadcast(plan, [&](std::size_t i, std::size_t o, std::size_t) {
                         gin[0][i] += g[o] * factor;
                       });
                     });
}

// ==================================================================== channels

Tensor concat_channels(const std::vector<Tensor>& inputs) {
  if (inputs.empty()) shape_error("concat_channels", "no inputs");
  const Shape first = inputs.front().shape();
  std::int64_t channels = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      shape_error("concat_channels", "spatial mismatch between " + first.str() + " and " + s.str());
    }
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  const std::int64_t plane = first.h * first.w;
  std::vector<double> out(static_cast<std::size_t>(os.numel()));
  std::vector<std::int64_t> starts;
  std::int64_t start = 0;
  for (const auto& t : inputs) {
    starts.push_back(start);
    const auto v = t.values();
    for (std::int64_t n = 0; n < first.n; ++n) {
      std::copy_n(v.data() + n * t.shape().c * plane, t.shape().c * plane,
                  out.data() + (n * channels + start) * plane);
    }
    start += t.shape().c;
  }
  std::vector<std::int64_t> widths;
  for (const auto& t : inputs) widths.push_back(t.shape().c);
  return make_result("concat_channels", os, std::move(out), inputs,
                     [first, channels, plane, starts, widths](
                         std::span<const double> g, std::span<const std::span<double>> gin) {
                       for (std::size_t k = 0; k < gin.size(); ++k) {
                         if (gin[k].empty()) continue;
                         for (std::int64_t n = 0; n < first.n; ++n) {
                           const double* src = g.data() + (n * channels + starts[k]) * plane;
                           double* dst = gin[k].data() + n * widths[k] * plane;
                           for (std::int64_t i = 0; i < widths[k] * plane; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t count) {
  const Shape s = x.shape();
  if (begin < 0 || count < 0 || begin + count > s.c) {
    shape_error("slice_channels", "range [" + std::to_string(begin) + ", " +
                                      std::to_string(begin + count) + ") outside " + s.str());
  }
  const Shape os{s.n, count, s.h, s.w};
  const std::int64_t plane = s.h * s.w;
  std::vector<double> out(static_cast<std::size_t>(os.numel()));
  const auto xv = x.values();
  for (std::int64_t n = 0; n < s.n; ++n) {
    std::copy_n(xv.data() + (n * s.c + begin) * plane, count * plane,
                out.data() + n * count * plane);
  }
  return make_result("slice_channels", os, std::move(out), {x},
                     [s, begin, count, plane](std::span<const double> g,
                                              std::span<const std::span<double>> gin) {
                       for (std::int64_t n = 0; n < s.n; ++n) {
                         const double* src = g.data() + n * count * plane;
                         double* dst = gin[0].data() + (n * s.c + begin) * plane;
                         for (std::int64_t i = 0; i < count * plane; ++i) dst[i] += src[i];
                       }
                     });
}

// ==================================================================== pooling, differences

Tensor avg_pool2d(const Tensor& x, int kernel, int stride) {
  const Shape s = x.shape();
  if (kernel < 1 || stride < 1 || s.h < kernel || s.w < kernel) {
    shape_error("avg_pool2d", "window " + std::to_string(kernel) + " does not fit " + s.str());
  }
  const Shape os{s.n, s.c, (s.h - kernel) / stride + 1, (s.w - kernel) / stride + 1};
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  std::vector<double> out(static_cast<std::size_t>(os.numel()));
  const auto xv = x.values();
  std::size_t o = 0;
  for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const double* plane = xv.data() + nc * s.h * s.w;
    for (std::int64_t y = 0; y < os.h; ++y) {
      for (std::int64_t xx = 0; xx < os.w; ++xx) {
        double acc = 0.0;
        for (int ky = 0; ky < kernel; ++ky) {
          const double* row = plane + (y * stride + ky) * s.w + xx * stride;
          for (int kx = 0; kx < kernel; ++kx) acc += row[kx];
        }
        out[o++] = acc * inv;
      }
    }
  }
  return make_result("avg_pool2d", os, std::move(out), {x},
                     [s, os, kernel, stride, inv](std::span<const double> g,
                                                  std::span<const std::span<double>> gin) {
                       std::size_t o = 0;
                       for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
                         double* plane = gin[0].data() + nc * s.h * s.w;
                         for (std::int64_t y = 0; y < os.h; ++y) {
                           for (std::int64_t xx = 0; xx < os.w; ++xx) {
                             const double v = g[o++] * inv;
                             for (int ky = 0; ky < kernel; ++ky) {
                               double* row = plane + (y * stride + ky) * s.w + xx * stride;
                               for (int kx = 0; kx < kernel; ++kx) row[kx] += v;
                             }
                           }
                         }
                       }
                     });
}

namespace {

Tensor difference(const char* kind, const Tensor& x, bool along_width) {
  const Shape s = x.shape();
  if ((along_width ? s.w : s.h) < 2) shape_error(kind, "needs extent >= 2, got " + s.str());
  const Shape os{s.n, s.c, along_width ? s.h : s.h - 1, along_width ? s.w - 1 : s.w};
  const std::int64_t step = along_width ? 1 : s.w;
  std::vector<std::size_t> base(static_cast<std::size_t>(os.numel()));
  std::size_t o = 0;
  for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
    for (std::int64_t y = 0; y < os.h; ++y) {
      for (std::int64_t xx = 0; xx < os.w; ++xx) {
        base[o++] = static_cast<std::size_t>((nc * s.h + y) * s.w + xx);
      }
    }
  }
  std::vector<double> out(base.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < base.size(); ++i) out[i] = xv[base[i] + step] - xv[base[i]];
  auto shared_base = std::make_shared<std::vector<std::size_t>>(std::move(base));
  return make_result(kind, os, std::move(out), {x},
                     [shared_base, step](std::span<const double> g,
                                         std::span<const std::span<double>> gin) {
                       const auto& b = *shared_base;
                       for (std::size_t i = 0; i < b.size(); ++i) {
                         gin[0][b[i] + static_cast<std::size_t>(step)] += g[i];
                         gin[0][b[i]] -= g[i];
                       }
                     });
}

}  // namespace

Tensor gradient_x(const Tensor& x) { return difference("gradient_x", x, true); }
Tensor gradient_y(const Tensor& x) { return difference("gradient_y", x, false); }

Tensor flip_horizontal(const Tensor& x) {
  const Shape s = x.shape();
  std::vector<double> out(static_cast<std::size_t>(s.numel()));
  const auto xv = x.values();
  for (std::int64_t r = 0; r < s.n * s.c * s.h; ++r) {
    for (std::int64_t j = 0; j < s.w; ++j) out[r * s.w + j] = xv[r * s.w + (s.w - 1 - j)];
  }
  return make_result("flip_horizontal", s, std::move(out), {x},
                     [s](std::span<const double> g, std::span<const std::span<double>> gin) {
                       for (std::int64_t r = 0; r < s.n * s.c * s.h; ++r) {
                         for (std::int64_t j = 0; j < s.w; ++j) {
                           gin[0][r * s.w + (s.w - 1 - j)] += g[r * s.w + j];
                         }
                       }
                     });
}

}  // namespace fdepth
