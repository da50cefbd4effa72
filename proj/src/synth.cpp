#include "fdepth/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace fdepth {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double hash_unit(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  const std::uint64_t h = splitmix(splitmix(splitmix(splitmix(a) ^ b) ^ c) ^ d);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

using Rgb = std::array<double, 3>;

Rgb random_color(std::uint64_t key, std::uint64_t slot) {
  Rgb c;
  for (std::uint64_t ch = 0; ch < 3; ++ch) c[ch] = 0.1 + 0.8 * hash_unit(key, slot, ch, 0x636f6c);
  return c;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Procedural texture of one layer, a pure function of integer left-image
// coordinates so the same surface point renders to the same bits in both
// views.
class LayerShader {
 public:
  LayerShader(const SceneSpec& spec, std::size_t index, std::int64_t disparity)
      : kind_(spec.layers[index].texture),
        origin_row_(spec.layers[index].rect.top),
        origin_col_(spec.layers[index].rect.left),
        cell_(spec.texture_scale * static_cast<double>(disparity)),
        haze_(1.0 - std::exp(-spec.haze * spec.layers[index].depth)),
        key_(splitmix(spec.seed) ^ splitmix(index + 1)) {
    a_ = random_color(key_, 1);
    b_ = random_color(key_, 2);
    // Keep checker and stripe endpoints apart so the texture is visible.
    if (std::abs(a_[0] + a_[1] + a_[2] - b_[0] - b_[1] - b_[2]) < 0.6) {
      for (double& v : b_) v = 1.0 - v;
    }
    const double angle = 2.0 * std::acos(-1.0) * hash_unit(key_, 3, 0, 0x616e67);
    dir_row_ = std::sin(angle);
    dir_col_ = std::cos(angle);
  }

  Rgb operator()(std::int64_t row, std::int64_t col) const {
    const double y = static_cast<double>(row - origin_row_) / cell_;
    const double x = static_cast<double>(col - origin_col_) / cell_;
    // Low-frequency octaves (4 and 8 cells) give coarse scales something to
    // match and break the periodicity of checker and stripes.
    const Rgb base = mix(value_noise(x / 4.0, y / 4.0, 1), value_noise(x / 8.0, y / 8.0, 2), 0.5);
    return mix(mix(pattern(x, y), base, 0.45), kHazeColor, haze_);
  }

  static constexpr Rgb kHazeColor{0.75, 0.8, 0.9};

 private:
  Rgb pattern(double x, double y) const {
    switch (kind_) {
      case Texture::kChecker: {
        const auto parity = (static_cast<std::int64_t>(std::floor(x)) + static_cast<std::int64_t>(std::floor(y))) & 1;
        return parity ? a_ : b_;
      }
      case Texture::kGradient: {
        // Triangle wave along a random direction, one period per two cells.
        const double u = 0.5 * (x * dir_col_ + y * dir_row_);
        const double t = 1.0 - std::abs(2.0 * (u - std::floor(u)) - 1.0);
        return mix(a_, b_, t);
      }
      case Texture::kNoise:
      default:
        return value_noise(x, y, 0);
    }
  }

  Rgb value_noise(double x, double y, std::uint64_t octave) const {
    const double fx = std::floor(x), fy = std::floor(y);
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
    const double tx = smoothstep(x - fx), ty = smoothstep(y - fy);
    const Rgb top = mix(lattice(iy, ix, octave), lattice(iy, ix + 1, octave), tx);
    const Rgb bottom = mix(lattice(iy + 1, ix, octave), lattice(iy + 1, ix + 1, octave), tx);
    return mix(top, bottom, ty);
  }

  static Rgb mix(const Rgb& p, const Rgb& q, double t) {
    return {p[0] + (q[0] - p[0]) * t, p[1] + (q[1] - p[1]) * t, p[2] + (q[2] - p[2]) * t};
  }

  Rgb lattice(std::int64_t iy, std::int64_t ix, std::uint64_t octave) const {
    Rgb c;
    for (std::uint64_t ch = 0; ch < 3; ++ch) {
      c[ch] = 0.05 + 0.9 * hash_unit(key_ ^ (octave << 56), static_cast<std::uint64_t>(iy),
                                     static_cast<std::uint64_t>(ix), ch);
    }
    return c;
  }

  Texture kind_;
  std::int64_t origin_row_, origin_col_;
  double cell_;
  double haze_;
  std::uint64_t key_;
  Rgb a_{}, b_{};
  double dir_row_ = 0.0, dir_col_ = 1.0;
};

bool covers(const Rect& r, std::int64_t row, std::int64_t col) {
  return row >= r.top && row < r.top + r.height && col >= r.left && col < r.left + r.width;
}

}  // namespace

std::int64_t SceneSpec::disparity_px(const Layer& layer) const {
  const double d = baseline * focal / layer.depth;
  const double whole = std::round(d);
  if (std::abs(d - whole) > 1e-9 * std::max(1.0, d)) {
    throw std::invalid_argument("layer at depth " + std::to_string(layer.depth) +
                                " m has non-integral disparity " + std::to_string(d) + " px");
  }
  return static_cast<std::int64_t>(whole);
}

void SceneSpec::validate() const {
  if (height <= 0 || width <= 0) throw std::invalid_argument("scene extents must be positive");
  if (!(baseline > 0.0) || !(focal > 0.0)) {
    throw std::invalid_argument("baseline and focal length must be positive");
  }
  if (!(texture_scale > 0.0)) throw std::invalid_argument("texture_scale must be positive");
  if (!(haze >= 0.0)) throw std::invalid_argument("haze must be non-negative");
  if (layers.empty()) throw std::invalid_argument("scene has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const Layer& l = layers[k];
    if (!(l.depth > 0.0)) throw std::invalid_argument("layer depths must be positive");
    const Rect& r = l.rect;
    if (r.height <= 0 || r.width <= 0 || r.top < 0 || r.left < 0 || r.top + r.height > height ||
        r.left + r.width > width) {
      throw std::invalid_argument("layer " + std::to_string(k) + " rectangle lies outside the image");
    }
    for (std::size_t m = 0; m < k; ++m) {
      if (layers[m].depth == l.depth) throw std::invalid_argument("layer depths must be distinct");
    }
    const std::int64_t d = disparity_px(l);
    if (static_cast<double>(d) > 0.3 * static_cast<double>(width)) {
      throw std::invalid_argument("layer disparity " + std::to_string(d) + " px exceeds 30% of width " +
                                  std::to_string(width));
    }
  }
  const auto far = std::max_element(layers.begin(), layers.end(),
                                    [](const Layer& a, const Layer& b) { return a.depth < b.depth; });
  if (far->rect.top != 0 || far->rect.left != 0 || far->rect.height != height || far->rect.width != width) {
    throw std::invalid_argument("the farthest layer must cover the whole image");
  }
}

StereoSample render_stereo(const SceneSpec& spec) {
  spec.validate();
  // Near-to-far order, so the first covering layer is the visible one.
  std::vector<std::size_t> order(spec.layers.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return spec.layers[a].depth < spec.layers[b].depth; });
  std::vector<std::int64_t> disp(spec.layers.size());
  std::vector<LayerShader> shaders;
  shaders.reserve(spec.layers.size());
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    disp[k] = spec.disparity_px(spec.layers[k]);
    shaders.emplace_back(spec, k, disp[k]);
  }

  const std::int64_t h = spec.height, w = spec.width;
  // Index of the visible layer at a left pixel, or at a right pixel whose
  // surface point sits at left column col + d.
  const auto top_left = [&](std::int64_t row, std::int64_t col) {
    for (std::size_t k : order) {
      if (covers(spec.layers[k].rect, row, col)) return k;
    }
    return order.back();
  };
  const auto top_right = [&](std::int64_t row, std::int64_t col) {
    for (std::size_t k : order) {
      if (covers(spec.layers[k].rect, row, col + disp[k])) return k;
    }
    return order.back();
  };

  std::vector<double> left(static_cast<std::size_t>(3 * h * w));
  std::vector<double> right(left.size());
  std::vector<double> gt(static_cast<std::size_t>(h * w));
  std::vector<double> visible(gt.size());
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      const std::size_t px = static_cast<std::size_t>(i * w + j);
      const std::size_t kl = top_left(i, j);
      const Rgb cl = shaders[kl](i, j);
      const std::size_t kr = top_right(i, j);
      const Rgb cr = shaders[kr](i, j + disp[kr]);
      for (std::size_t c = 0; c < 3; ++c) {
        left[c * static_cast<std::size_t>(h * w) + px] = cl[c];
        right[c * static_cast<std::size_t>(h * w) + px] = cr[c];
      }
      gt[px] = static_cast<double>(disp[kl]);
      const std::int64_t jr = j - disp[kl];
      visible[px] = (jr >= 0 && top_right(i, jr) == kl) ? 1.0 : 0.0;
    }
  }
  StereoSample s;
  s.left = Tensor::from_values({1, 3, h, w}, std::move(left));
  s.right = Tensor::from_values({1, 3, h, w}, std::move(right));
  s.baseline = spec.baseline;
  s.focal = spec.focal;
  s.gt_disparity = Tensor::from_values({1, 1, h, w}, std::move(gt));
  s.visible = Tensor::from_values({1, 1, h, w}, std::move(visible));
  return s;
}

SceneSpec random_scene(std::uint64_t seed, std::int64_t height, std::int64_t width, bool two_layer) {
  std::mt19937_64 rng(splitmix(seed));
  SceneSpec spec;
  spec.seed = seed;
  spec.height = height;
  spec.width = width;
  const double bf = spec.baseline * spec.focal;
  const auto max_d = std::max<std::int64_t>(3, static_cast<std::int64_t>(std::floor(0.3 * static_cast<double>(width))) - 2);
  const auto pick_texture = [&] {
    return static_cast<Texture>(std::uniform_int_distribution<int>(0, 2)(rng));
  };
  const std::int64_t far_hi = two_layer ? std::max<std::int64_t>(2, max_d / 2) : max_d;
  const std::int64_t far_d = std::uniform_int_distribution<std::int64_t>(2, far_hi)(rng);
  spec.layers.push_back({bf / static_cast<double>(far_d), pick_texture(), Rect{0, 0, height, width}});
  if (two_layer) {
    const std::int64_t near_d = std::uniform_int_distribution<std::int64_t>(far_d + 2, std::max(far_d + 2, max_d))(rng);
    std::uniform_int_distribution<std::int64_t> rows(height / 4, height / 2);
    std::uniform_int_distribution<std::int64_t> cols(width / 4, width / 2);
    Rect r;
    r.height = rows(rng);
    r.width = cols(rng);
    r.top = std::uniform_int_distribution<std::int64_t>(0, height - r.height)(rng);
    r.left = std::uniform_int_distribution<std::int64_t>(0, width - r.width)(rng);
    spec.layers.push_back({bf / static_cast<double>(near_d), pick_texture(), r});
  }
  return spec;
}

}  // namespace fdepth
