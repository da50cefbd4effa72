#include "fdepth/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fdepth/ops.hpp"

namespace fdepth {

namespace {

constexpr std::array<int, 4> kResidualWidths{32, 32, 16, 4};
constexpr int kRefineHidden = 8;

[[noreturn]] void config_error(const std::string& what) {
  throw std::invalid_argument("ArchConfig: " + what);
}

}  // namespace

void ArchConfig::validate() const {
  if (num_levels < 3) config_error("num_levels must be >= 3");
  if (static_cast<int>(widths.size()) != num_levels) {
    config_error("expected " + std::to_string(num_levels) + " widths, got " +
                 std::to_string(widths.size()));
  }
  for (int w : widths) {
    if (w < 3) config_error("every width must be >= 3");
  }
  if (kernel < 1 || kernel % 2 == 0) config_error("kernel must be a positive odd integer");
  if (!(reservation > 0.0 && reservation < 1.0)) config_error("reservation must lie in (0, 1)");
  if (!(d_max > 0.0 && d_max <= 1.0)) config_error("d_max must lie in (0, 1]");
  if (in_channels < 1) config_error("in_channels must be positive");
}

// ------------------------------------------------------------------ coordconv

Tensor coordinate_channels(std::int64_t h, std::int64_t w, std::optional<PrincipalPoint> center) {
  const PrincipalPoint c =
      center.value_or(PrincipalPoint{static_cast<double>(h) / 2.0, static_cast<double>(w) / 2.0});
  const auto ramp = [](std::int64_t idx, std::int64_t extent) {
    return extent > 1 ? 2.0 * static_cast<double>(idx) / static_cast<double>(extent - 1) - 1.0
                      : 0.0;
  };
  const auto radius = [&c](double i, double j) {
    return std::sqrt((i - c.row) * (i - c.row) + (j - c.col) * (j - c.col));
  };
  const double hi = static_cast<double>(h - 1);
  const double wj = static_cast<double>(w - 1);
  const double max_r =
      std::max({radius(0, 0), radius(0, wj), radius(hi, 0), radius(hi, wj)});
  const double inv_r = max_r > 0.0 ? 1.0 / max_r : 0.0;

  const std::int64_t plane = h * w;
  std::vector<double> v(static_cast<std::size_t>(3 * plane));
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      const auto k = static_cast<std::size_t>(i * w + j);
      v[k] = ramp(i, h);
      v[static_cast<std::size_t>(plane) + k] = ramp(j, w);
      v[static_cast<std::size_t>(2 * plane) + k] =
          radius(static_cast<double>(i), static_cast<double>(j)) * inv_r;
    }
  }
  return Tensor::from_values(Shape{1, 3, h, w}, std::move(v));
}

Tensor coordconv_augment(const Tensor& feature, std::optional<PrincipalPoint> center) {
  const Shape& s = feature.shape();
  Tensor coords = coordinate_channels(s.h, s.w, center);
  if (s.n > 1) {
    std::vector<double> tiled;
    tiled.reserve(static_cast<std::size_t>(s.n * coords.numel()));
    for (std::int64_t n = 0; n < s.n; ++n) {
      tiled.insert(tiled.end(), coords.values().begin(), coords.values().end());
    }
    coords = Tensor::from_values(Shape{s.n, 3, s.h, s.w}, std::move(tiled));
  }
  return concat_channels({feature, coords});
}

// ------------------------------------------------------------------ fusion rules

std::vector<int> fusion_members(int level, int num_levels) {
  if (level < 1 || level > num_levels) {
    throw std::out_of_range("fusion level " + std::to_string(level) + " outside [1, " +
                            std::to_string(num_levels) + "]");
  }
  std::vector<int> members;
  for (int i = std::max(level - 1, 1); i <= std::min(level + 1, num_levels); ++i) {
    members.push_back(i);
  }
  return members;
}

FusionBudget fusion_budget(int width, double reservation, int neighbors) {
  if (neighbors == 0) return {width, 0};
  int same = static_cast<int>(std::ceil(reservation * width - 1e-9));
  same = std::clamp(same, 1, width - neighbors);
  // A neighbor slice never outgrows the same-level slice; leftovers go to
  // the same level.
  const int per = std::min((width - same) / neighbors, same);
  return {width - per * neighbors, per};
}

// ------------------------------------------------------------------ parameters

Tensor ParameterStore::add(const std::string& name, Shape shape, double bound,
                           std::mt19937_64& rng) {
  if (find(name) != nullptr) throw std::logic_error("duplicate parameter " + name);
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(static_cast<std::size_t>(shape.numel()));
  for (double& x : v) x = dist(rng);
  Tensor t = Tensor::from_values(shape, std::move(v), true);
  entries_.push_back({name, t});
  return t;
}

const Tensor* ParameterStore::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e.value;
  }
  return nullptr;
}

std::int64_t ParameterStore::count() const {
  std::int64_t total = 0;
  for (const auto& e : entries_) total += e.value.numel();
  return total;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

Tensor Conv2dLayer::operator()(const Tensor& x) const {
  return conv2d(x, weight, bias, stride, padding);
}

// ------------------------------------------------------------------ construction

Conv2dLayer DepthNet::make_conv(const std::string& name, int in_ch, int out_ch, int kernel,
                                int stride, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * kernel * kernel));
  Conv2dLayer layer;
  layer.weight = params_.add(name + ".weight", Shape{out_ch, in_ch, kernel, kernel}, bound, rng);
  layer.bias = params_.add(name + ".bias", Shape{1, out_ch, 1, 1}, bound, rng);
  layer.stride = stride;
  layer.padding = kernel / 2;
  return layer;
}

DepthNet::DepthNet(ArchConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const int L = cfg_.num_levels;
  const int k = cfg_.kernel;
  const int aug = cfg_.coordconv ? 3 : 0;
  const auto id = [](int v) { return std::to_string(v); };

  int in_ch = cfg_.in_channels;
  for (int p = 1; p <= L; ++p) {
    const int w = cfg_.width(p);
    Level lvl{make_conv("enc." + id(p) + ".conv0", in_ch, w, k, 2, rng),
              make_conv("enc." + id(p) + ".conv1", w, w, k, 1, rng)};
    encoder_.push_back(std::move(lvl));
    in_ch = w;
  }

  for (int p = 1; p <= L; ++p) {
    const int w = cfg_.width(p);
    const std::string base = "fuse." + id(p);
    Fusion f;
    if (cfg_.fusion) {
      const auto members = fusion_members(p, L);
      const auto budget = fusion_budget(w, cfg_.reservation, static_cast<int>(members.size()) - 1);
      if (p > 1) {
        f.from_finer = make_conv(base + ".down", cfg_.width(p - 1) + aug, budget.per_neighbor, k, 2, rng);
      }
      f.same = make_conv(base + ".same", w + aug, budget.same, 1, 1, rng);
      if (p < L) {
        f.from_coarser = make_conv(base + ".up", cfg_.width(p + 1) + aug, budget.per_neighbor, 1, 1, rng);
      }
      f.mix = make_conv(base + ".mix", w, w, k, 1, rng);
    } else {
      f.mix = make_conv(base + ".mix", w + aug, w, k, 1, rng);
    }
    fusion_.push_back(std::move(f));
  }

  decoder_.resize(static_cast<std::size_t>(L + 1));
  for (int p = L - 1; p >= 1; --p) {
    const int w = cfg_.width(p);
    const std::string base = "dec." + id(p);
    DecoderStage stage{make_conv(base + ".upconv", cfg_.width(p + 1), w, k, 1, rng), std::nullopt};
    stage.iconv = make_conv(base + ".iconv", 2 * w + aug, w, k, 1, rng);
    decoder_[static_cast<std::size_t>(p)] = std::move(stage);
  }

  if (cfg_.refinement) {
    heads_[3] = make_conv("head.3", cfg_.width(3), 1, k, 1, rng);
    for (int s = 2; s >= 0; --s) {
      const std::string base = "refine." + id(s);
      int c = cfg_.width(s + 1);
      Refiner r;
      for (std::size_t i = 0; i < kResidualWidths.size(); ++i) {
        r.residual[i] = make_conv(base + ".res" + id(static_cast<int>(i)), c, kResidualWidths[i], k, 1, rng);
        c = kResidualWidths[i];
      }
      r.coarse = make_conv(base + ".coarse", 1, 4, k, 1, rng);
      r.output[0] = make_conv(base + ".out0", 1, kRefineHidden, k, 1, rng);
      r.output[1] = make_conv(base + ".out1", kRefineHidden, 1, k, 1, rng);
      refiners_[static_cast<std::size_t>(s)] = std::move(r);
    }
  } else {
    decoder_[0] = DecoderStage{make_conv("dec.0.upconv", cfg_.width(1), cfg_.width(1), k, 1, rng),
                               std::nullopt};
    for (int s = 3; s >= 0; --s) {
      heads_[static_cast<std::size_t>(s)] =
          make_conv("head." + id(s), cfg_.width(std::max(s, 1)), 1, k, 1, rng);
    }
  }
}

// ------------------------------------------------------------------ forward pieces

FeaturePyramid DepthNet::encode(const Tensor& image) const {
  const Shape& s = image.shape();
  const std::int64_t multiple = std::int64_t{1} << cfg_.num_levels;
  if (s.h % multiple != 0 || s.w % multiple != 0 || s.h == 0 || s.w == 0) {
    throw std::invalid_argument("encode: image " + s.str() + " must have height and width that are "
                                "multiples of " + std::to_string(multiple));
  }
  if (s.c != cfg_.in_channels) {
    throw std::invalid_argument("encode: expected " + std::to_string(cfg_.in_channels) +
                                " channels, got " + s.str());
  }
  FeaturePyramid pyramid;
  Tensor x = image;
  for (const auto& lvl : encoder_) {
    x = elu(lvl.body(elu(lvl.down(x))));
    pyramid.levels.push_back(x);
  }
  return pyramid;
}

std::optional<PrincipalPoint> DepthNet::level_center(
    int level, const Shape&, std::optional<PrincipalPoint> principal) const {
  if (!principal) return std::nullopt;
  const double factor = std::ldexp(1.0, -level);
  return PrincipalPoint{principal->row * factor, principal->col * factor};
}

FeaturePyramid DepthNet::augment(const FeaturePyramid& pyramid, const Shape& image_shape,
                                 std::optional<PrincipalPoint> principal) const {
  if (!cfg_.coordconv) return pyramid;
  FeaturePyramid out;
  for (int p = 1; p <= pyramid.size(); ++p) {
    out.levels.push_back(
        coordconv_augment(pyramid.level(p), level_center(p, image_shape, principal)));
  }
  return out;
}

Tensor DepthNet::fuse_level(const FeaturePyramid& augmented, int level) const {
  const auto members = fusion_members(level, cfg_.num_levels);
  if (augmented.size() != cfg_.num_levels) {
    throw std::invalid_argument("fuse_level: pyramid has " + std::to_string(augmented.size()) +
                                " levels, expected " + std::to_string(cfg_.num_levels));
  }
  const Fusion& f = fusion_[static_cast<std::size_t>(level - 1)];
  if (!cfg_.fusion) return elu(f.mix(augmented.level(level)));

  std::vector<Tensor> parts;
  for (int m : members) {
    if (m < level) {
      parts.push_back(elu((*f.from_finer)(augmented.level(m))));
    } else if (m == level) {
      parts.push_back(elu((*f.same)(augmented.level(m))));
    } else {
      // A 1x1 convolution commutes with nearest upsampling; convolving first
      // gives the same values at a quarter of the cost.
      parts.push_back(upsample_nearest(elu((*f.from_coarser)(augmented.level(m))), 2));
    }
  }
  return elu(f.mix(concat_channels(parts)));
}

Tensor DepthNet::head(int scale, const Tensor& features) const {
  return fdepth::scale(sigmoid((*heads_[static_cast<std::size_t>(scale)])(features)), cfg_.d_max);
}

Tensor DepthNet::refine_output(int scale, const Tensor& fused) const {
  const Refiner& r = *refiners_[static_cast<std::size_t>(scale)];
  return fdepth::scale(sigmoid(r.output[1](elu(r.output[0](fused)))), cfg_.d_max);
}

namespace {

Tensor coarse_upsample(const Conv2dLayer& conv, const Tensor& coarse, double d_max) {
  return pixel_shuffle(conv(fdepth::scale(coarse, 1.0 / d_max)), 2);
}

}  // namespace

Tensor DepthNet::refine(int scale, const Tensor& coarse, const Tensor& features) const {
  if (scale < 0 || scale > 2 || !refiners_[static_cast<std::size_t>(scale)]) {
    throw std::out_of_range("refine: no refinement module at scale " + std::to_string(scale));
  }
  const Refiner& r = *refiners_[static_cast<std::size_t>(scale)];
  const Shape& cs = coarse.shape();
  const Shape& fs = features.shape();
  if (cs.c != 1 || cs.n != fs.n || cs.h != fs.h || cs.w != fs.w) {
    throw std::invalid_argument("refine: coarse disparity " + cs.str() +
                                " does not match features " + fs.str());
  }
  Tensor residual = features;
  for (std::size_t i = 0; i + 1 < r.residual.size(); ++i) residual = elu(r.residual[i](residual));
  residual = pixel_shuffle(r.residual.back()(residual), 2);
  return refine_output(scale, add(coarse_upsample(r.coarse, coarse, cfg_.d_max), residual));
}

Tensor DepthNet::refine_coarse_path(int scale, const Tensor& coarse) const {
  if (scale < 0 || scale > 2 || !refiners_[static_cast<std::size_t>(scale)]) {
    throw std::out_of_range("refine: no refinement module at scale " + std::to_string(scale));
  }
  const Refiner& r = *refiners_[static_cast<std::size_t>(scale)];
  return refine_output(scale, coarse_upsample(r.coarse, coarse, cfg_.d_max));
}

void DepthNet::zero_residual_branch(int scale) {
  auto& r = refiners_.at(static_cast<std::size_t>(scale));
  if (!r) throw std::out_of_range("no refinement module at scale " + std::to_string(scale));
  for (double& v : r->residual.back().weight.mutable_values()) v = 0.0;
  for (double& v : r->residual.back().bias.mutable_values()) v = 0.0;
}

DisparitySet DepthNet::decode(const FeaturePyramid& fused, const FeaturePyramid& skips,
                              const Shape& image_shape,
                              std::optional<PrincipalPoint> principal) const {
  const int L = cfg_.num_levels;
  if (fused.size() != L || skips.size() != L) {
    throw std::invalid_argument("decode: expected " + std::to_string(L) + " levels, got " +
                                std::to_string(fused.size()) + " fused and " +
                                std::to_string(skips.size()) + " skips");
  }
  std::vector<Tensor> features(static_cast<std::size_t>(L + 1));
  Tensor x = fused.level(L);
  features[static_cast<std::size_t>(L)] = x;
  for (int p = L - 1; p >= 1; --p) {
    const DecoderStage& stage = *decoder_[static_cast<std::size_t>(p)];
    const Tensor up = elu(stage.upconv(upsample_nearest(x, 2)));
    Tensor skip = skips.level(p);
    if (cfg_.coordconv) skip = coordconv_augment(skip, level_center(p, image_shape, principal));
    if (!(up.shape().h == skip.shape().h && up.shape().w == skip.shape().w)) {
      throw std::invalid_argument("decode: skip " + skip.shape().str() + " does not match level " +
                                  std::to_string(p) + " extents " + up.shape().str());
    }
    x = elu((*stage.iconv)(concat_channels({up, skip})));
    features[static_cast<std::size_t>(p)] = x;
  }

  DisparitySet out;
  if (cfg_.refinement) {
    out.scales[3] = head(3, features[3]);
    for (int s = 2; s >= 0; --s) {
      out.scales[static_cast<std::size_t>(s)] =
          refine(s, out.scales[static_cast<std::size_t>(s + 1)], features[static_cast<std::size_t>(s + 1)]);
    }
  } else {
    for (int s = 3; s >= 1; --s) {
      out.scales[static_cast<std::size_t>(s)] = head(s, features[static_cast<std::size_t>(s)]);
    }
    const Tensor full = elu(decoder_[0]->upconv(upsample_nearest(features[1], 2)));
    out.scales[0] = head(0, full);
  }
  return out;
}

DisparitySet DepthNet::forward(const Tensor& image, std::optional<PrincipalPoint> principal) const {
  const FeaturePyramid encoded = encode(image);
  const FeaturePyramid augmented = augment(encoded, image.shape(), principal);
  FeaturePyramid fused;
  for (int p = 1; p <= cfg_.num_levels; ++p) fused.levels.push_back(fuse_level(augmented, p));
  return decode(fused, fused, image.shape(), principal);
}

}  // namespace fdepth
