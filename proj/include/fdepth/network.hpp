#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fdepth/tensor.hpp"

namespace fdepth {

inline constexpr int kNumScales = 4;

struct ArchConfig {
  int num_levels = 5;
  std::vector<int> widths{16, 32, 64, 128, 256};
  int kernel = 3;
  // Share of each fused level's width kept for the same-level feature.
  double reservation = 0.5;
  bool coordconv = true;
  bool fusion = true;
  bool refinement = true;
  // Upper bound of predicted disparity, as a fraction of image width.
  double d_max = 0.3;
  int in_channels = 3;

  // Throws std::invalid_argument on a broken configuration.
  void validate() const;
  int width(int level) const { return widths.at(static_cast<std::size_t>(level - 1)); }
};

/// Encoder or fused features; levels[p - 1] holds level p at (H/2^p, W/2^p).
struct FeaturePyramid {
  std::vector<Tensor> levels;

  const Tensor& level(int p) const { return levels.at(static_cast<std::size_t>(p - 1)); }
  int size() const { return static_cast<int>(levels.size()); }
};

/// Disparity in units of image width; scale s is (H/2^s, W/2^s).
struct DisparitySet {
  std::array<Tensor, kNumScales> scales;
};

/// Image-plane point in (row, column) pixel coordinates.
struct PrincipalPoint {
  double row = 0.0;
  double col = 0.0;
};

/// The three coordinate channels (row ramp, column ramp, normalized radius)
/// for an h x w map, batch 1.
Tensor coordinate_channels(std::int64_t h, std::int64_t w,
                           std::optional<PrincipalPoint> center = std::nullopt);

/// Appends coordinate channels to every batch item. The radius is measured
/// from `center` (default (h/2, w/2)) and divided by the largest corner
/// radius.
Tensor coordconv_augment(const Tensor& feature,
                         std::optional<PrincipalPoint> center = std::nullopt);

/// Fusion inputs for level p: the subset of {p-1, p, p+1} inside [1, L].
std::vector<int> fusion_members(int level, int num_levels);

struct FusionBudget {
  int same = 0;
  int per_neighbor = 0;
};
FusionBudget fusion_budget(int width, double reservation, int neighbors);

struct NamedParameter {
  std::string name;
  Tensor value;
};

/// Parameters in construction order.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Shape shape, double bound, std::mt19937_64& rng);
  const std::vector<NamedParameter>& entries() const { return entries_; }
  std::vector<NamedParameter>& entries() { return entries_; }
  const Tensor* find(const std::string& name) const;
  std::int64_t count() const;
  void zero_grad();

 private:
  std::vector<NamedParameter> entries_;
};

struct Conv2dLayer {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int padding = 0;

  Tensor operator()(const Tensor& x) const;
};

class DepthNet {
 public:
  DepthNet(ArchConfig cfg, std::uint64_t seed);

  const ArchConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }
  std::int64_t count_parameters() const { return params_.count(); }

  FeaturePyramid encode(const Tensor& image) const;
  // Adds coordinate channels to each level (identity when coordconv is off).
  FeaturePyramid augment(const FeaturePyramid& pyramid, const Shape& image_shape,
                         std::optional<PrincipalPoint> principal = std::nullopt) const;
  Tensor fuse_level(const FeaturePyramid& augmented, int level) const;
  DisparitySet decode(const FeaturePyramid& fused, const FeaturePyramid& skips,
                      const Shape& image_shape,
                      std::optional<PrincipalPoint> principal = std::nullopt) const;
  // Disparity at `scale` from the coarser map and decoder features at scale + 1.
  Tensor refine(int scale, const Tensor& coarse, const Tensor& features) const;
  // The refinement output with the residual branch left out.
  Tensor refine_coarse_path(int scale, const Tensor& coarse) const;

  DisparitySet forward(const Tensor& image,
                       std::optional<PrincipalPoint> principal = std::nullopt) const;

  // Zeroes the last layer of the residual branch at `scale` (test hook).
  void zero_residual_branch(int scale);

 private:
  struct Level {
    Conv2dLayer down, body;
  };
  struct Fusion {
    std::optional<Conv2dLayer> from_finer, same, from_coarser;
    Conv2dLayer mix;
  };
  struct DecoderStage {
    Conv2dLayer upconv;
    std::optional<Conv2dLayer> iconv;
  };
  struct Refiner {
    std::array<Conv2dLayer, 4> residual;
    Conv2dLayer coarse;
    std::array<Conv2dLayer, 2> output;
  };

  Conv2dLayer make_conv(const std::string& name, int in_ch, int out_ch, int kernel,
                        int stride, std::mt19937_64& rng);
  std::optional<PrincipalPoint> level_center(int level, const Shape& image_shape,
                                             std::optional<PrincipalPoint> principal) const;
  Tensor head(int scale, const Tensor& features) const;
  Tensor refine_output(int scale, const Tensor& fused) const;

  ArchConfig cfg_;
  ParameterStore params_;
  std::vector<Level> encoder_;
  std::vector<Fusion> fusion_;
  // decoder_[p] is the stage producing level p; level L has no stage.
  std::vector<std::optional<DecoderStage>> decoder_;
  std::array<std::optional<Conv2dLayer>, kNumScales> heads_;
  std::array<std::optional<Refiner>, kNumScales> refiners_;
};

}  // namespace fdepth
