#pragma once

#include <cstdint>
#include <vector>

#include "fdepth/photometric.hpp"

namespace fdepth {

enum class Texture { kChecker, kNoise, kGradient };

/// Axis-aligned rectangle in left-image pixel coordinates.
struct Rect {
  std::int64_t top = 0;
  std::int64_t left = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
};

/// Fronto-parallel textured plane. Its disparity bf/depth must be a whole
/// number of pixels so that the right view is an exact shift.
struct Layer {
  double depth = 1.0;  // meters
  Texture texture = Texture::kNoise;
  Rect rect;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  // Any order; the farthest layer must cover the whole image.
  std::vector<Layer> layers;
  double baseline = 0.54;
  double focal = 64.0;
  std::int64_t height = 64;
  std::int64_t width = 64;
  // Texture cell size in pixels per pixel of disparity. Tying the two makes
  // apparent texture scale a monocular depth cue, as with real surfaces.
  double texture_scale = 2.0;
  // Aerial perspective: a layer at depth z is blended toward a fixed haze
  // color by 1 - exp(-haze * z). Zero disables it.
  double haze = 0.1;

  void validate() const;
  // Whole-pixel disparity of a layer; throws if bf/depth is not integral.
  std::int64_t disparity_px(const Layer& layer) const;
};

/// Renders the rectified pair. The right image shows each layer shifted
/// left by its disparity; gt_disparity (pixels) and the visibility mask are
/// filled from the nearest layer covering each left pixel.
/// Throws std::invalid_argument when a disparity exceeds 30% of the width.
StereoSample render_stereo(const SceneSpec& spec);

/// Random scene for the synthetic benchmark: a full-frame background, plus
/// one nearer rectangle when `two_layer`. Depths are chosen as bf/d for
/// whole d so the spec always renders.
SceneSpec random_scene(std::uint64_t seed, std::int64_t height, std::int64_t width, bool two_layer);

}  // namespace fdepth
