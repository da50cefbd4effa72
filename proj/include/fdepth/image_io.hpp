#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fdepth/photometric.hpp"

namespace fdepth {

/// Disparity maps are stored as 16-bit PGM holding round(d * 256); zero
/// marks a pixel without ground truth.
inline constexpr double kDisparityScale = 256.0;

/// Writes a (1,3,H,W) tensor in [0,1] as binary 8-bit PPM or a (1,1,H,W)
/// tensor as binary 16-bit PGM scaled by kDisparityScale. Values outside
/// the representable range are clamped.
void write_image(const std::filesystem::path& path, const Tensor& image);

/// Reads P6 (8-bit, values /maxval) or P5 (16-bit big-endian, values
/// /kDisparityScale). Throws std::runtime_error on malformed headers or a
/// truncated payload.
Tensor read_image(const std::filesystem::path& path);

std::string ppm_header(std::int64_t width, std::int64_t height);

/// On-disk synthetic set: {index:06}_left.ppm, _right.ppm, _disp.pgm and a
/// manifest.txt with baseline=, focal= and one index per line.
struct Manifest {
  double baseline = 0.54;
  double focal = 64.0;
  std::vector<std::int64_t> indices;
};

std::string sample_stem(std::int64_t index);
void write_manifest(const std::filesystem::path& dir, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& dir);

/// Stores gt disparity only on visible pixels (zero elsewhere).
void write_sample(const std::filesystem::path& dir, std::int64_t index, const StereoSample& s);

/// Loads every sample listed in the manifest. gt_disparity comes back with
/// zeros on occluded pixels and `visible` marks the nonzero ones.
std::vector<StereoSample> load_dataset(const std::filesystem::path& dir);

/// Renders `count` random scenes (alternating one and two layers) into dir.
Manifest generate_dataset(const std::filesystem::path& dir, std::int64_t count, std::uint64_t seed,
                          std::int64_t width, std::int64_t height);

}  // namespace fdepth
