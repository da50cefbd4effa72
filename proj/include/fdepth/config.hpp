#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "fdepth/network.hpp"
#include "fdepth/optimizer.hpp"
#include "fdepth/photometric.hpp"

namespace fdepth {

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 1;
  // Epochs of the all-scales, two-scales and fine-tune stages.
  std::array<int, 3> stage_epochs{25, 5, 5};
  std::filesystem::path dataset_dir;
  std::filesystem::path checkpoint_dir;
  ArchConfig arch;
  LossWeights loss;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Reads `key = value` lines ('#' starts a comment). Keys:
///   train.lr, train.beta1, train.beta2, train.eps, train.batch_size,
///   train.epochs (three comma-separated integers), train.data,
///   train.checkpoint_dir, train.seed,
///   arch.num_levels, arch.widths (comma list), arch.kernel,
///   arch.reservation, arch.coordconv, arch.fusion, arch.refinement,
///   arch.d_max,
///   loss.alpha_ssim, loss.smoothness, loss.lr_consistency, loss.occlusion,
///   loss.scale_factors (four comma-separated values).
/// Relative paths are resolved against `base_dir`. Unknown keys and
/// malformed values throw std::invalid_argument naming the line.
TrainConfig parse_train_config(std::istream& in, const std::filesystem::path& base_dir = {});
TrainConfig load_train_config(const std::filesystem::path& path);

/// The arch.* lines of a config; stored next to each checkpoint so eval and
/// predict can rebuild the network.
std::string format_arch_config(const ArchConfig& arch);
ArchConfig parse_arch_config(std::istream& in);

}  // namespace fdepth
