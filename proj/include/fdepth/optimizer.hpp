#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fdepth/tensor.hpp"

namespace fdepth {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// First and second moments, one array per parameter, sized on first use.
struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient (a parameter without a gradient counts as zero gradient).
/// Throws std::invalid_argument when the state does not mirror the
/// parameter shapes.
void adam_step(std::span<Tensor> params, OptimizerState& state, const AdamConfig& cfg);

}  // namespace fdepth
