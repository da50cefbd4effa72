#include "fdepth/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fdepth {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
}

void adam_step(std::span<Tensor> params, OptimizerState& state, const AdamConfig& cfg) {
  cfg.validate();
  if (state.m.empty() && state.v.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.values().size(), 0.0);
      state.v.emplace_back(p.values().size(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                                " moments for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::size_t n = params[k].values().size();
    if (state.m[k].size() != n || state.v[k].size() != n) {
      throw std::invalid_argument("adam_step: moment size mismatch for parameter " + std::to_string(k));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(cfg.beta1, t);
  const double correct2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto value = params[k].mutable_values();
    const auto grad = params[k].grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      value[i] -= cfg.lr * (m[i] / correct1) / (std::sqrt(v[i] / correct2) + cfg.eps);
    }
  }
}

}  // namespace fdepth
