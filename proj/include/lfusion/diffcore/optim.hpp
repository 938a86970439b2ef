#pragma once

// AdamW with decoupled weight decay and the stepwise exponential schedule.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lfusion/diffcore/tensor.hpp"

namespace lfusion {

inline constexpr double kDefaultLr = 1e-4;
inline constexpr double kDefaultWeightDecay = 1e-4;
inline constexpr double kDefaultLrDecay = 0.99996;

/// base_lr * decay^floor(step / 2): the rate shrinks once every two optimizer steps.
inline double lr_at_step(double base_lr, std::uint64_t step, double decay = kDefaultLrDecay) {
  return base_lr * std::pow(decay, static_cast<double>(step / 2));
}

struct AdamBetas {
  double beta1 = 0.9;
  double beta2 = 0.999;
};

struct OptimizerState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::uint64_t step = 0;
  double base_lr = kDefaultLr;
  double weight_decay = kDefaultWeightDecay;
  double decay_factor = kDefaultLrDecay;

  /// Zeroed moment buffers matching `params`.
  static OptimizerState for_params(const std::vector<Tensor>& params, double base_lr = kDefaultLr,
                                   double weight_decay = kDefaultWeightDecay,
                                   double decay_factor = kDefaultLrDecay) {
    OptimizerState s;
    s.base_lr = base_lr;
    s.weight_decay = weight_decay;
    s.decay_factor = decay_factor;
    for (const auto& p : params) {
      s.m.emplace_back(p.numel(), 0.0f);
      s.v.emplace_back(p.numel(), 0.0f);
    }
    return s;
  }
};

/// One AdamW update of every parameter from its accumulated gradient (a
/// parameter without a gradient is treated as g = 0). The learning rate is
/// lr_at_step(base_lr, step) for the pre-increment step counter.
inline void adamw_step(std::vector<Tensor>& params, OptimizerState& state, AdamBetas betas = {},
                       double eps = 1e-8) {
  if (!(state.base_lr > 0.0)) throw std::invalid_argument("adamw_step: learning rate must be positive");
  if (betas.beta1 < 0.0 || betas.beta1 >= 1.0 || betas.beta2 < 0.0 || betas.beta2 >= 1.0)
    throw std::invalid_argument("adamw_step: betas must lie in [0, 1)");
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adamw_step: optimizer state does not match parameter list");

  const double lr = lr_at_step(state.base_lr, state.step, state.decay_factor);
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(betas.beta1, t);
  const double bc2 = 1.0 - std::pow(betas.beta2, t);
  const auto b1 = static_cast<float>(betas.beta1), b2 = static_cast<float>(betas.beta2);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto theta = params[p].data();
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != theta.size() || v.size() != theta.size())
      throw ShapeError("adamw_step: moment buffer size differs from parameter " + std::to_string(p));
    const bool has_g = params[p].has_grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const float g = has_g ? params[p].grad()[i] : 0.0f;
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      const double upd = mhat / (std::sqrt(vhat) + eps) + state.weight_decay * theta[i];
      theta[i] = static_cast<float>(theta[i] - lr * upd);
    }
  }
  ++state.step;
}

}  // namespace lfusion
