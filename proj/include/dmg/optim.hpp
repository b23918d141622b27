#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "dmg/tensor.hpp"

namespace dmg {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter moment accumulators; t advances by exactly one per step.
struct AdamState {
  Tensor m;
  Tensor v;
  long t = 0;

  explicit AdamState(const std::vector<std::size_t>& shape) : m(shape), v(shape) {}
  AdamState() = default;
};

// Standard Adam update with bias correction, in place.
inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr,
                      const AdamConfig& cfg, const std::string& name) {
  require_same_shape(param, grad, "adam_step");
  if (!state.m.same_shape(param))
    throw std::invalid_argument("adam_step: state shape mismatch for " + name);
  if (!grad.all_finite())
    throw std::runtime_error("adam_step: non-finite gradient for parameter '" + name + "'");
  state.t += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
    double mhat = state.m[i] / bias1;
    double vhat = state.v[i] / bias2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// ---------------------------------------------------------------------------
// Per-epoch learning rate schedules
// ---------------------------------------------------------------------------

struct LrSchedule {
  enum class Kind { constant, exponential, inverse };
  Kind kind = Kind::constant;
  double lr0 = 1e-4;
  double rate = 0.99;      // exponential: lr0 * rate^(t-1)
  double gamma = 1e-4;     // inverse: lr0 / (1 + gamma*(t-1))^p_sched
  double p_sched = 0.75;
};

inline double lr_at(const LrSchedule& s, int epoch) {
  if (epoch < 1) throw std::invalid_argument("lr_at: epoch must be >= 1");
  if (s.lr0 <= 0.0) throw std::invalid_argument("lr_at: lr0 must be positive");
  const double t = static_cast<double>(epoch);
  switch (s.kind) {
    case LrSchedule::Kind::constant:
      return s.lr0;
    case LrSchedule::Kind::exponential:
      return s.lr0 * std::pow(s.rate, t - 1.0);
    case LrSchedule::Kind::inverse:
      return s.lr0 / std::pow(1.0 + s.gamma * (t - 1.0), s.p_sched);
  }
  throw std::logic_error("lr_at: unknown schedule kind");
}

}  // namespace dmg
