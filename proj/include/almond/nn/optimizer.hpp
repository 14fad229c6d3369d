#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "almond/nn/layers.hpp"

namespace almond::nn {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

inline std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw InvalidConfig("unknown optimizer '" + std::string(name) + "'");
}

// First and second moment buffers, one pair per learnable parameter.
template <typename T>
struct OptimizerState {
  std::vector<Tensor<T>> m, v;
  long long step = 0;
};

// Applies one update to every learnable parameter. step_index is 1-based and
// drives Adam's bias correction. Nothing is modified if any gradient is
// non-finite.
template <typename T>
void optimizer_step(const std::vector<Param<T>*>& params, const OptimizerConfig& cfg, OptimizerState<T>& state,
                    long long step_index) {
  for (const Param<T>* p : params) {
    if (!p->learnable) continue;
    for (T g : p->grad.values()) {
      if (!std::isfinite(static_cast<double>(g))) throw NonFiniteGradient("non-finite gradient in " + p->name);
    }
  }

  if (cfg.kind == OptimizerKind::sgd) {
    const T lr = static_cast<T>(cfg.lr);
    for (Param<T>* p : params) {
      if (!p->learnable) continue;
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr * p->grad[i];
    }
    state.step = step_index;
    return;
  }

  if (step_index < 1) throw InvalidConfig("adam step index must be >= 1");
  if (state.m.empty()) {
    for (const Param<T>* p : params) {
      if (!p->learnable) continue;
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  std::size_t slot = 0;
  for (Param<T>* p : params) {
    if (!p->learnable) continue;
    Tensor<T>& m = state.m.at(slot);
    Tensor<T>& v = state.v.at(slot);
    ++slot;
    if (m.shape() != p->value.shape()) throw ShapeMismatch("optimizer state does not match " + p->name);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const T g = p->grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p->value[i] = static_cast<T>(p->value[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  }
  state.step = step_index;
}

}  // namespace almond::nn
