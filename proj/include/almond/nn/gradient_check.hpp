#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "almond/nn/loss.hpp"
#include "almond/nn/sequential.hpp"

namespace almond::nn {

struct GradCheckOptions {
  double epsilon = 1e-3;
  int samples_per_param = 8;
  std::uint64_t seed = 0;
  // Below this magnitude both gradients count as zero.
  double zero_tolerance = 1e-10;
  // Five-point stencil
  //   (-L(+2e) + 8 L(+e) - 8 L(-e) + L(-2e)) / (12 e)
  // instead of the two-point one. Truncation drops from O(e^2) to O(e^4), which
  // is what lets a double check resolve relative errors near 1e-6 on layers
  // with large third derivatives (batchnorm over a handful of samples).
  bool fourth_order = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int checked = 0;
  // Coordinates whose +/- epsilon probes changed a relu gate or pool winner;
  // the loss is not differentiable across that step, so they are resampled.
  int kinks_skipped = 0;
};

// Compares backward() against central differences
//   (L(theta + eps) - L(theta - eps)) / (2 eps)
// on randomly sampled coordinates of every learnable tensor. Dropout is
// switched off for the duration (its masks would make L non-deterministic);
// batchnorm stays in train mode. The finite differences are evaluated on a
// copy of the model in precision U, so a float model can be checked against a
// double oracle. Parameters and running statistics are restored afterwards.
template <typename T, typename U = T>
GradCheckResult gradient_check(Sequential<T>& model, const Tensor<T>& batch, const Tensor<T>& targets,
                               std::span<const double> class_weights, const GradCheckOptions& opts) {
  std::vector<Tensor<T>> snapshot;
  for (Param<T>* p : model.parameters()) snapshot.push_back(p->value);

  model.set_dropout_enabled(false);
  model.zero_grad();
  const auto base = softmax_cross_entropy(model.logits(batch, Mode::train), targets, class_weights);
  model.backward(base.grad);
  std::vector<Tensor<T>> analytic;
  for (Param<T>* p : model.learnable_parameters()) analytic.push_back(p->grad);

  {
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snapshot[i];
  }
  Sequential<U> oracle = model.template cast<U>();
  oracle.set_dropout_enabled(false);
  const Tensor<U> batch_u = batch.template cast<U>();
  const Tensor<U> targets_u = targets.template cast<U>();
  auto loss_at = [&](std::uint64_t& signature) {
    const double l = softmax_cross_entropy(oracle.logits(batch_u, Mode::train), targets_u, class_weights).loss;
    signature = oracle.switch_signature();
    return l;
  };
  std::uint64_t sig0 = 0;
  loss_at(sig0);

  GradCheckResult result;
  Rng rng(opts.seed);
  auto oracle_params = oracle.learnable_parameters();
  auto names = model.learnable_parameters();
  for (std::size_t pi = 0; pi < oracle_params.size(); ++pi) {
    Param<U>* q = oracle_params[pi];
    std::vector<std::size_t> order(q->value.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));

    int taken = 0;
    for (std::size_t k = 0; k < order.size() && taken < opts.samples_per_param; ++k) {
      const std::size_t i = order[k];
      const U orig = q->value[i];
      const double e = opts.epsilon;
      auto probe = [&](double step, bool& kink) {
        std::uint64_t sig = 0;
        q->value[i] = static_cast<U>(orig + step);
        const double l = loss_at(sig);
        kink = kink || sig != sig0;
        return l;
      };
      bool kink = false;
      double numeric = 0.0;
      if (opts.fourth_order) {
        const double l2 = probe(2 * e, kink), l1 = probe(e, kink), m1 = probe(-e, kink), m2 = probe(-2 * e, kink);
        numeric = (-l2 + 8 * l1 - 8 * m1 + m2) / (12 * e);
      } else {
        const U up = static_cast<U>(orig + e), down = static_cast<U>(orig - e);
        const double l_up = probe(e, kink), l_down = probe(-e, kink);
        // Divide by the step actually taken after rounding to U.
        numeric = (l_up - l_down) / (static_cast<double>(up) - static_cast<double>(down));
      }
      q->value[i] = orig;
      if (kink) {
        ++result.kinks_skipped;
        continue;
      }
      ++taken;
      ++result.checked;
      const double a = analytic[pi][i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double rel = scale < opts.zero_tolerance ? 0.0 : std::abs(a - numeric) / scale;
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = std::max(rel, result.max_rel_error);
        if (rel >= result.max_rel_error) {
          result.worst_param = "param" + std::to_string(pi) + ":" + names[pi]->name + "[" + std::to_string(i) + "]";
          result.worst_analytic = a;
          result.worst_numeric = numeric;
        }
      }
    }
  }

  model.zero_grad();
  model.set_dropout_enabled(true);
  return result;
}

}  // namespace almond::nn
