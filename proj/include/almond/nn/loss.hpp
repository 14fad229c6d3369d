#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "almond/nn/tensor.hpp"

namespace almond::nn {

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  // dL/dlogits
};

// Class-weighted softmax cross-entropy, averaged over the batch:
//   L = (1/N) sum_n -w[y_n] log p[n, y_n]
//   dL/dz[n,k] = w[y_n] (p[n,k] - t[n,k]) / N
// targets must be one-hot rows; an empty `class_weights` means all ones.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets,
                                    std::span<const double> class_weights = {}) {
  if (logits.rank() != 2 || targets.shape() != logits.shape()) {
    throw ShapeMismatch("logits " + shape_str(logits.shape()) + " vs targets " + shape_str(targets.shape()));
  }
  const int N = logits.dim(0), K = logits.dim(1);
  if (N == 0) throw ZeroBatch("cross-entropy on empty batch");
  if (!class_weights.empty() && static_cast<int>(class_weights.size()) != K) {
    throw ShapeMismatch("expected " + std::to_string(K) + " class weights, got " +
                        std::to_string(class_weights.size()));
  }

  LossResult<T> r{0.0, Tensor<T>(logits.shape())};
  for (int n = 0; n < N; ++n) {
    int label = -1;
    for (int k = 0; k < K; ++k) {
      const T t = targets.at(n, k);
      if (t == T(1)) {
        if (label >= 0) throw ShapeMismatch("target row " + std::to_string(n) + " is not one-hot");
        label = k;
      } else if (t != T(0)) {
        throw ShapeMismatch("target row " + std::to_string(n) + " is not one-hot");
      }
    }
    if (label < 0) throw ShapeMismatch("target row " + std::to_string(n) + " is not one-hot");

    double mx = logits.at(n, 0);
    for (int k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(logits.at(n, k)));
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(logits.at(n, k) - mx);
    const double log_sum = std::log(sum);
    const double w = class_weights.empty() ? 1.0 : class_weights[label];
    r.loss += -w * (logits.at(n, label) - mx - log_sum);
    for (int k = 0; k < K; ++k) {
      const double p = std::exp(logits.at(n, k) - mx - log_sum);
      r.grad.at(n, k) = static_cast<T>(w * (p - (k == label ? 1.0 : 0.0)) / N);
    }
  }
  r.loss /= N;
  return r;
}

template <typename T>
Tensor<T> one_hot(std::span<const int> labels, int num_classes) {
  Tensor<T> t({static_cast<int>(labels.size()), num_classes});
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || labels[n] >= num_classes) throw ShapeMismatch("label out of range");
    t.at(static_cast<int>(n), labels[n]) = T(1);
  }
  return t;
}

}  // namespace almond::nn
