#pragma once

#include <span>
#include <string>
#include <vector>

#include "almond/errors.hpp"

namespace almond {

// K x K counts; rows are the true class, columns the predicted class.
class ConfusionMatrix {
public:
  explicit ConfusionMatrix(int num_classes = 2);
  static ConfusionMatrix from_rows(const std::vector<std::vector<long long>>& rows);

  int num_classes() const { return k_; }
  long long at(int truth, int predicted) const { return counts_[static_cast<std::size_t>(truth) * k_ + predicted]; }
  void add(int truth, int predicted, long long n = 1);
  long long total() const;
  long long trace() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
  int k_;
  std::vector<long long> counts_;
};

ConfusionMatrix confusion_from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                           int num_classes);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long long support = 0;
};

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  ClassMetrics micro;     // pooled TP/FP/FN
  ClassMetrics weighted;  // support-weighted mean of per-class values
  long long total = 0;

  // Text table: one row per class, then accuracy, micro avg, weighted avg.
  std::string format(int digits = 4) const;
};

// Precision, recall and F1 are 0 whenever their denominator is 0.
// Throws EmptyMatrix when the matrix holds no samples.
EvalReport metrics_from_confusion(const ConfusionMatrix& matrix, std::vector<std::string> class_names = {});

}  // namespace almond
