#include "almond/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace almond {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1) throw InvalidConfig("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<long long>>& rows) {
  ConfusionMatrix m(static_cast<int>(rows.size()));
  for (int t = 0; t < m.k_; ++t) {
    if (static_cast<int>(rows[t].size()) != m.k_) throw ShapeMismatch("confusion matrix must be square");
    for (int p = 0; p < m.k_; ++p) m.add(t, p, rows[t][p]);
  }
  return m;
}

void ConfusionMatrix::add(int truth, int predicted, long long n) {
  if (truth < 0 || truth >= k_ || predicted < 0 || predicted >= k_) throw ShapeMismatch("class index out of range");
  if (n < 0) throw InvalidConfig("negative confusion count");
  counts_[static_cast<std::size_t>(truth) * k_ + predicted] += n;
}

long long ConfusionMatrix::total() const {
  long long s = 0;
  for (auto c : counts_) s += c;
  return s;
}

long long ConfusionMatrix::trace() const {
  long long s = 0;
  for (int i = 0; i < k_; ++i) s += at(i, i);
  return s;
}

ConfusionMatrix confusion_from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                           int num_classes) {
  if (truth.size() != predicted.size()) throw ShapeMismatch("truth and prediction lengths differ");
  ConfusionMatrix m(num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) m.add(truth[i], predicted[i]);
  return m;
}

namespace {

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

EvalReport metrics_from_confusion(const ConfusionMatrix& m, std::vector<std::string> class_names) {
  const int k = m.num_classes();
  const long long total = m.total();
  if (total == 0) throw EmptyMatrix("confusion matrix has no samples");
  if (class_names.empty()) {
    for (int c = 0; c < k; ++c) class_names.push_back("class " + std::to_string(c));
  }
  if (static_cast<int>(class_names.size()) != k) throw ShapeMismatch("class name count differs from matrix size");

  EvalReport rep;
  rep.class_names = std::move(class_names);
  rep.total = total;
  rep.accuracy = static_cast<double>(m.trace()) / static_cast<double>(total);

  long long tp_sum = 0, fp_sum = 0, fn_sum = 0;
  for (int c = 0; c < k; ++c) {
    long long tp = m.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += m.at(o, c);
      fn += m.at(c, o);
    }
    ClassMetrics cm;
    cm.precision = ratio(static_cast<double>(tp), static_cast<double>(tp + fp));
    cm.recall = ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
    cm.f1 = harmonic(cm.precision, cm.recall);
    cm.support = tp + fn;
    rep.per_class.push_back(cm);
    tp_sum += tp;
    fp_sum += fp;
    fn_sum += fn;
  }

  rep.micro.precision = ratio(static_cast<double>(tp_sum), static_cast<double>(tp_sum + fp_sum));
  rep.micro.recall = ratio(static_cast<double>(tp_sum), static_cast<double>(tp_sum + fn_sum));
  rep.micro.f1 = harmonic(rep.micro.precision, rep.micro.recall);
  rep.micro.support = total;

  for (const auto& cm : rep.per_class) {
    const double w = static_cast<double>(cm.support) / static_cast<double>(total);
    rep.weighted.precision += w * cm.precision;
    rep.weighted.recall += w * cm.recall;
    rep.weighted.f1 += w * cm.f1;
  }
  rep.weighted.support = total;
  return rep;
}

std::string EvalReport::format(int digits) const {
  std::size_t name_w = 12;
  for (const auto& n : class_names) name_w = std::max(name_w, n.size());
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits);
  const int col = digits + 6;
  out << std::string(name_w, ' ') << std::setw(col) << "precision" << std::setw(col) << "recall" << std::setw(col)
      << "f1-score" << std::setw(col) << "support" << "\n\n";
  auto row = [&](const std::string& name, const ClassMetrics& m) {
    out << std::setw(static_cast<int>(name_w)) << name << std::setw(col) << m.precision << std::setw(col) << m.recall
        << std::setw(col) << m.f1 << std::setw(col) << m.support << "\n";
  };
  for (std::size_t c = 0; c < per_class.size(); ++c) row(class_names[c], per_class[c]);
  out << "\n"
      << std::setw(static_cast<int>(name_w)) << "accuracy" << std::setw(col) << "" << std::setw(col) << ""
      << std::setw(col) << accuracy << std::setw(col) << total << "\n";
  row("micro avg", micro);
  row("weighted avg", weighted);
  return out.str();
}

}  // namespace almond
