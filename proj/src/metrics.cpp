#include "diag/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace diag {

ClassDistribution::ClassDistribution(const std::array<double, kNumClasses>& p) : p_(p) {
  double sum = 0.0;
  for (double v : p_) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("class probability outside [0,1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("class probabilities do not sum to 1");
}

ClassDistribution ClassDistribution::softmax(std::span<const double> logits) {
  if (logits.size() != kNumClasses) throw std::invalid_argument("softmax: expected 3 logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(mx)) throw std::domain_error("softmax: non-finite logits");
  std::array<double, kNumClasses> p{};
  double z = 0.0;
  for (int c = 0; c < kNumClasses; ++c) z += p[c] = std::exp(logits[c] - mx);
  for (auto& v : p) v /= z;
  return ClassDistribution(p);
}

int ClassDistribution::argmax() const { return diag::argmax(p_); }

int argmax(std::span<const double> values) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(values.size()); ++c) {
    if (values[c] > values[best]) best = c;
  }
  return best;
}

ModelMetrics ModelMetrics::from_confusion(const Confusion& confusion) {
  ModelMetrics m;
  m.confusion = confusion;
  std::size_t total = 0, correct = 0;
  for (int t = 0; t < kNumClasses; ++t) {
    for (int p = 0; p < kNumClasses; ++p) total += confusion[t][p];
    correct += confusion[t][t];
  }
  if (total == 0) throw std::invalid_argument("metrics: empty confusion matrix");
  m.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  double recall_sum = 0.0, f1_sum = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    std::size_t row = 0, col = 0;
    for (int k = 0; k < kNumClasses; ++k) {
      row += confusion[c][k];
      col += confusion[k][c];
    }
    const double tp = static_cast<double>(confusion[c][c]);
    const double recall = row ? tp / static_cast<double>(row) : 0.0;
    const double precision = col ? tp / static_cast<double>(col) : 0.0;
    recall_sum += recall;
    f1_sum += (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  m.macro_recall = recall_sum / kNumClasses;
  m.macro_f1 = f1_sum / kNumClasses;
  return m;
}

ModelMetrics evaluate_predictions(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (truth.size() != predicted.size()) throw std::invalid_argument("evaluate: size mismatch");
  Confusion confusion{};
  for (std::size_t i = 0; i < truth.size(); ++i) ++confusion.at(truth[i]).at(predicted[i]);
  return ModelMetrics::from_confusion(confusion);
}

ModelMetrics evaluate(const RecordPredictor& predict, const CohortDataset& dataset) {
  const auto truth = dataset.labels();
  if (truth.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<int> predicted;
  predicted.reserve(truth.size());
  for (const auto& r : dataset.records) predicted.push_back(predict(r).argmax());
  return evaluate_predictions(truth, predicted);
}

}  // namespace diag
