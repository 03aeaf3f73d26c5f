#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "diag/cohort.hpp"

namespace diag {

/// Probability vector over {normal, herniated, bulging}.
class ClassDistribution {
 public:
  ClassDistribution() : p_{1.0 / 3, 1.0 / 3, 1.0 / 3} {}
  /// Validates: each entry in [0,1] and the sum within 1e-9 of one.
  explicit ClassDistribution(const std::array<double, kNumClasses>& p);

  static ClassDistribution softmax(std::span<const double> logits);

  double operator[](int c) const { return p_[c]; }
  const std::array<double, kNumClasses>& values() const { return p_; }
  int argmax() const;  // ties go to the lowest class code

 private:
  std::array<double, kNumClasses> p_;
};

int argmax(std::span<const double> values);

using Confusion = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;  // [true][pred]

struct ModelMetrics {
  double accuracy = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
  Confusion confusion{};

  static ModelMetrics from_confusion(const Confusion& confusion);
};

using RecordPredictor = std::function<ClassDistribution(const PatientRecord&)>;

ModelMetrics evaluate(const RecordPredictor& predict, const CohortDataset& dataset);
ModelMetrics evaluate_predictions(std::span<const int> truth, std::span<const int> predicted);

}  // namespace diag
