#pragma once

#include <span>
#include <vector>

#include "diag/cohort.hpp"
#include "diag/gbdt.hpp"
#include "diag/matrix.hpp"
#include "diag/metrics.hpp"

namespace diag {

/// Boosted-tree classifier over the 37 tabular features, z-scored with training statistics.
class IndicatorModel {
 public:
  static IndicatorModel train(const CohortDataset& train, const GbdtParams& params);
  static IndicatorModel train(const Matrix& raw_features, std::span<const int> labels, const GbdtParams& params);

  ClassDistribution predict_proba(const IndicatorVector& indicators) const;
  /// Prediction on a raw (unstandardized) feature vector of `feature_count()` entries.
  ClassDistribution predict_features(std::span<const double> raw) const;
  std::vector<double> standardize(std::span<const double> raw) const { return standardizer_.apply(raw); }

  std::size_t feature_count() const { return standardizer_.mean.size(); }
  const GradientBoostedClassifier& booster() const { return booster_; }
  const GbdtParams& params() const { return params_; }

  void save(ByteWriter& w) const;
  static IndicatorModel load(ByteReader& r);

 private:
  Standardizer standardizer_;
  GradientBoostedClassifier booster_;
  GbdtParams params_;
};

Matrix tabular_matrix(const CohortDataset& dataset);

}  // namespace diag
