#include "diag/indicator_model.hpp"

#include <stdexcept>

namespace diag {

Matrix tabular_matrix(const CohortDataset& dataset) {
  Matrix x(dataset.records.size(), kNumTabularFeatures);
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto f = dataset.records[i].indicators.features();
    std::copy(f.begin(), f.end(), x.row(i).begin());
  }
  return x;
}

IndicatorModel IndicatorModel::train(const CohortDataset& train, const GbdtParams& params) {
  const auto labels = train.labels();
  return IndicatorModel::train(tabular_matrix(train), labels, params);
}

IndicatorModel IndicatorModel::train(const Matrix& raw_features, std::span<const int> labels, const GbdtParams& params) {
  IndicatorModel m;
  m.params_ = params;
  m.standardizer_ = Standardizer::fit(raw_features);
  m.booster_ = GradientBoostedClassifier::fit(m.standardizer_.apply(raw_features), labels, params);
  return m;
}

ClassDistribution IndicatorModel::predict_proba(const IndicatorVector& indicators) const {
  const auto f = indicators.features();
  return predict_features(f);
}

ClassDistribution IndicatorModel::predict_features(std::span<const double> raw) const {
  if (raw.size() != feature_count()) {
    throw std::invalid_argument("indicator model: expected " + std::to_string(feature_count()) + " features, got " +
                                std::to_string(raw.size()));
  }
  const auto z = standardizer_.apply(raw);
  return booster_.predict(z);
}

void IndicatorModel::save(ByteWriter& w) const {
  w.i64(params_.tree_count);
  w.i64(params_.max_depth);
  w.f64(params_.learning_rate);
  w.i64(params_.min_samples_leaf);
  w.f64s(standardizer_.mean);
  w.f64s(standardizer_.scale);
  booster_.save(w);
}

IndicatorModel IndicatorModel::load(ByteReader& r) {
  IndicatorModel m;
  m.params_.tree_count = static_cast<int>(r.i64());
  m.params_.max_depth = static_cast<int>(r.i64());
  m.params_.learning_rate = r.f64();
  m.params_.min_samples_leaf = static_cast<int>(r.i64());
  m.standardizer_.mean = r.f64s();
  m.standardizer_.scale = r.f64s();
  m.booster_ = GradientBoostedClassifier::load(r);
  if (m.standardizer_.mean.size() != m.standardizer_.scale.size() ||
      m.booster_.feature_count() != m.standardizer_.mean.size()) {
    throw std::runtime_error("artifact: inconsistent indicator model");
  }
  return m;
}

}  // namespace diag
