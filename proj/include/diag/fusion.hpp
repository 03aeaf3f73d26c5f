#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "diag/cohort.hpp"
#include "diag/matrix.hpp"
#include "diag/metrics.hpp"
#include "diag/serialize.hpp"

namespace diag {

struct TrainedModels;

/// Nonnegative simplex weights in modality order (indicator, text, image).
struct ModalityWeights {
  std::array<double, kNumModalities> w{1.0 / 3, 1.0 / 3, 1.0 / 3};

  ModalityWeights() = default;
  /// Validates nonnegativity and sum within 1e-9 of one.
  explicit ModalityWeights(const std::array<double, kNumModalities>& w);

  double operator[](Modality m) const { return w[static_cast<int>(m)]; }
  double operator[](int m) const { return w[m]; }
};

using ModalityPredictions = std::array<ClassDistribution, kNumModalities>;

struct FusedPrediction {
  ClassDistribution fused;
  ModalityPredictions per_modality;
  std::array<double, kNumModalities> effective_weights{};  // renormalized over present modalities
  /// share[m][c] = w'_m P_m(c) / fused(c); zero where fused(c) = 0 or m is absent.
  std::array<std::array<double, kNumClasses>, kNumModalities> contribution_share{};
  ModalityMask present;
};

/// Weights restricted to the present modalities and rescaled to sum to one. When the
/// present modalities carry zero total weight they are weighted uniformly.
std::array<double, kNumModalities> renormalized_weights(const ModalityWeights& weights, const ModalityMask& mask);

/// Convex combination over the present modalities with renormalized weights.
FusedPrediction fuse(const ModalityPredictions& per_modality, const ModalityWeights& weights,
                     const ModalityMask& mask = {});

struct WeightLearningConfig {
  int iterations = 500;
  double step = 0.1;
};

struct WeightLearningResult {
  ModalityWeights weights;
  std::vector<double> loss_trace;  // loss before each iteration, then the final iterate's loss
  double initial_loss = 0.0;
  double final_loss = 0.0;         // loss at the returned weights
};

/// Mean cross-entropy of the fused distribution.
double fusion_loss(std::span<const ModalityPredictions> predictions, std::span<const int> labels,
                   const ModalityWeights& weights);

/// Projected gradient descent on the simplex from uniform weights. Returns the
/// lowest-loss iterate, so the result is never worse than the initialization.
WeightLearningResult learn_weights(std::span<const ModalityPredictions> predictions, std::span<const int> labels,
                                   const WeightLearningConfig& config = {});

/// Euclidean projection onto the probability simplex.
std::array<double, kNumModalities> project_to_simplex(const std::array<double, kNumModalities>& v);

struct LogisticParams {
  int iterations = 1000;
  double step_scale = 1.0;  // step = step_scale / (smoothness bound of the loss)
  double l2 = 1e-4;
};

/// Multinomial logistic regression over standardized concatenated embeddings, full-batch
/// gradient descent from zero weights and log-prior biases.
class FeatureLevelClassifier {
 public:
  static FeatureLevelClassifier train(const Matrix& x, std::span<const int> labels, const LogisticParams& params = {});

  ClassDistribution predict_proba(std::span<const double> x) const;
  std::size_t input_dim() const { return standardizer_.mean.size(); }

  void save(ByteWriter& w) const;
  static FeatureLevelClassifier load(ByteReader& r);

 private:
  Standardizer standardizer_;
  Matrix weights_;  // classes x dim
  std::array<double, kNumClasses> bias_{};
};

struct FusionComparisonReport {
  ModalityWeights weights;
  WeightLearningResult learning;
  std::array<ModelMetrics, kNumModalities> unimodal;
  ModelMetrics decision_level;
  ModelMetrics feature_level;
  std::vector<std::string> val_card_ids;
  std::string provenance;

  nlohmann::json to_json() const;
};

/// Per-modality predictions for a record; absent modalities get the uniform distribution.
ModalityPredictions modality_predictions(const TrainedModels& models, const PatientRecord& record);

/// Learns fusion weights on validation predictions, trains the feature-level baseline on
/// the training split, and scores both strategies on the same validation split.
FusionComparisonReport compare_fusion_strategies(const CohortDataset& dataset, const TrainedModels& models,
                                                 const LogisticParams& baseline = {},
                                                 const WeightLearningConfig& learning = {});

nlohmann::json metrics_json(const ModelMetrics& m);

}  // namespace diag
