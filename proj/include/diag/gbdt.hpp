#pragma once

#include <array>
#include <span>
#include <vector>

#include "diag/cohort.hpp"
#include "diag/matrix.hpp"
#include "diag/metrics.hpp"
#include "diag/serialize.hpp"

namespace diag {

struct GbdtParams {
  int tree_count = 100;  // boosting rounds; each round grows one tree per class
  int max_depth = 3;
  double learning_rate = 0.1;
  int min_samples_leaf = 1;
};

/// Depth-limited least-squares regression tree. Node 0 is the root.
class RegressionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // go left when x[feature] <= threshold
    int left = -1;
    int right = -1;
    double value = 0.0;
  };

  double predict(std::span<const double> x) const;
  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<Node>& mutable_nodes() { return nodes_; }

  void save(ByteWriter& w) const;
  static RegressionTree load(ByteReader& r);

 private:
  std::vector<Node> nodes_;
};

/// Multiclass gradient boosting with a softmax link: per round, one regression
/// tree per class is fit to the cross-entropy gradient, with Newton leaf values.
class GradientBoostedClassifier {
 public:
  static GradientBoostedClassifier fit(const Matrix& x, std::span<const int> labels, const GbdtParams& params);

  std::array<double, kNumClasses> raw_scores(std::span<const double> x) const;
  ClassDistribution predict(std::span<const double> x) const;

  std::size_t feature_count() const { return feature_count_; }
  std::size_t round_count() const { return trees_.size(); }
  /// Mean training cross-entropy after initialization and after each round.
  const std::vector<double>& loss_trace() const { return loss_trace_; }

  void save(ByteWriter& w) const;
  static GradientBoostedClassifier load(ByteReader& r);

 private:
  std::size_t feature_count_ = 0;
  std::array<double, kNumClasses> init_{};
  std::vector<std::array<RegressionTree, kNumClasses>> trees_;
  std::vector<double> loss_trace_;
};

}  // namespace diag
