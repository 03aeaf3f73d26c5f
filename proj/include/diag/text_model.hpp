#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "diag/cohort.hpp"
#include "diag/matrix.hpp"
#include "diag/metrics.hpp"
#include "diag/serialize.hpp"
#include "diag/sgd.hpp"

namespace diag {

struct TextParams {
  int dim = 64;
  int min_count = 2;  // tokens seen fewer times in training are out of vocabulary
  double init_scale = 0.1;
  SgdConfig sgd;
};

/// Bag-of-embeddings linear classifier: the document embedding is the sum of its
/// tokens' embedding rows, and logits = class_weights * embedding + bias.
class TextModel {
 public:
  /// Document as (vocabulary index, count) pairs sorted by index.
  using Bag = std::vector<std::pair<int, int>>;

  struct Gradients {
    Matrix embedding;
    Matrix class_weights;
    std::array<double, kNumClasses> bias{};
  };

  TextModel() = default;
  /// Untrained model with explicit parameters; used for hand-built instances.
  TextModel(std::map<std::string, int> vocabulary, Matrix embedding, Matrix class_weights,
            std::array<double, kNumClasses> bias);

  static TextModel train(const CohortDataset& train, const TextParams& params);
  static TextModel train(const std::vector<std::vector<std::string>>& docs, std::span<const int> labels,
                         const TextParams& params);

  Bag bag(std::span<const std::string> tokens) const;
  /// Sum of embedding rows; OOV tokens contribute nothing. Order-invariant bit for bit.
  std::vector<double> embed(std::span<const std::string> tokens) const;
  std::array<double, kNumClasses> logits(std::span<const std::string> tokens) const;
  ClassDistribution predict_proba(std::span<const std::string> tokens) const;
  ClassDistribution predict_proba(const ClinicalNote& note) const { return predict_proba(note.tokens()); }

  /// Cross-entropy averaged over docs, with gradients when `grads` is non-null.
  double loss(const std::vector<Bag>& docs, std::span<const int> labels, Gradients* grads) const;

  std::optional<int> index_of(const std::string& token) const;
  const std::map<std::string, int>& vocabulary() const { return vocab_; }
  const Matrix& embedding() const { return embedding_; }
  Matrix& embedding() { return embedding_; }
  const Matrix& class_weights() const { return class_weights_; }
  Matrix& class_weights() { return class_weights_; }
  const std::array<double, kNumClasses>& bias() const { return bias_; }
  std::array<double, kNumClasses>& bias() { return bias_; }
  std::size_t dim() const { return embedding_.cols; }
  const TrainingReport& report() const { return report_; }

  void save(ByteWriter& w) const;
  static TextModel load(ByteReader& r);

 private:
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  std::map<std::string, int> vocab_;
  Matrix embedding_;      // |V| x d
  Matrix class_weights_;  // 3 x d
  std::array<double, kNumClasses> bias_{};
  TrainingReport report_;
};

std::map<std::string, int> build_vocabulary(const std::vector<std::vector<std::string>>& docs, int min_count);

}  // namespace diag
