#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "diag/cohort.hpp"
#include "diag/fusion.hpp"
#include "diag/matrix.hpp"
#include "diag/models.hpp"

namespace diag {

enum class EmbeddingSpace : int { Indicator = 0, Text = 1, Image = 2, Fusion = 3 };
inline constexpr int kNumSpaces = 4;

std::string_view space_name(EmbeddingSpace s);
EmbeddingSpace parse_space(std::string_view text);

/// Standardized tabular features, token-embedding sum, or penultimate activations.
/// Absent modalities yield a zero vector.
std::vector<double> modality_embedding(const TrainedModels& models, Modality m, const PatientRecord& record);
std::size_t embedding_dim(const TrainedModels& models, Modality m);

struct EmbeddingSet {
  std::vector<std::string> card_ids;
  std::vector<ModalityMask> masks;
  ModalityWeights weights;
  std::array<Matrix, kNumSpaces> spaces;  // fusion rows are the weighted concatenation

  const Matrix& space(EmbeddingSpace s) const { return spaces[static_cast<int>(s)]; }
};

EmbeddingSet extract_embeddings(const TrainedModels& models, const ModalityWeights& weights,
                                const CohortDataset& dataset);

/// Unweighted concatenation of the three modality embeddings, one row per record.
Matrix concatenated_embeddings(const TrainedModels& models, const CohortDataset& dataset);

struct TsneParams {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch = 250;
  std::uint64_t seed = 0;

  void validate(std::size_t n) const;
  nlohmann::json to_json() const;
};

struct TsneResult {
  Matrix coords;                                // n x 2
  std::vector<std::pair<int, double>> kl_trace;  // (iteration, KL) every 50 iterations
  double final_kl = 0.0;
};

/// Per-row Gaussian conditionals calibrated to the perplexity (row i holds p_{j|i}).
/// `entropies`, when given, receives each row's achieved entropy in nats.
Matrix conditional_affinities(const Matrix& x, double perplexity, std::vector<double>* entropies = nullptr);
/// Symmetrized joint affinities (P + P^T) / 2n.
Matrix joint_affinities(const Matrix& x, double perplexity);

/// Exact t-SNE to two dimensions.
TsneResult tsne(const Matrix& x, const TsneParams& params);

struct ProjectionSet {
  std::vector<std::string> card_ids;
  std::array<TsneResult, kNumSpaces> spaces;
  TsneParams params;

  const TsneResult& space(EmbeddingSpace s) const { return spaces[static_cast<int>(s)]; }
  nlohmann::json to_json() const;
  static ProjectionSet from_json(const nlohmann::json& j);
};

/// Projects every space with the same parameters and seed; spaces run concurrently.
ProjectionSet project_all(const EmbeddingSet& embeddings, const TsneParams& params);

}  // namespace diag
