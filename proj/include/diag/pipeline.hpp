#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "diag/cohort.hpp"
#include "diag/embed.hpp"
#include "diag/explain.hpp"
#include "diag/fusion.hpp"
#include "diag/models.hpp"

namespace diag {

/// Invalid or unreadable configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required artifact is absent (CLI exit code 3). The message names the subcommand to run.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Settings from a key=value file. Relative paths resolve against `workdir`.
struct Config {
  std::filesystem::path workdir = ".";
  SyntheticConfig synthetic;
  double split_ratio = 0.75;
  std::uint64_t split_seed = 1;
  ModelConfig models;
  std::map<Modality, HyperparamGrid> grids;  // from grid.<modality>.<name> = v1, v2, ...
  int cv_folds = 5;
  std::uint64_t cv_seed = 0;
  WeightLearningConfig weight_learning;
  LogisticParams baseline;
  TsneParams tsne;
  ExplainConfig explain;
  std::size_t background_size = 100;
  std::uint64_t background_seed = 0;
  std::string host = "127.0.0.1";
  int port = 8750;
  int threads = 8;

  /// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
  static Config parse(const std::string& text, const std::filesystem::path& workdir);
  static Config load(const std::filesystem::path& path);
};

/// File layout under the working directory.
struct Workspace {
  std::filesystem::path root;

  explicit Workspace(std::filesystem::path r) : root(std::move(r)) {}
  CohortPaths cohort() const;
  std::filesystem::path split_file() const { return root / "data" / "split.json"; }
  std::filesystem::path provenance_file() const { return root / "data" / "provenance.json"; }
  std::filesystem::path models_file() const { return root / "models" / "models.damdl"; }
  std::filesystem::path fusion_file() const { return root / "models" / "fusion.damdl"; }
  std::filesystem::path metrics_report() const { return root / "reports" / "metrics.json"; }
  std::filesystem::path fusion_report() const { return root / "reports" / "fusion-report.json"; }
  std::filesystem::path grid_report(Modality m) const;
  std::filesystem::path projections_file() const { return root / "projections.json"; }
  std::filesystem::path explain_dir() const { return root / "reports" / "explain"; }
  std::filesystem::path cache_dir() const { return root / "cache" / "attributions"; }
  std::filesystem::path store_dir() const { return root / "store"; }
};

void save_models(const TrainedModels& models, const std::filesystem::path& path);
TrainedModels load_models(const std::filesystem::path& path);

struct FusionArtifact {
  ModalityWeights weights;
  FeatureLevelClassifier feature_level;
};

void save_fusion(const FusionArtifact& artifact, const std::filesystem::path& path);
FusionArtifact load_fusion(const std::filesystem::path& path);

/// Loads the cohort files and the stored split.
CohortDataset load_workspace_dataset(const Workspace& ws);

/// Raw tabular rows of the training split, subsampled for Shapley backgrounds.
Matrix shapley_background(const CohortDataset& dataset, const Config& config);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// Batch steps behind the CLI subcommands. Each writes its artifacts under the workspace.
void run_generate(const Config& config);
void run_train(const Config& config, const std::vector<Modality>& modalities);
enum class FusionMode { Decision, Feature, Both };
FusionComparisonReport run_evaluate(const Config& config, FusionMode mode);
ProjectionSet run_project(const Config& config);
AttributionBundle run_explain(const Config& config, const std::string& card_id, std::optional<int> target_class);

}  // namespace diag
