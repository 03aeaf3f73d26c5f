#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diag/cohort.hpp"
#include "diag/image_model.hpp"
#include "diag/indicator_model.hpp"
#include "diag/metrics.hpp"
#include "diag/serialize.hpp"
#include "diag/text_model.hpp"

namespace diag {

/// Hyperparameter assignment by name, e.g. {"learning_rate": 0.1}.
using HyperParams = std::map<std::string, double>;

/// Default hyperparameters for every modality.
struct ModelConfig {
  GbdtParams indicator;
  TextParams text;
  ImageParams image;
};

void apply_hyperparams(GbdtParams& p, const HyperParams& hp);
void apply_hyperparams(TextParams& p, const HyperParams& hp);
void apply_hyperparams(ImageParams& p, const HyperParams& hp);

/// Named axes; points enumerate the cartesian product with the last axis varying fastest.
struct HyperparamGrid {
  std::vector<std::pair<std::string, std::vector<double>>> axes;

  std::size_t size() const;
  std::vector<HyperParams> points() const;
};

struct GridPointResult {
  HyperParams point;
  std::vector<double> fold_f1;
  double mean_f1 = 0.0;
  double stdev_f1 = 0.0;  // sample standard deviation across folds
  bool diverged = false;
};

struct GridSearchResult {
  HyperParams best;
  std::vector<GridPointResult> report;  // one row per grid point, in iteration order
};

/// Exhaustive k-fold grid search scored by mean macro F1. A point whose training
/// diverges scores 0; other training errors propagate annotated with the point.
GridSearchResult grid_search(Modality modality, const HyperparamGrid& grid, const CohortDataset& dataset, int k,
                             std::uint64_t seed, const ModelConfig& base = {});

/// The three per-modality classifiers; any may be absent.
struct TrainedModels {
  std::optional<IndicatorModel> indicator;
  std::optional<TextModel> text;
  std::optional<ImageModel> image;

  bool complete() const { return indicator && text && image; }
  ClassDistribution predict(Modality m, const PatientRecord& record) const;
};

TrainedModels train_models(const CohortDataset& train, const ModelConfig& config,
                           const std::vector<Modality>& which = {Modality::Indicator, Modality::Text, Modality::Image});

std::string hyperparams_to_string(const HyperParams& hp);

}  // namespace diag
