#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "diag/cohort.hpp"
#include "diag/image_model.hpp"
#include "diag/matrix.hpp"
#include "diag/models.hpp"
#include "diag/text_model.hpp"

namespace diag {

/// Per-class model output on a feature vector (probabilities or any real scores).
using ModelFn = std::function<std::array<double, kNumClasses>(std::span<const double>)>;

struct ShapleyAttribution {
  int target_class = 0;
  double base_value = 0.0;  // mean output over the background
  std::vector<double> phi;
  double prediction = 0.0;  // model output on x
};

inline constexpr std::size_t kMaxExactShapleyFeatures = 15;

/// Exact coalition enumeration with interventional (marginal) background replacement.
ShapleyAttribution exact_shapley(const ModelFn& f, std::span<const double> x, const Matrix& background,
                                 int target_class);

/// Antithetic permutation sampling; each permutation pairs with one background row. The
/// efficiency residual is spread over features in proportion to |phi|.
ShapleyAttribution sampled_shapley(const ModelFn& f, std::span<const double> x, const Matrix& background,
                                   int target_class, std::size_t n_samples, std::uint64_t seed);

/// `count` distinct rows drawn without replacement (all rows when fewer are available).
Matrix sample_background(const Matrix& rows, std::size_t count, std::uint64_t seed);

enum class CamMode { GradCam, GuidedGradCam };
std::string_view cam_mode_name(CamMode mode);

struct SaliencyMap {
  std::vector<double> values;  // kImageSize x kImageSize, row-major
  int target_class = 0;
  CamMode mode = CamMode::GuidedGradCam;

  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * kImageSize + col]; }
};

SaliencyMap grad_cam(const ImageModel& model, std::span<const double> pixels, int target_class, CamMode mode);

/// Bilinear resampling with half-pixel centres, edges clamped.
std::vector<double> bilinear_upsample(std::span<const double> in, int in_size, int out_size);

struct TokenWeight {
  std::string token;
  std::size_t position = 0;
  double weight = 0.0;
};

struct TokenAttribution {
  int target_class = 0;
  std::vector<TokenWeight> tokens;  // document order
  double bias = 0.0;
  double logit = 0.0;
};

TokenAttribution token_attribution(const TextModel& model, std::span<const std::string> tokens, int target_class);

struct ExplainConfig {
  std::size_t shapley_samples = 2000;
  std::uint64_t seed = 0;
};

struct AttributionBundle {
  std::string card_id;
  int target_class = 0;
  ModalityMask mask;
  std::optional<ShapleyAttribution> shapley;
  std::optional<TokenAttribution> tokens;
  std::optional<SaliencyMap> saliency;

  nlohmann::json to_json() const;
  static AttributionBundle from_json(const nlohmann::json& j);
};

/// Indicator Shapley values are over raw tabular features against `background` (raw rows).
AttributionBundle explain_patient(const TrainedModels& models, const Matrix& background, const PatientRecord& record,
                                  int target_class, const ExplainConfig& config = {});

std::string saliency_png(const SaliencyMap& map);
nlohmann::json saliency_json(const SaliencyMap& map);

}  // namespace diag
