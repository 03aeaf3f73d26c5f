#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace diag {

inline constexpr int kNumClasses = 3;
inline constexpr int kNumIndicators = 34;
// 34 indicators plus gender, height and weight.
inline constexpr int kNumTabularFeatures = kNumIndicators + 3;
inline constexpr int kImageSize = 64;
inline constexpr std::size_t kMaxTokens = 512;

enum class DiagnosisLabel : int { Normal = 0, Herniated = 1, Bulging = 2 };

std::string_view label_name(DiagnosisLabel label);
DiagnosisLabel label_from_code(int code);
DiagnosisLabel parse_label(std::string_view text);  // accepts a code or a name
inline int code(DiagnosisLabel label) { return static_cast<int>(label); }

enum class Gender : int { Male = 0, Female = 1 };

enum class Modality : int { Indicator = 0, Text = 1, Image = 2 };
inline constexpr int kNumModalities = 3;
std::string_view modality_name(Modality m);
Modality parse_modality(std::string_view text);

struct IndicatorVector {
  std::array<double, kNumIndicators> values{};  // [0] age, [1] blood glucose
  Gender gender = Gender::Male;
  double height_cm = 0.0;
  double weight_kg = 0.0;

  double age() const { return values[0]; }
  double glucose() const { return values[1]; }

  /// Flattened Shapley/embedding feature space: 34 indicators, gender (0/1), height, weight.
  std::array<double, kNumTabularFeatures> features() const;
};

/// Names of the 37 tabular features in `IndicatorVector::features()` order.
const std::vector<std::string>& tabular_feature_names();

/// Lowercase, split on runs of non-alphanumeric characters, drop empties.
std::vector<std::string> tokenize(std::string_view text);

class ClinicalNote {
 public:
  ClinicalNote() = default;
  explicit ClinicalNote(std::string raw_text);

  const std::string& raw_text() const { return raw_text_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::string raw_text_;
  std::vector<std::string> tokens_;
};

struct ScanImage {
  std::vector<double> pixels = std::vector<double>(kImageSize * kImageSize, 0.0);  // row-major

  double at(int row, int col) const { return pixels[row * kImageSize + col]; }
  double& at(int row, int col) { return pixels[row * kImageSize + col]; }
};

/// Bit i set => modality i present.
struct ModalityMask {
  std::array<bool, kNumModalities> present{true, true, true};

  bool has(Modality m) const { return present[static_cast<int>(m)]; }
  int count() const;
  bool all() const { return count() == kNumModalities; }
};

struct PatientRecord {
  std::string card_id;
  IndicatorVector indicators;
  ClinicalNote note;
  ScanImage image;
  std::optional<DiagnosisLabel> label;
  ModalityMask mask;
};

enum class SplitRole { Train, Val };

struct CohortDataset {
  std::vector<PatientRecord> records;
  std::map<std::string, SplitRole> split;
  std::string provenance;  // JSON text: generator config or source paths
  std::size_t dropped = 0;  // rows discarded on load for a missing modality

  const PatientRecord& find(const std::string& card_id) const;
  std::optional<std::size_t> index_of(const std::string& card_id) const;
  std::vector<int> labels() const;  // requires every record labeled
};

struct SyntheticConfig {
  std::uint64_t seed = 42;
  std::size_t n_patients = 626;
  std::array<double, kNumClasses> class_priors{1.0 / 3, 1.0 / 3, 1.0 / 3};
  double noise_level = 0.2;
  double complementarity = 0.3;

  void validate() const;
  std::string to_json() const;
};

/// Axis-aligned pixel box, inclusive bounds.
struct PixelBox {
  int row0 = 0, col0 = 0, row1 = -1, col1 = -1;
  bool empty() const { return row1 < row0 || col1 < col0; }
  PixelBox dilated(double factor) const;  // about the centre, clipped to the image
  bool contains(int row, int col) const {
    return row >= row0 && row <= row1 && col >= col0 && col <= col1;
  }
};

/// Fixed geometry of the synthetic scans.
namespace scan_layout {
inline constexpr int kBoundaryCol = 44;  // vertical line a herniation crosses
inline constexpr int kDiscCol0 = 14;
inline constexpr int kDiscCol1 = 38;
inline constexpr std::array<int, 4> kDiscRows{12, 25, 38, 51};
}  // namespace scan_layout

/// Renders one synthetic scan. `signal_class` picks the lesion; `disc` selects the
/// disc level (0..3) that carries it. Returns the lesion box (empty for Normal).
/// Pixels are quantized to k/255 so an 8-bit PNG round-trip is lossless.
PixelBox render_scan(ScanImage& out, DiagnosisLabel signal_class, int disc, double noise_level,
                     std::mt19937_64& rng);

CohortDataset generate_synthetic_cohort(const SyntheticConfig& config);

/// Planted vocabulary per class, in class-code order.
const std::array<std::vector<std::string>, kNumClasses>& class_keywords();

struct CohortPaths {
  std::string indicators_csv;
  std::string notes_jsonl;
  std::string images_dir;
};

CohortDataset load_cohort(const CohortPaths& paths);
void save_cohort(const CohortDataset& dataset, const CohortPaths& paths);

struct SplitResult {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Stratified random split; per class, round(ratio * count) go to train.
SplitResult split_dataset(const CohortDataset& dataset, double ratio, std::uint64_t seed);
SplitResult split_labels(const std::vector<int>& labels, double ratio, std::uint64_t seed);
void apply_split(CohortDataset& dataset, const SplitResult& split);
SplitResult current_split(const CohortDataset& dataset);

std::vector<SplitResult> kfold(const std::vector<int>& labels, int k, std::uint64_t seed);
std::vector<SplitResult> kfold(const CohortDataset& dataset, int k, std::uint64_t seed);

CohortDataset subset(const CohortDataset& dataset, const std::vector<std::size_t>& indices);

struct CohortSummary {
  std::size_t n = 0;
  std::array<std::size_t, kNumClasses> class_counts{};
  std::size_t unlabeled = 0;
  double age_min = 0, age_max = 0, age_mean = 0;
  std::size_t male = 0, female = 0;
  double gender_ratio = 0;  // male / female
  std::array<std::size_t, kNumModalities> available{};
  std::size_t train_size = 0, val_size = 0;
  std::size_t dropped = 0;
};

CohortSummary cohort_summary(const CohortDataset& dataset);

}  // namespace diag
