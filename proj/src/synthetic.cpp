// Synthetic cohort generator.
//
// Class-conditional constants (class order: normal, herniated, bulging):
//   Age            mean 40 / 35 / 52 years, sd 2 + 30 * noise, clipped to [21, 82]
//   Blood glucose  mean 5.0 / 6.2 / 6.9 mmol/L, sd 0.15 + 1.5 * noise
//   ind_00..ind_05 shifted by a class pattern of +-1 lab units, sd 0.15 + 2.0 * noise
//   ind_06..ind_31 class-independent N(0, 1)
//   Gender         exact male:female split of 1.16:1, shuffled
//   Height/weight  gender-dependent, class-independent
// Text: two class sentences drawn from the signal class (each swapped for a uniformly
// random class with probability `noise`), two to four neutral sentences, and
// round(6 * noise) filler tokens.
// Image: see render_scan().
// Complementarity: a Bernoulli(complementarity) draw per patient picks one modality
// whose signal class is replaced by a uniformly random class.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "diag/cohort.hpp"

namespace diag {
namespace {

constexpr std::array<double, kNumClasses> kAgeMean{40.0, 35.0, 52.0};
constexpr std::array<double, kNumClasses> kGlucoseMean{5.0, 6.2, 6.9};
constexpr int kSignalLabs = 6;
constexpr std::array<std::array<double, kSignalLabs>, kNumClasses> kLabPattern{{
    {0.0, 0.0, 0.0, 0.0, 0.0, 0.0},
    {1.0, -1.0, 1.0, 0.0, 1.0, -1.0},
    {-1.0, 1.0, 1.0, -1.0, 0.0, 1.0},
}};
constexpr double kMaleShare = 1.16 / 2.16;

const std::array<std::vector<std::string>, kNumClasses> kClassSentences{{
    {"disc height and signal are normal.", "normal alignment of the cervical spine.",
     "no abnormal finding noted, canal appears normal.", "vertebral bodies are normal and unremarkable."},
    {"posterior disc protrusion became evident at this level.",
     "protrusion extends beyond the annulus and compresses the nerve root.",
     "symptoms became worse; protrusion of the nucleus noted.",
     "large protrusion with herniation into the canal."},
    {"the disc is slightly bulging without compression.", "mild diffuse bulging of the annulus.",
     "annulus appears slightly bulging at this level.", "broad bulging contour, canal slightly narrowed."},
}};

const std::vector<std::string> kNeutralSentences{
    "patient presents with neck pain and stiffness.",
    "mri of the cervical spine was performed.",
    "sagittal and axial images were reviewed.",
    "history of intermittent shoulder discomfort.",
    "reports numbness in the left hand at night.",
    "examination of the c4 c5 and c5 c6 levels.",
    "follow up recommended in six weeks.",
    "range of motion is limited on rotation.",
    "no history of trauma was reported.",
    "the spinal cord signal was assessed."};

const std::vector<std::string> kFillerTokens{"the",   "and",     "with",   "was",  "of",   "at",
                                             "level", "patient", "review", "scan", "note", "further",
                                             "right", "left",    "mild",   "image"};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

std::string make_card_id(std::size_t i, std::size_t n) {
  std::ostringstream os;
  const int width = std::max<int>(4, static_cast<int>(std::to_string(n).size()));
  os << 'P' << std::setw(width) << std::setfill('0') << (i + 1);
  return os.str();
}

std::vector<int> allocate_labels(const SyntheticConfig& cfg, std::mt19937_64& rng) {
  // Largest-remainder allocation keeps class counts exact for a given n.
  std::array<std::size_t, kNumClasses> counts{};
  std::array<double, kNumClasses> rem{};
  std::size_t total = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const double exact = cfg.class_priors[c] * static_cast<double>(cfg.n_patients);
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    rem[c] = exact - std::floor(exact);
    total += counts[c];
  }
  std::array<int, kNumClasses> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int i = 0; total < cfg.n_patients; ++i, ++total) ++counts[order[i % kNumClasses]];

  std::vector<int> labels;
  labels.reserve(cfg.n_patients);
  for (int c = 0; c < kNumClasses; ++c) labels.insert(labels.end(), counts[c], c);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

IndicatorVector make_indicators(int signal_class, Gender gender, double noise, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  IndicatorVector v;
  v.gender = gender;
  v.values[0] = std::clamp(kAgeMean[signal_class] + (2.0 + 30.0 * noise) * z(rng), 21.0, 82.0);
  v.values[1] = kGlucoseMean[signal_class] + (0.15 + 1.5 * noise) * z(rng);
  for (int j = 0; j < kSignalLabs; ++j) {
    v.values[2 + j] = kLabPattern[signal_class][j] + (0.15 + 2.0 * noise) * z(rng);
  }
  for (int j = 2 + kSignalLabs; j < kNumIndicators; ++j) v.values[j] = z(rng);
  const bool male = gender == Gender::Male;
  v.height_cm = (male ? 172.0 : 160.0) + 6.0 * z(rng);
  const double bmi = 23.0 + 2.5 * z(rng);
  v.weight_kg = bmi * (v.height_cm / 100.0) * (v.height_cm / 100.0);
  return v;
}

std::string make_note(int signal_class, double noise, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick_class(0, kNumClasses - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::string> sentences;
  for (int s = 0; s < 2; ++s) {
    int cls = signal_class;
    if (u(rng) < noise) cls = pick_class(rng);
    const auto& pool = kClassSentences[cls];
    sentences.push_back(pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]);
  }
  const int n_neutral = std::uniform_int_distribution<int>(2, 4)(rng);
  for (int s = 0; s < n_neutral; ++s) {
    sentences.push_back(
        kNeutralSentences[std::uniform_int_distribution<std::size_t>(0, kNeutralSentences.size() - 1)(rng)]);
  }
  std::shuffle(sentences.begin(), sentences.end(), rng);

  std::string text;
  for (const auto& s : sentences) {
    if (!text.empty()) text.push_back(' ');
    text += s;
  }
  const auto n_filler = static_cast<int>(std::lround(6.0 * noise));
  for (int f = 0; f < n_filler; ++f) {
    text.push_back(' ');
    text += kFillerTokens[std::uniform_int_distribution<std::size_t>(0, kFillerTokens.size() - 1)(rng)];
  }
  return text;
}

}  // namespace

const std::array<std::vector<std::string>, kNumClasses>& class_keywords() {
  static const std::array<std::vector<std::string>, kNumClasses> kw{{
      {"normal", "unremarkable", "alignment"},
      {"protrusion", "became", "herniation"},
      {"bulging", "slightly", "diffuse"},
  }};
  return kw;
}

PixelBox render_scan(ScanImage& out, DiagnosisLabel signal_class, int disc, double noise_level,
                     std::mt19937_64& rng) {
  using namespace scan_layout;
  if (disc < 0 || disc >= static_cast<int>(kDiscRows.size())) throw std::invalid_argument("disc level out of range");
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_int_distribution<int> jitter(-1, 1);

  auto& px = out.pixels;
  px.assign(kImageSize * kImageSize, 0.08);
  // Vertebral column and disc stripes.
  for (int r = 0; r < kImageSize; ++r) {
    for (int c = kDiscCol0; c <= kDiscCol1; ++c) out.at(r, c) = 0.25;
  }
  for (int row : kDiscRows) {
    for (int r = row - 1; r <= row + 1; ++r) {
      for (int c = kDiscCol0; c <= kDiscCol1; ++c) out.at(r, c) = 0.6;
    }
  }
  for (int r = 0; r < kImageSize; ++r) out.at(r, kBoundaryCol) = 0.45;

  PixelBox box;
  if (signal_class != DiagnosisLabel::Normal) {
    const int center_row = kDiscRows[disc] + jitter(rng);
    const bool herniated = signal_class == DiagnosisLabel::Herniated;
    const int col0 = kDiscCol1 - 2 + jitter(rng);
    const int col1 = herniated ? kBoundaryCol + 4 + std::uniform_int_distribution<int>(0, 4)(rng)
                               : kBoundaryCol - 5 + jitter(rng);
    const int half_h = herniated ? 3 : 2;
    const double cc = 0.5 * (col0 + col1), hc = 0.5 * (col1 - col0) + 0.5;
    const double intensity = 0.95 - 0.3 * noise_level * std::abs(z(rng));
    box = PixelBox{kImageSize, kImageSize, -1, -1};
    for (int r = center_row - half_h; r <= center_row + half_h; ++r) {
      for (int c = col0; c <= col1; ++c) {
        const double dr = (r - center_row) / (half_h + 0.5), dc = (c - cc) / hc;
        if (dr * dr + dc * dc > 1.0) continue;
        out.at(r, c) = intensity;
        box.row0 = std::min(box.row0, r);
        box.row1 = std::max(box.row1, r);
        box.col0 = std::min(box.col0, c);
        box.col1 = std::max(box.col1, c);
      }
    }
  }

  const double sigma = 0.02 + 0.25 * noise_level;
  for (double& v : px) v = std::round(clamp01(v + sigma * z(rng)) * 255.0) / 255.0;
  return box;
}

CohortDataset generate_synthetic_cohort(const SyntheticConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);

  const auto labels = allocate_labels(config, rng);
  std::vector<Gender> genders(config.n_patients, Gender::Female);
  const auto n_male = static_cast<std::size_t>(std::lround(kMaleShare * static_cast<double>(config.n_patients)));
  std::fill(genders.begin(), genders.begin() + static_cast<std::ptrdiff_t>(n_male), Gender::Male);
  std::shuffle(genders.begin(), genders.end(), rng);

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> pick_class(0, kNumClasses - 1);
  std::uniform_int_distribution<int> pick_modality(0, kNumModalities - 1);
  std::uniform_int_distribution<int> pick_disc(0, static_cast<int>(scan_layout::kDiscRows.size()) - 1);

  CohortDataset ds;
  ds.provenance = config.to_json();
  ds.records.reserve(config.n_patients);
  for (std::size_t i = 0; i < config.n_patients; ++i) {
    const int label = labels[i];
    std::array<int, kNumModalities> signal{label, label, label};
    if (u(rng) < config.complementarity) signal[pick_modality(rng)] = pick_class(rng);

    PatientRecord rec;
    rec.card_id = make_card_id(i, config.n_patients);
    rec.label = label_from_code(label);
    rec.indicators = make_indicators(signal[0], genders[i], config.noise_level, rng);
    rec.note = ClinicalNote(make_note(signal[1], config.noise_level, rng));
    render_scan(rec.image, label_from_code(signal[2]), pick_disc(rng), config.noise_level, rng);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace diag
