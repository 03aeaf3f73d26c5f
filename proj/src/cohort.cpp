#include "diag/cohort.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace diag {

std::string_view label_name(DiagnosisLabel label) {
  switch (label) {
    case DiagnosisLabel::Normal: return "normal";
    case DiagnosisLabel::Herniated: return "herniated";
    case DiagnosisLabel::Bulging: return "bulging";
  }
  throw std::invalid_argument("unknown diagnosis label");
}

DiagnosisLabel label_from_code(int c) {
  if (c < 0 || c >= kNumClasses) throw std::invalid_argument("label code out of range: " + std::to_string(c));
  return static_cast<DiagnosisLabel>(c);
}

DiagnosisLabel parse_label(std::string_view text) {
  if (text.size() == 1 && text[0] >= '0' && text[0] <= '2') return label_from_code(text[0] - '0');
  for (int c = 0; c < kNumClasses; ++c) {
    if (label_name(static_cast<DiagnosisLabel>(c)) == text) return static_cast<DiagnosisLabel>(c);
  }
  throw std::invalid_argument("invalid diagnosis label '" + std::string(text) + "'");
}

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::Indicator: return "indicator";
    case Modality::Text: return "text";
    case Modality::Image: return "image";
  }
  throw std::invalid_argument("unknown modality");
}

Modality parse_modality(std::string_view text) {
  for (int m = 0; m < kNumModalities; ++m) {
    if (modality_name(static_cast<Modality>(m)) == text) return static_cast<Modality>(m);
  }
  throw std::invalid_argument("invalid modality '" + std::string(text) + "'");
}

std::array<double, kNumTabularFeatures> IndicatorVector::features() const {
  std::array<double, kNumTabularFeatures> f{};
  std::copy(values.begin(), values.end(), f.begin());
  f[kNumIndicators] = gender == Gender::Female ? 1.0 : 0.0;
  f[kNumIndicators + 1] = height_cm;
  f[kNumIndicators + 2] = weight_kg;
  return f;
}

const std::vector<std::string>& tabular_feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n{"Age", "Blood glucose"};
    for (int i = 0; i < kNumIndicators - 2; ++i) {
      std::ostringstream os;
      os << "ind_" << std::setw(2) << std::setfill('0') << i;
      n.push_back(os.str());
    }
    n.insert(n.end(), {"Gender", "Height", "Weight"});
    return n;
  }();
  return names;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      current.push_back(static_cast<char>(std::tolower(u)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

ClinicalNote::ClinicalNote(std::string raw_text) : raw_text_(std::move(raw_text)), tokens_(tokenize(raw_text_)) {
  if (tokens_.empty()) throw std::invalid_argument("clinical note has no tokens");
  if (tokens_.size() > kMaxTokens) throw std::invalid_argument("clinical note exceeds 512 tokens");
}

int ModalityMask::count() const { return static_cast<int>(std::count(present.begin(), present.end(), true)); }

const PatientRecord& CohortDataset::find(const std::string& card_id) const {
  auto idx = index_of(card_id);
  if (!idx) throw std::out_of_range("unknown card_id '" + card_id + "'");
  return records[*idx];
}

std::optional<std::size_t> CohortDataset::index_of(const std::string& card_id) const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].card_id == card_id) return i;
  }
  return std::nullopt;
}

std::vector<int> CohortDataset::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.label) throw std::invalid_argument("record '" + r.card_id + "' is unlabeled");
    out.push_back(code(*r.label));
  }
  return out;
}

void SyntheticConfig::validate() const {
  if (n_patients < 30) throw std::invalid_argument("n_patients must be >= 30 to stratify splits");
  double sum = 0.0;
  for (double p : class_priors) {
    if (!(p > 0.0) || !std::isfinite(p)) throw std::invalid_argument("degenerate prior: every class prior must be > 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("class priors must sum to 1");
  if (!(noise_level >= 0.0 && noise_level <= 1.0)) throw std::invalid_argument("noise_level must lie in [0,1]");
  if (!(complementarity >= 0.0 && complementarity <= 1.0)) {
    throw std::invalid_argument("complementarity must lie in [0,1]");
  }
}

std::string SyntheticConfig::to_json() const {
  nlohmann::json j{{"generator", "synthetic"},
                   {"seed", seed},
                   {"n_patients", n_patients},
                   {"class_priors", class_priors},
                   {"noise_level", noise_level},
                   {"complementarity", complementarity}};
  return j.dump();
}

PixelBox PixelBox::dilated(double factor) const {
  if (empty()) return *this;
  const double cr = 0.5 * (row0 + row1), cc = 0.5 * (col0 + col1);
  const double hr = 0.5 * (row1 - row0 + 1) * factor, hc = 0.5 * (col1 - col0 + 1) * factor;
  PixelBox b;
  b.row0 = std::max(0, static_cast<int>(std::floor(cr - hr + 0.5)));
  b.row1 = std::min(kImageSize - 1, static_cast<int>(std::ceil(cr + hr - 0.5)));
  b.col0 = std::max(0, static_cast<int>(std::floor(cc - hc + 0.5)));
  b.col1 = std::min(kImageSize - 1, static_cast<int>(std::ceil(cc + hc - 0.5)));
  return b;
}

}  // namespace diag
