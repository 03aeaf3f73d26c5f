#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "diag/cohort.hpp"

namespace diag {
namespace {

std::array<std::vector<std::size_t>, kNumClasses> shuffled_by_class(const std::vector<int>& labels,
                                                                    std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(labels[i]).push_back(i);
  std::mt19937_64 rng(seed);
  for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);
  return by_class;
}

}  // namespace

SplitResult split_dataset(const CohortDataset& dataset, double ratio, std::uint64_t seed) {
  return split_labels(dataset.labels(), ratio, seed);
}

SplitResult split_labels(const std::vector<int>& labels, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must lie in (0, 1)");
  auto by_class = shuffled_by_class(labels, seed);
  SplitResult out;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < 2) {
      throw std::invalid_argument("class '" + std::string(label_name(label_from_code(c))) +
                                  "' has fewer than 2 members; cannot stratify");
    }
    auto n_train = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(members.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

void apply_split(CohortDataset& dataset, const SplitResult& split) {
  dataset.split.clear();
  for (auto i : split.train) dataset.split[dataset.records.at(i).card_id] = SplitRole::Train;
  for (auto i : split.val) {
    if (!dataset.split.emplace(dataset.records.at(i).card_id, SplitRole::Val).second) {
      throw std::invalid_argument("split assigns a record to both train and val");
    }
  }
  if (dataset.split.size() != dataset.records.size()) throw std::invalid_argument("split must cover every record");
}

SplitResult current_split(const CohortDataset& dataset) {
  SplitResult out;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto it = dataset.split.find(dataset.records[i].card_id);
    if (it == dataset.split.end()) throw std::invalid_argument("dataset has no split for " + dataset.records[i].card_id);
    (it->second == SplitRole::Train ? out.train : out.val).push_back(i);
  }
  return out;
}

std::vector<SplitResult> kfold(const std::vector<int>& labels, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold requires k >= 2");
  if (static_cast<std::size_t>(k) > labels.size()) throw std::invalid_argument("kfold: k exceeds dataset size");
  const auto by_class = shuffled_by_class(labels, seed);
  for (int c = 0; c < kNumClasses; ++c) {
    if (!by_class[c].empty() && by_class[c].size() < static_cast<std::size_t>(k)) {
      throw std::invalid_argument("kfold: class '" + std::string(label_name(label_from_code(c))) +
                                  "' has fewer than k members");
    }
  }
  std::vector<int> fold_of(labels.size(), 0);
  std::size_t dealt = 0;  // continues across classes so fold sizes differ by at most one
  for (const auto& members : by_class) {
    for (auto i : members) fold_of[i] = static_cast<int>(dealt++ % static_cast<std::size_t>(k));
  }
  std::vector<SplitResult> folds(k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (int f = 0; f < k; ++f) (fold_of[i] == f ? folds[f].val : folds[f].train).push_back(i);
  }
  return folds;
}

std::vector<SplitResult> kfold(const CohortDataset& dataset, int k, std::uint64_t seed) {
  return kfold(dataset.labels(), k, seed);
}

CohortDataset subset(const CohortDataset& dataset, const std::vector<std::size_t>& indices) {
  CohortDataset out;
  out.provenance = dataset.provenance;
  out.records.reserve(indices.size());
  for (auto i : indices) {
    out.records.push_back(dataset.records.at(i));
    const auto it = dataset.split.find(dataset.records[i].card_id);
    if (it != dataset.split.end()) out.split.insert(*it);
  }
  return out;
}

CohortSummary cohort_summary(const CohortDataset& dataset) {
  if (dataset.records.empty()) throw std::invalid_argument("cohort_summary: empty dataset");
  CohortSummary s;
  s.n = dataset.records.size();
  s.dropped = dataset.dropped;
  s.age_min = std::numeric_limits<double>::infinity();
  s.age_max = -std::numeric_limits<double>::infinity();
  double age_sum = 0.0;
  for (const auto& r : dataset.records) {
    if (r.label) {
      ++s.class_counts[code(*r.label)];
    } else {
      ++s.unlabeled;
    }
    const double age = r.indicators.age();
    s.age_min = std::min(s.age_min, age);
    s.age_max = std::max(s.age_max, age);
    age_sum += age;
    (r.indicators.gender == Gender::Male ? s.male : s.female) += 1;
    for (int m = 0; m < kNumModalities; ++m) s.available[m] += r.mask.present[m] ? 1 : 0;
    const auto it = dataset.split.find(r.card_id);
    if (it != dataset.split.end()) (it->second == SplitRole::Train ? s.train_size : s.val_size) += 1;
  }
  s.age_mean = age_sum / static_cast<double>(s.n);
  s.gender_ratio = s.female == 0 ? std::numeric_limits<double>::infinity()
                                 : static_cast<double>(s.male) / static_cast<double>(s.female);
  return s;
}

}  // namespace diag
