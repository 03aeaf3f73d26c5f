#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"

#include "diag/cohort.hpp"
#include "diag/serialize.hpp"
#include "support.hpp"

using namespace diag;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) { return read_file(p.string()); }

std::string dir_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += fs::relative(f, dir).string() + "\n" + slurp(f);
  return fnv1a_hex(all);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << "\n";
}

}  // namespace

TEST_CASE("synthetic cohort is deterministic and saves byte-identically") {
  testing::TempDir a, b;
  save_cohort(testing::small_cohort(60, 11), a.cohort_paths());
  save_cohort(testing::small_cohort(60, 11), b.cohort_paths());
  CHECK(dir_digest(a.path()) == dir_digest(b.path()));

  testing::TempDir c;
  save_cohort(testing::small_cohort(60, 12), c.cohort_paths());
  CHECK(dir_digest(a.path()) != dir_digest(c.path()));
}

TEST_CASE("save and load round-trip a 10-record cohort") {
  auto full = testing::small_cohort(30, 5);
  std::vector<std::size_t> first10(10);
  std::iota(first10.begin(), first10.end(), 0);
  const auto ds = subset(full, first10);

  testing::TempDir dir;
  save_cohort(ds, dir.cohort_paths());
  const auto back = load_cohort(dir.cohort_paths());
  REQUIRE(back.records.size() == 10);
  CHECK(back.dropped == 0);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& x = ds.records[i];
    const auto& y = back.find(x.card_id);
    CHECK(y.label == x.label);
    CHECK(y.note.raw_text() == x.note.raw_text());
    CHECK(y.image.pixels == x.image.pixels);  // k/255 quantization survives 8-bit PNG
    CHECK(y.indicators.gender == x.indicators.gender);
    for (int k = 0; k < kNumTabularFeatures; ++k) {
      CHECK(y.indicators.features()[k] == doctest::Approx(x.indicators.features()[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("a record missing its image is dropped and counted") {
  auto full = testing::small_cohort(30, 5);
  std::vector<std::size_t> first10(10);
  std::iota(first10.begin(), first10.end(), 0);
  testing::TempDir dir;
  save_cohort(subset(full, first10), dir.cohort_paths());
  fs::remove(fs::path(dir.cohort_paths().images_dir) / (full.records[3].card_id + ".png"));

  const auto back = load_cohort(dir.cohort_paths());
  CHECK(back.records.size() == 9);
  CHECK(back.dropped == 1);
  CHECK_FALSE(back.index_of(full.records[3].card_id).has_value());
  CHECK(cohort_summary(back).dropped == 1);
}

TEST_CASE("malformed indicator rows are reported with file, line and row") {
  auto full = testing::small_cohort(30, 5);
  testing::TempDir dir;
  const auto paths = dir.cohort_paths();
  save_cohort(full, paths);
  auto lines = read_lines(paths.indicators_csv);

  SUBCASE("short row") {
    auto row = lines[4];
    std::vector<std::string> cells;
    std::stringstream ss(row);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    REQUIRE(cells.size() > 33);
    cells.resize(33);
    std::string joined;
    for (std::size_t i = 0; i < cells.size(); ++i) joined += (i ? "," : "") + cells[i];
    lines[4] = joined;
    write_lines(paths.indicators_csv, lines);
    try {
      load_cohort(paths);
      FAIL("expected an error");
    } catch (const std::runtime_error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("indicators.csv:5") != std::string::npos);
      CHECK(msg.find(cells[0]) != std::string::npos);
      CHECK(msg.find("33 columns") != std::string::npos);
    }
  }
  SUBCASE("duplicate card_id") {
    lines.push_back(lines[2]);
    write_lines(paths.indicators_csv, lines);
    CHECK_THROWS_WITH_AS(load_cohort(paths), doctest::Contains("duplicate card_id"), std::runtime_error);
  }
  SUBCASE("non-numeric cell") {
    auto& row = lines[2];
    const auto pos = row.find(',', row.find(',') + 1);
    row.insert(pos + 1, "x");
    write_lines(paths.indicators_csv, lines);
    CHECK_THROWS_WITH_AS(load_cohort(paths), doctest::Contains("indicators.csv:3"), std::runtime_error);
  }
}

TEST_CASE("default cohort shape") {
  const auto ds = generate_synthetic_cohort({});
  const auto s = cohort_summary(ds);
  CHECK(s.n == 626);
  CHECK(s.class_counts[0] + s.class_counts[1] + s.class_counts[2] == 626);
  for (auto c : s.class_counts) CHECK(c > 150);
  CHECK(s.age_min >= 21.0);
  CHECK(s.age_max <= 82.0);
  CHECK(s.gender_ratio == doctest::Approx(1.16).epsilon(0.15 / 1.16));
  CHECK(s.male == 336);
  for (auto a : s.available) CHECK(a == 626);

  std::set<std::string> ids;
  for (const auto& r : ds.records) ids.insert(r.card_id);
  CHECK(ids.size() == 626);
}

TEST_CASE("invalid generator configuration") {
  SyntheticConfig cfg;
  cfg.class_priors = {0.5, 0.5, 0.0};
  CHECK_THROWS_WITH_AS(generate_synthetic_cohort(cfg), doctest::Contains("degenerate prior"), std::invalid_argument);
  cfg = {};
  cfg.noise_level = 1.5;
  CHECK_THROWS_AS(generate_synthetic_cohort(cfg), std::invalid_argument);
  cfg = {};
  cfg.n_patients = 5;
  CHECK_THROWS_AS(generate_synthetic_cohort(cfg), std::invalid_argument);
}

TEST_CASE("stratified split sizes") {
  const auto ds = generate_synthetic_cohort({});
  const auto split = split_dataset(ds, 0.75, 1);
  // Per class round(0.75 * count), computed independently of the implementation.
  std::array<std::size_t, kNumClasses> counts{};
  for (int y : ds.labels()) ++counts[y];
  std::size_t expected = 0;
  for (auto c : counts) expected += static_cast<std::size_t>(std::lround(0.75 * static_cast<double>(c)));
  CHECK(split.train.size() == expected);
  CHECK(split.train.size() + split.val.size() == 626);
  CHECK((split.train.size() == 469 || split.train.size() == 470));

  std::set<std::size_t> all(split.train.begin(), split.train.end());
  for (auto i : split.val) CHECK(all.insert(i).second);
  CHECK(all.size() == 626);

  CHECK(split_dataset(ds, 0.75, 1).train == split.train);
  CHECK(split_dataset(ds, 0.75, 2).train != split.train);

  const auto four = split_labels({0, 0, 1, 1}, 0.5, 9);
  CHECK(four.train.size() == 2);
  CHECK(four.val.size() == 2);

  CHECK_THROWS_AS(split_labels({0, 0, 1}, 0.5, 0), std::invalid_argument);
  CHECK_THROWS_AS(split_labels({0, 0, 1, 1}, 1.0, 0), std::invalid_argument);
}

TEST_CASE("k-fold partitions") {
  std::vector<int> ten{0, 0, 0, 0, 1, 1, 1, 2, 2, 2};
  std::vector<int> balanced;
  for (int i = 0; i < 10; ++i) balanced.push_back(i % 2);
  const auto small = kfold(balanced, 5, 3);
  REQUIRE(small.size() == 5);
  std::vector<int> seen(balanced.size(), 0);
  for (const auto& f : small) {
    CHECK(f.val.size() == 2);
    CHECK(f.train.size() == 8);
    for (auto i : f.val) ++seen[i];
  }
  for (int s : seen) CHECK(s == 1);
  CHECK_THROWS_AS(kfold(ten, 5, 3), std::invalid_argument);  // a class with 3 members cannot cover 5 folds

  const auto ds = generate_synthetic_cohort({});
  const auto train = subset(ds, split_dataset(ds, 0.75, 1).train);
  const auto folds = kfold(train, 5, 0);
  for (const auto& f : folds) {
    CHECK(f.val.size() >= train.records.size() / 5);
    CHECK(f.val.size() <= train.records.size() / 5 + 1);
  }
}

TEST_CASE("single-record summary") {
  auto ds = testing::small_cohort(30, 8);
  const auto one = subset(ds, {0});
  const auto s = cohort_summary(one);
  CHECK(s.n == 1);
  CHECK(s.age_min == s.age_max);
  CHECK(s.age_mean == s.age_min);
  CHECK_THROWS_AS(cohort_summary(CohortDataset{}), std::invalid_argument);
}

TEST_CASE("noise-free indicators are separable by nearest centroid") {
  SyntheticConfig cfg;
  cfg.seed = 7;
  cfg.n_patients = 300;
  cfg.noise_level = 0.0;
  cfg.complementarity = 0.0;
  const auto ds = generate_synthetic_cohort(cfg);

  // Oracle: z-score every feature with global statistics, then nearest class centroid.
  const std::size_t n = ds.records.size();
  std::vector<std::array<double, kNumTabularFeatures>> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = ds.records[i].indicators.features();
  for (int k = 0; k < kNumTabularFeatures; ++k) {
    double mean = 0, var = 0;
    for (const auto& r : x) mean += r[k] / n;
    for (const auto& r : x) var += (r[k] - mean) * (r[k] - mean) / n;
    const double sd = var > 0 ? std::sqrt(var) : 1.0;
    for (auto& r : x) r[k] = (r[k] - mean) / sd;
  }
  const auto labels = ds.labels();
  std::array<std::array<double, kNumTabularFeatures>, kNumClasses> centroid{};
  std::array<double, kNumClasses> count{};
  for (std::size_t i = 0; i < n; ++i) {
    ++count[labels[i]];
    for (int k = 0; k < kNumTabularFeatures; ++k) centroid[labels[i]][k] += x[i][k];
  }
  for (int c = 0; c < kNumClasses; ++c) {
    for (auto& v : centroid[c]) v /= count[c];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < kNumClasses; ++c) {
      double d = 0;
      for (int k = 0; k < kNumTabularFeatures; ++k) d += (x[i][k] - centroid[c][k]) * (x[i][k] - centroid[c][k]);
      if (d < best_d) best_d = d, best = c;
    }
    correct += best == labels[i];
  }
  CHECK(correct == n);
}

TEST_CASE("noise-free notes carry only their class keywords") {
  const auto ds = testing::small_cohort(90, 4, 0.0, 0.0);
  const auto& kw = class_keywords();
  for (const auto& r : ds.records) {
    const int y = code(*r.label);
    std::set<std::string> toks(r.note.tokens().begin(), r.note.tokens().end());
    bool own = false;
    for (const auto& w : kw[y]) own |= toks.count(w) > 0;
    CHECK(own);
    for (int c = 0; c < kNumClasses; ++c) {
      if (c == y) continue;
      for (const auto& w : kw[c]) {
        // "slightly" and "became" are class words; neutral sentences never use keywords.
        CHECK_MESSAGE(toks.count(w) == 0, r.card_id << " has '" << w << "'");
      }
    }
  }
}

TEST_CASE("herniated lesions cross the boundary column, bulging ones stay inside") {
  std::mt19937_64 rng(21);
  for (int k = 0; k < 40; ++k) {
    ScanImage h, b, n;
    const auto hb = render_scan(h, DiagnosisLabel::Herniated, k % 4, 0.0, rng);
    const auto bb = render_scan(b, DiagnosisLabel::Bulging, k % 4, 0.0, rng);
    const auto nb = render_scan(n, DiagnosisLabel::Normal, k % 4, 0.0, rng);
    CHECK(hb.col1 > scan_layout::kBoundaryCol);
    CHECK(bb.col1 < scan_layout::kBoundaryCol);
    CHECK(nb.empty());
    for (double p : h.pixels) CHECK(std::abs(p * 255 - std::round(p * 255)) < 1e-9);
  }
  ScanImage img;
  CHECK_THROWS_AS(render_scan(img, DiagnosisLabel::Normal, 4, 0.0, rng), std::invalid_argument);
}

TEST_CASE("tokenizer and label parsing") {
  CHECK(tokenize("Disc C5-C6: bulging!") == std::vector<std::string>{"disc", "c5", "c6", "bulging"});
  CHECK(tokenize("  ").empty());
  CHECK(parse_label("herniated") == DiagnosisLabel::Herniated);
  CHECK(parse_label("2") == DiagnosisLabel::Bulging);
  CHECK_THROWS_AS(parse_label("slipped"), std::invalid_argument);
  CHECK_THROWS_AS(ClinicalNote("..."), std::invalid_argument);
  CHECK(tabular_feature_names().size() == kNumTabularFeatures);
}
