#include <random>

#include "doctest.h"

#include "diag/fusion.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace diag;

namespace {

ClassDistribution random_distribution(std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.7, 1.0);
  std::array<double, 3> p{g(rng) + 1e-12, g(rng) + 1e-12, g(rng) + 1e-12};
  const double s = p[0] + p[1] + p[2];
  for (auto& v : p) v /= s;
  p[2] = 1.0 - p[0] - p[1];
  if (p[2] < 0) p[2] = 0;
  return ClassDistribution(p);
}

ModalityWeights random_weights(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<double, 3> w{u(rng), u(rng), u(rng)};
  if (rng() % 5 == 0) w[rng() % 3] = 0.0;
  const double s = w[0] + w[1] + w[2];
  for (auto& v : w) v /= s;
  return ModalityWeights(w);
}

std::array<std::array<double, 3>, 3> raw(const ModalityPredictions& p) {
  return {p[0].values(), p[1].values(), p[2].values()};
}

}  // namespace

TEST_CASE("fuse matches a brute-force transcription on random inputs") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const ModalityPredictions p{random_distribution(rng), random_distribution(rng), random_distribution(rng)};
    const auto w = random_weights(rng);
    ModalityMask mask;
    if (trial % 3 == 1) mask.present[rng() % 3] = false;
    if (trial % 7 == 2) {
      mask.present = {false, false, false};
      mask.present[rng() % 3] = true;
    }
    const auto got = fuse(p, w, mask);
    const auto want = oracle::fuse(raw(p), w.w, mask.present);
    for (int c = 0; c < 3; ++c) {
      CHECK(std::abs(got.fused[c] - want.fused[c]) <= 1e-12);
      double share_sum = 0;
      for (int m = 0; m < 3; ++m) {
        CHECK(std::abs(got.contribution_share[m][c] - want.share[m][c]) <= 1e-12);
        share_sum += got.contribution_share[m][c];
      }
      if (got.fused[c] > 0) CHECK(std::abs(share_sum - 1.0) <= 1e-9);
    }
    CHECK(std::abs(got.fused[0] + got.fused[1] + got.fused[2] - 1.0) <= 1e-9);
  }
}

TEST_CASE("worked fusion example") {
  const ModalityPredictions p{ClassDistribution({0.6, 0.3, 0.1}), ClassDistribution({0.2, 0.7, 0.1}),
                              ClassDistribution({0.1, 0.2, 0.7})};
  const ModalityWeights w({0.5, 0.3, 0.2});
  const auto f = fuse(p, w);
  CHECK(f.fused[0] == doctest::Approx(0.38).epsilon(1e-12));
  CHECK(f.fused[1] == doctest::Approx(0.40).epsilon(1e-12));
  CHECK(f.fused[2] == doctest::Approx(0.22).epsilon(1e-12));
  CHECK(f.contribution_share[1][1] == doctest::Approx(0.525).epsilon(1e-12));
  CHECK(f.fused.argmax() == 1);

  ModalityMask no_image;
  no_image.present[2] = false;
  const auto g = fuse(p, w, no_image);
  CHECK(g.effective_weights[0] == doctest::Approx(0.625).epsilon(1e-12));
  CHECK(g.effective_weights[1] == doctest::Approx(0.375).epsilon(1e-12));
  CHECK(g.effective_weights[2] == 0.0);
  CHECK(g.fused[0] + g.fused[1] + g.fused[2] == doctest::Approx(1.0).epsilon(1e-12));
  for (int c = 0; c < 3; ++c) CHECK(g.contribution_share[2][c] == 0.0);

  ModalityMask none;
  none.present = {false, false, false};
  CHECK_THROWS_AS(fuse(p, w, none), std::invalid_argument);
}

TEST_CASE("masking and zeroing a weight give bitwise-identical results") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const ModalityPredictions p{random_distribution(rng), random_distribution(rng), random_distribution(rng)};
    const auto w = random_weights(rng);
    const int drop = static_cast<int>(rng() % 3);
    ModalityMask mask;
    mask.present[drop] = false;
    const auto masked = fuse(p, w, mask);

    // The zero-weight path: zero the weight, renormalize by hand, fuse with every modality present.
    auto zeroed = w.w;
    zeroed[drop] = 0.0;
    const double total = zeroed[0] + zeroed[1] + zeroed[2];
    if (total == 0.0) continue;
    for (auto& v : zeroed) v /= total;
    const auto direct = fuse(p, ModalityWeights(zeroed));
    for (int c = 0; c < 3; ++c) CHECK(masked.fused[c] == direct.fused[c]);
    for (int m = 0; m < 3; ++m) {
      for (int c = 0; c < 3; ++c) {
        if (m != drop) CHECK(masked.contribution_share[m][c] == direct.contribution_share[m][c]);
      }
    }
  }
}

TEST_CASE("fusion fixed points and simplex vertices") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto q = random_distribution(rng);
    const auto same = fuse({q, q, q}, ModalityWeights{});
    for (int c = 0; c < 3; ++c) CHECK(same.fused[c] == doctest::Approx(q[c]).epsilon(1e-12));

    const ModalityPredictions p{random_distribution(rng), random_distribution(rng), random_distribution(rng)};
    for (int m = 0; m < 3; ++m) {
      std::array<double, 3> e{};
      e[m] = 1.0;
      const auto f = fuse(p, ModalityWeights(e));
      CHECK(f.fused.argmax() == p[m].argmax());
      for (int c = 0; c < 3; ++c) CHECK(f.fused[c] == p[m][c]);
    }
  }
  CHECK_THROWS_AS(ModalityWeights({0.5, 0.6, -0.1}), std::invalid_argument);
  CHECK_THROWS_AS(ModalityWeights({0.5, 0.4, 0.0}), std::invalid_argument);
}

TEST_CASE("simplex projection") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0.0, 2.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::array<double, 3> v{z(rng), z(rng), z(rng)};
    const auto p = project_to_simplex(v);
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-12));
    for (double x : p) CHECK(x >= 0.0);
    // Oracle: the projection is the closest point among a fine grid of simplex points.
    const auto d2 = [&](const std::array<double, 3>& q) {
      return (q[0] - v[0]) * (q[0] - v[0]) + (q[1] - v[1]) * (q[1] - v[1]) + (q[2] - v[2]) * (q[2] - v[2]);
    };
    double best = 1e300;
    for (int a = 0; a <= 200; ++a) {
      for (int b = 0; a + b <= 200; ++b) best = std::min(best, d2({a / 200.0, b / 200.0, (200 - a - b) / 200.0}));
    }
    CHECK(d2(p) <= best + 1e-12);
  }
}

TEST_CASE("learned weights find a one-hot oracle modality") {
  std::mt19937_64 rng(5);
  std::vector<ModalityPredictions> preds;
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) {
    const int y = static_cast<int>(rng() % 3);
    std::array<double, 3> onehot{};
    onehot[y] = 1.0;
    preds.push_back({ClassDistribution{}, ClassDistribution(onehot), ClassDistribution{}});
    labels.push_back(y);
  }
  const auto r = learn_weights(preds, labels);
  CHECK(r.weights[1] >= 0.8);
  const auto grid = oracle::simplex_grid(preds, labels);
  CHECK(grid.w[1] == 1.0);
  CHECK(r.final_loss <= grid.loss + 1e-3);
  CHECK(r.final_loss <= r.initial_loss + 1e-9);
  CHECK(r.loss_trace.size() == 501);
  CHECK(r.final_loss == doctest::Approx(fusion_loss(preds, labels, r.weights)).epsilon(1e-12));
}

TEST_CASE("identical modality predictions keep the uniform initialization") {
  std::mt19937_64 rng(6);
  std::vector<ModalityPredictions> preds;
  std::vector<int> labels;
  for (int i = 0; i < 30; ++i) {
    const auto q = random_distribution(rng);
    preds.push_back({q, q, q});
    labels.push_back(static_cast<int>(rng() % 3));
  }
  const auto r = learn_weights(preds, labels);
  for (int m = 0; m < 3; ++m) CHECK(r.weights[m] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("weight learning never ends worse than it started and matches the grid oracle") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<ModalityPredictions> preds;
    std::vector<int> labels;
    for (int i = 0; i < 80; ++i) {
      const int y = static_cast<int>(rng() % 3);
      ModalityPredictions p{random_distribution(rng), random_distribution(rng), random_distribution(rng)};
      // Modality 0 leans toward the truth; the others are noise.
      auto v = p[0].values();
      v[y] += 1.0;
      for (auto& x : v) x /= 2.0;
      p[0] = ClassDistribution(v);
      preds.push_back(p);
      labels.push_back(y);
    }
    const auto r = learn_weights(preds, labels);
    CHECK(r.final_loss <= r.initial_loss + 1e-9);
    CHECK(r.final_loss <= oracle::simplex_grid(preds, labels).loss + 1e-3);
  }
}

TEST_CASE("weight learning input validation") {
  std::vector<ModalityPredictions> preds(5);
  std::vector<int> labels(5, 0);
  CHECK_THROWS_AS(learn_weights(preds, labels), std::invalid_argument);
  preds.resize(12);
  labels.resize(12, 0);
  std::array<double, 3> zero_on_truth{0.0, 0.5, 0.5};
  for (auto& p : preds) p = {ClassDistribution(zero_on_truth), ClassDistribution(zero_on_truth),
                             ClassDistribution(zero_on_truth)};
  CHECK_THROWS_AS(learn_weights(preds, labels), std::runtime_error);
}

TEST_CASE("feature-level baseline") {
  SUBCASE("separable embeddings") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> z(0.0, 0.3);
    Matrix x(90, 4);
    std::vector<int> y;
    for (std::size_t i = 0; i < 90; ++i) {
      const int c = static_cast<int>(i % 3);
      for (std::size_t k = 0; k < 4; ++k) x(i, k) = z(rng);
      x(i, c) += 3.0;
      y.push_back(c);
    }
    const auto clf = FeatureLevelClassifier::train(x, y);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < 90; ++i) {
      const auto p = clf.predict_proba(x.row(i));
      CHECK(std::abs(p[0] + p[1] + p[2] - 1.0) < 1e-9);
      correct += p.argmax() == y[i];
    }
    CHECK(correct == 90);
    CHECK(clf.input_dim() == 4);
    const std::vector<double> short_row(3, 0.0);
    CHECK_THROWS_AS(clf.predict_proba(short_row), std::invalid_argument);

    ByteWriter w;
    clf.save(w);
    ByteReader r(w.bytes());
    const auto back = FeatureLevelClassifier::load(r);
    for (std::size_t i = 0; i < 90; ++i) CHECK(back.predict_proba(x.row(i)).values() == clf.predict_proba(x.row(i)).values());
  }
  SUBCASE("zero embeddings give priors") {
    Matrix x(40, 5, 0.0);
    std::vector<int> y;
    for (int i = 0; i < 40; ++i) y.push_back(i < 20 ? 0 : (i < 30 ? 1 : 2));
    const auto clf = FeatureLevelClassifier::train(x, y);
    const auto p = clf.predict_proba(x.row(0));
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(p[1] == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(p[2] == doctest::Approx(0.25).epsilon(1e-9));
  }
  SUBCASE("shape errors") {
    Matrix x(10, 2, 1.0);
    std::vector<int> y(9, 0);
    CHECK_THROWS_AS(FeatureLevelClassifier::train(x, y), std::invalid_argument);
  }
}
