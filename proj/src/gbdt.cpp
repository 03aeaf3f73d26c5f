#include "diag/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace diag {
namespace {

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

using Presorted = std::vector<std::vector<std::size_t>>;

Presorted presort(const Matrix& x) {
  Presorted order(x.cols);
  for (std::size_t f = 0; f < x.cols; ++f) {
    auto& idx = order[f];
    idx.resize(x.rows);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
  }
  return order;
}

// Grows one tree level by level against residuals `grad` and curvature `hess`.
RegressionTree grow_tree(const Matrix& x, const Presorted& order, std::span<const double> grad,
                         std::span<const double> hess, const GbdtParams& params) {
  constexpr double kNewtonScale = (kNumClasses - 1.0) / kNumClasses;
  const std::size_t n = x.rows;
  RegressionTree tree;
  auto& nodes = tree.mutable_nodes();
  nodes.emplace_back();
  std::vector<int> node_of(n, 0);
  std::vector<int> frontier{0};

  for (int depth = 0; depth < params.max_depth && !frontier.empty(); ++depth) {
    std::vector<int> slot(nodes.size(), -1);
    for (std::size_t s = 0; s < frontier.size(); ++s) slot[frontier[s]] = static_cast<int>(s);

    std::vector<double> total_sum(frontier.size(), 0.0);
    std::vector<std::size_t> total_cnt(frontier.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const int s = slot[node_of[i]];
      if (s < 0) continue;
      total_sum[s] += grad[i];
      ++total_cnt[s];
    }

    std::vector<SplitCandidate> best(frontier.size());
    for (std::size_t f = 0; f < x.cols; ++f) {
      std::vector<double> left_sum(frontier.size(), 0.0);
      std::vector<std::size_t> left_cnt(frontier.size(), 0);
      std::vector<double> last_value(frontier.size(), 0.0);
      for (std::size_t i : order[f]) {
        const int s = slot[node_of[i]];
        if (s < 0) continue;
        const double v = x(i, f);
        if (left_cnt[s] >= static_cast<std::size_t>(params.min_samples_leaf) && v > last_value[s]) {
          const std::size_t right_cnt = total_cnt[s] - left_cnt[s];
          if (right_cnt >= static_cast<std::size_t>(params.min_samples_leaf)) {
            const double sl = left_sum[s], sr = total_sum[s] - sl;
            const double gain = sl * sl / static_cast<double>(left_cnt[s]) + sr * sr / static_cast<double>(right_cnt) -
                                total_sum[s] * total_sum[s] / static_cast<double>(total_cnt[s]);
            if (gain > best[s].gain + 1e-12) best[s] = {gain, static_cast<int>(f), 0.5 * (last_value[s] + v)};
          }
        }
        left_sum[s] += grad[i];
        ++left_cnt[s];
        last_value[s] = v;
      }
    }

    std::vector<int> next;
    for (std::size_t s = 0; s < frontier.size(); ++s) {
      if (best[s].feature < 0) continue;
      const int id = frontier[s];
      const int l = static_cast<int>(nodes.size());
      nodes.emplace_back();
      nodes.emplace_back();
      nodes[id].feature = best[s].feature;
      nodes[id].threshold = best[s].threshold;
      nodes[id].left = l;
      nodes[id].right = l + 1;
      next.push_back(l);
      next.push_back(l + 1);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto& node = nodes[node_of[i]];
      if (node.feature >= 0 && slot.size() > static_cast<std::size_t>(node_of[i]) && slot[node_of[i]] >= 0) {
        node_of[i] = x(i, node.feature) <= node.threshold ? node.left : node.right;
      }
    }
    frontier = std::move(next);
  }

  std::vector<double> g_sum(nodes.size(), 0.0), h_sum(nodes.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    g_sum[node_of[i]] += grad[i];
    h_sum[node_of[i]] += hess[i];
  }
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (nodes[k].feature >= 0) continue;
    nodes[k].value = h_sum[k] > 1e-12 ? kNewtonScale * g_sum[k] / h_sum[k] : 0.0;
  }
  return tree;
}

double mean_cross_entropy(const std::vector<std::array<double, kNumClasses>>& scores, std::span<const int> labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double v : s) z += std::exp(v - mx);
    total += std::log(z) + mx - s[labels[i]];
  }
  return total / static_cast<double>(scores.size());
}

}  // namespace

double RegressionTree::predict(std::span<const double> x) const {
  int k = 0;
  while (nodes_[k].feature >= 0) k = x[nodes_[k].feature] <= nodes_[k].threshold ? nodes_[k].left : nodes_[k].right;
  return nodes_[k].value;
}

void RegressionTree::save(ByteWriter& w) const {
  w.u64(nodes_.size());
  for (const auto& n : nodes_) {
    w.i64(n.feature);
    w.f64(n.threshold);
    w.i64(n.left);
    w.i64(n.right);
    w.f64(n.value);
  }
}

RegressionTree RegressionTree::load(ByteReader& r) {
  RegressionTree t;
  const auto count = r.u64();
  t.nodes_.resize(count);
  for (auto& n : t.nodes_) {
    n.feature = static_cast<int>(r.i64());
    n.threshold = r.f64();
    n.left = static_cast<int>(r.i64());
    n.right = static_cast<int>(r.i64());
    n.value = r.f64();
  }
  for (const auto& n : t.nodes_) {
    if (n.feature >= 0 && (n.left <= 0 || n.right <= 0 || n.left >= static_cast<int>(count) ||
                           n.right >= static_cast<int>(count))) {
      throw std::runtime_error("artifact: corrupt regression tree");
    }
  }
  if (t.nodes_.empty()) throw std::runtime_error("artifact: empty regression tree");
  return t;
}

GradientBoostedClassifier GradientBoostedClassifier::fit(const Matrix& x, std::span<const int> labels,
                                                         const GbdtParams& params) {
  if (x.rows != labels.size() || x.rows == 0) throw std::invalid_argument("gbdt: feature/label size mismatch");
  if (params.tree_count < 0 || params.max_depth < 1 || !(params.learning_rate > 0.0) || params.min_samples_leaf < 1) {
    throw std::invalid_argument("gbdt: invalid hyperparameters");
  }
  std::array<std::size_t, kNumClasses> counts{};
  for (int y : labels) ++counts.at(y);
  if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2) {
    throw std::invalid_argument("gbdt: training set must contain at least two classes");
  }

  GradientBoostedClassifier model;
  model.feature_count_ = x.cols;
  const double n = static_cast<double>(x.rows);
  for (int c = 0; c < kNumClasses; ++c) {
    model.init_[c] = std::log(counts[c] > 0 ? static_cast<double>(counts[c]) / n : 1e-9);
  }

  const auto order = presort(x);
  std::vector<std::array<double, kNumClasses>> scores(x.rows, model.init_);
  model.loss_trace_.push_back(mean_cross_entropy(scores, labels));

  std::vector<double> grad(x.rows), hess(x.rows);
  std::vector<std::array<double, kNumClasses>> probs(x.rows);
  std::vector<std::array<double, kNumClasses>> step(x.rows);
  for (int round = 0; round < params.tree_count; ++round) {
    for (std::size_t i = 0; i < x.rows; ++i) {
      const auto& s = scores[i];
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (int c = 0; c < kNumClasses; ++c) z += probs[i][c] = std::exp(s[c] - mx);
      for (auto& p : probs[i]) p /= z;
    }
    std::array<RegressionTree, kNumClasses> round_trees;
    for (int c = 0; c < kNumClasses; ++c) {
      for (std::size_t i = 0; i < x.rows; ++i) {
        const double p = probs[i][c];
        grad[i] = (labels[i] == c ? 1.0 : 0.0) - p;
        hess[i] = p * (1.0 - p);
      }
      round_trees[c] = grow_tree(x, order, grad, hess, params);
      for (std::size_t i = 0; i < x.rows; ++i) step[i][c] = round_trees[c].predict(x.row(i));
    }

    // Backtrack the shrinkage until the round does not increase training loss.
    const double prev = model.loss_trace_.back();
    double eta = params.learning_rate;
    double loss = prev;
    std::vector<std::array<double, kNumClasses>> trial(x.rows);
    bool accepted = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      for (std::size_t i = 0; i < x.rows; ++i) {
        for (int c = 0; c < kNumClasses; ++c) trial[i][c] = scores[i][c] + eta * step[i][c];
      }
      loss = mean_cross_entropy(trial, labels);
      if (loss <= prev) {
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    if (accepted) {
      scores.swap(trial);
    } else {
      eta = 0.0;
      loss = prev;
    }
    for (auto& t : round_trees) {
      for (auto& node : t.mutable_nodes()) node.value *= eta;
    }
    model.trees_.push_back(std::move(round_trees));
    model.loss_trace_.push_back(loss);
  }
  return model;
}

std::array<double, kNumClasses> GradientBoostedClassifier::raw_scores(std::span<const double> x) const {
  if (x.size() != feature_count_) {
    throw std::invalid_argument("gbdt: expected " + std::to_string(feature_count_) + " features, got " +
                                std::to_string(x.size()));
  }
  auto s = init_;
  for (const auto& round : trees_) {
    for (int c = 0; c < kNumClasses; ++c) s[c] += round[c].predict(x);
  }
  return s;
}

ClassDistribution GradientBoostedClassifier::predict(std::span<const double> x) const {
  const auto s = raw_scores(x);
  return ClassDistribution::softmax(s);
}

void GradientBoostedClassifier::save(ByteWriter& w) const {
  w.u64(feature_count_);
  w.f64s(init_);
  w.u64(trees_.size());
  for (const auto& round : trees_) {
    for (const auto& t : round) t.save(w);
  }
  w.f64s(loss_trace_);
}

GradientBoostedClassifier GradientBoostedClassifier::load(ByteReader& r) {
  GradientBoostedClassifier m;
  m.feature_count_ = r.u64();
  const auto init = r.f64s();
  if (init.size() != kNumClasses) throw std::runtime_error("artifact: bad gbdt init");
  std::copy(init.begin(), init.end(), m.init_.begin());
  const auto rounds = r.u64();
  m.trees_.resize(rounds);
  for (auto& round : m.trees_) {
    for (auto& t : round) {
      t = RegressionTree::load(r);
      for (const auto& node : t.nodes()) {
        if (node.feature >= static_cast<int>(m.feature_count_)) throw std::runtime_error("artifact: bad tree feature");
      }
    }
  }
  m.loss_trace_ = r.f64s();
  return m;
}

}  // namespace diag
