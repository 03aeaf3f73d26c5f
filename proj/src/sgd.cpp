#include "diag/sgd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "diag/cohort.hpp"

namespace diag {
namespace {

// A mean cross-entropy this large means the logits have blown up. Stable log-sum-exp keeps
// such losses finite, so they count as divergence alongside NaN and infinity.
constexpr double kBlownUpLoss = 1e6;

bool diverged(double loss) { return !std::isfinite(loss) || loss > kBlownUpLoss; }

}  // namespace

TrainingReport run_sgd(std::vector<double>& params, std::vector<std::size_t> train_examples,
                       const std::vector<std::size_t>& holdout_examples, const LossGradFn& loss_grad,
                       const LossFn& loss, const SgdConfig& config) {
  if (config.batch_size < 1 || config.epochs < 1 || !(config.learning_rate > 0.0) || config.momentum < 0.0 ||
      config.momentum >= 1.0) {
    throw std::invalid_argument("sgd: invalid optimizer settings");
  }
  if (train_examples.empty()) throw std::invalid_argument("sgd: no training examples");

  std::mt19937_64 rng(config.seed);
  std::vector<double> velocity(params.size(), 0.0), grad(params.size(), 0.0);
  std::vector<double> best = params;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  TrainingReport report;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(train_examples.begin(), train_examples.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_examples.size(); start += config.batch_size) {
      const std::size_t len = std::min<std::size_t>(config.batch_size, train_examples.size() - start);
      std::span<const std::size_t> batch(train_examples.data() + start, len);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double l = loss_grad(batch, grad);
      if (diverged(l)) throw DivergenceError(epoch, epoch - 1);
      epoch_loss += l * static_cast<double>(len);
      for (std::size_t k = 0; k < params.size(); ++k) {
        velocity[k] = config.momentum * velocity[k] + grad[k];
        params[k] -= config.learning_rate * velocity[k];
      }
    }
    epoch_loss /= static_cast<double>(train_examples.size());
    if (diverged(epoch_loss) ||
        !std::all_of(params.begin(), params.end(), [](double v) { return std::isfinite(v); })) {
      throw DivergenceError(epoch, epoch - 1);
    }
    report.train_loss.push_back(epoch_loss);
    report.epochs_run = epoch + 1;

    if (!holdout_examples.empty()) {
      const double hl = loss(holdout_examples);
      if (diverged(hl)) throw DivergenceError(epoch, epoch - 1);
      report.holdout_loss.push_back(hl);
      if (hl < best_loss) {
        best_loss = hl;
        best = params;
        report.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        break;
      }
    }
  }
  if (!holdout_examples.empty()) {
    params = std::move(best);
  } else {
    report.best_epoch = report.epochs_run - 1;
  }
  return report;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(const std::vector<int>& labels,
                                                                            const SgdConfig& config) {
  std::vector<std::size_t> all(labels.size());
  std::iota(all.begin(), all.end(), 0);
  if (!(config.holdout > 0.0)) return {all, {}};
  std::array<std::size_t, kNumClasses> counts{};
  for (int y : labels) ++counts.at(y);
  for (auto c : counts) {
    if (c == 1 || (c > 0 && std::lround(config.holdout * static_cast<double>(c)) < 1)) return {all, {}};
  }
  auto split = split_labels(labels, 1.0 - config.holdout, config.seed ^ 0x9e3779b97f4a7c15ull);
  return {split.train, split.val};
}

}  // namespace diag
