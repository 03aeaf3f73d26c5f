#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diag {

struct SgdConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  int batch_size = 16;
  int epochs = 200;
  int patience = 20;      // epochs without holdout improvement before stopping
  double holdout = 0.1;   // fraction of training data reserved for early stopping; 0 disables
  std::uint64_t seed = 0;
};

/// Thrown when the training loss stops being finite or exceeds 1e6 nats.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int epoch, int last_finite_epoch)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + " (last finite epoch " +
                           std::to_string(last_finite_epoch) + ")"),
        last_finite_epoch_(last_finite_epoch) {}
  int last_finite_epoch() const { return last_finite_epoch_; }

 private:
  int last_finite_epoch_;
};

struct TrainingReport {
  std::vector<double> train_loss;  // mean per epoch
  std::vector<double> holdout_loss;
  int best_epoch = -1;
  int epochs_run = 0;
};

/// Mean loss over `examples`; fills `grad` (same length as params) with the mean gradient.
using LossGradFn = std::function<double(std::span<const std::size_t> examples, std::span<double> grad)>;
using LossFn = std::function<double(std::span<const std::size_t> examples)>;

/// Mini-batch SGD with heavy-ball momentum (v = mu v + g; w -= lr v). When `holdout_examples`
/// is nonempty, keeps the parameters with the lowest holdout loss and stops after
/// `patience` epochs without improvement.
TrainingReport run_sgd(std::vector<double>& params, std::vector<std::size_t> train_examples,
                       const std::vector<std::size_t>& holdout_examples, const LossGradFn& loss_grad,
                       const LossFn& loss, const SgdConfig& config);

/// Splits labeled examples into (fit, holdout) per `config.holdout`. Holdout is empty when
/// disabled or when some class is too small to stratify.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(const std::vector<int>& labels,
                                                                            const SgdConfig& config);

}  // namespace diag
