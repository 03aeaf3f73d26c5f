#pragma once

#include <array>
#include <span>
#include <vector>

#include "diag/cohort.hpp"
#include "diag/metrics.hpp"
#include "diag/serialize.hpp"
#include "diag/sgd.hpp"

namespace diag {

struct ImageArch {
  int input_size = kImageSize;  // square, divisible by 4
  int conv1 = 8;                // 3x3 filters, same padding
  int conv2 = 16;
  int hidden = 64;              // penultimate dense width

  int pooled1() const { return input_size / 2; }
  int pooled2() const { return input_size / 4; }
  std::size_t flat_size() const { return static_cast<std::size_t>(conv2) * pooled2() * pooled2(); }
};

struct ImageParams {
  ImageArch arch;
  SgdConfig sgd;
};

/// conv3x3(conv1) -> ReLU -> maxpool2 -> conv3x3(conv2) -> ReLU -> maxpool2 -> dense(hidden) -> ReLU -> dense(3).
class ImageModel {
 public:
  /// Per-layer activations from one forward pass.
  struct Activations {
    std::vector<double> input;
    std::vector<double> conv1_pre, conv1;  // conv1 x S x S
    std::vector<double> pool1;             // conv1 x S/2 x S/2
    std::vector<int> pool1_arg;
    std::vector<double> conv2_pre, conv2;  // conv2 x S/2 x S/2; conv2 = last conv feature maps
    std::vector<double> pool2;             // conv2 x S/4 x S/4
    std::vector<int> pool2_arg;
    std::vector<double> hidden_pre, hidden;  // penultimate
    std::array<double, kNumClasses> logits{};
  };

  enum class ReluBackward { Standard, Guided };

  /// Gradients requested from backward(); null members are skipped.
  struct BackwardTargets {
    std::vector<double>* params = nullptr;  // accumulated, same layout as parameters()
    std::vector<double>* conv2 = nullptr;   // d/d(last conv maps), overwritten
    std::vector<double>* input = nullptr;   // d/d(input), overwritten
  };

  ImageModel() = default;
  /// Randomly initialized (He normal) model.
  ImageModel(const ImageArch& arch, std::uint64_t seed);

  static ImageModel train(const CohortDataset& train, const ImageParams& params);
  static ImageModel train(const std::vector<std::vector<double>>& images, std::span<const int> labels,
                          const ImageParams& params);

  Activations forward(std::span<const double> pixels) const;
  void backward(const Activations& acts, std::span<const double> dlogits, ReluBackward mode,
                const BackwardTargets& out) const;

  ClassDistribution predict_proba(const ScanImage& image) const;
  ClassDistribution predict_proba(std::span<const double> pixels) const;
  std::vector<double> penultimate(std::span<const double> pixels) const;

  /// Mean cross-entropy over examples; adds mean gradients into `grad` when non-empty.
  double loss(const std::vector<std::vector<double>>& images, std::span<const std::size_t> idx,
              std::span<const int> labels, std::span<double> grad) const;

  const ImageArch& arch() const { return arch_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  const TrainingReport& report() const { return report_; }

  /// Offsets of each tensor inside parameters().
  struct Layout {
    std::size_t conv1_w, conv1_b, conv2_w, conv2_b, dense_w, dense_b, out_w, out_b, total;
  };
  Layout layout() const;

  void save(ByteWriter& w) const;
  static ImageModel load(ByteReader& r);

 private:
  ImageArch arch_;
  std::vector<double> params_;
  bool trained_ = false;
  TrainingReport report_;
};

std::vector<std::vector<double>> image_pixels(const CohortDataset& dataset);

}  // namespace diag
