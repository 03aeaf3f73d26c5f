#include "diag/image_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace diag {
namespace {

// 3x3 convolution with zero padding 1. in: cin x s x s, out: cout x s x s.
void conv3x3_forward(std::span<const double> in, int cin, int s, std::span<const double> w,
                     std::span<const double> b, int cout, std::span<double> out) {
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  for (int o = 0; o < cout; ++o) {
    double* dst = out.data() + o * plane;
    std::fill(dst, dst + plane, b[o]);
    for (int i = 0; i < cin; ++i) {
      const double* src = in.data() + i * plane;
      const double* k = w.data() + (static_cast<std::size_t>(o) * cin + i) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = k[ky * 3 + kx];
          const int x0 = std::max(0, 1 - kx), x1 = std::min(s, s + 1 - kx);
          for (int y = 0; y < s; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= s) continue;
            double* drow = dst + static_cast<std::size_t>(y) * s;
            const double* srow = src + static_cast<std::size_t>(sy) * s + (kx - 1);
            for (int x = x0; x < x1; ++x) drow[x] += wv * srow[x];
          }
        }
      }
    }
  }
}

// Accumulates weight/bias gradients and (optionally) writes the input gradient.
void conv3x3_backward(std::span<const double> in, int cin, int s, std::span<const double> w, int cout,
                      std::span<const double> dout, double* dw, double* db, double* din) {
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  if (din) std::fill(din, din + plane * cin, 0.0);
  for (int o = 0; o < cout; ++o) {
    const double* g = dout.data() + o * plane;
    if (db) {
      double acc = 0.0;
      for (std::size_t p = 0; p < plane; ++p) acc += g[p];
      db[o] += acc;
    }
    for (int i = 0; i < cin; ++i) {
      const double* src = in.data() + i * plane;
      const std::size_t kidx = (static_cast<std::size_t>(o) * cin + i) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = w[kidx + ky * 3 + kx];
          const int x0 = std::max(0, 1 - kx), x1 = std::min(s, s + 1 - kx);
          double acc = 0.0;
          for (int y = 0; y < s; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= s) continue;
            const double* grow = g + static_cast<std::size_t>(y) * s;
            const double* srow = src + static_cast<std::size_t>(sy) * s + (kx - 1);
            for (int x = x0; x < x1; ++x) acc += grow[x] * srow[x];
            if (din) {
              double* drow = din + i * plane + static_cast<std::size_t>(sy) * s + (kx - 1);
              for (int x = x0; x < x1; ++x) drow[x] += wv * grow[x];
            }
          }
          if (dw) dw[kidx + ky * 3 + kx] += acc;
        }
      }
    }
  }
}

void maxpool2_forward(std::span<const double> in, int c, int s, std::span<double> out, std::span<int> arg) {
  const int h = s / 2;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < h; ++x) {
        int best = ch * s * s + (2 * y) * s + 2 * x;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = ch * s * s + (2 * y + dy) * s + 2 * x + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const int o = ch * h * h + y * h + x;
        out[o] = in[best];
        arg[o] = best;
      }
    }
  }
}

void relu(std::span<const double> in, std::span<double> out) {
  for (std::size_t k = 0; k < in.size(); ++k) out[k] = in[k] > 0.0 ? in[k] : 0.0;
}

// Gradient through ReLU. Guided mode additionally zeroes negative incoming gradients.
void relu_backward(std::span<const double> pre, std::span<double> grad, ImageModel::ReluBackward mode) {
  for (std::size_t k = 0; k < pre.size(); ++k) {
    if (pre[k] <= 0.0 || (mode == ImageModel::ReluBackward::Guided && grad[k] < 0.0)) grad[k] = 0.0;
  }
}

}  // namespace

ImageModel::Layout ImageModel::layout() const {
  const auto c1 = static_cast<std::size_t>(arch_.conv1), c2 = static_cast<std::size_t>(arch_.conv2);
  const auto h = static_cast<std::size_t>(arch_.hidden);
  Layout l{};
  l.conv1_w = 0;
  l.conv1_b = l.conv1_w + c1 * 9;
  l.conv2_w = l.conv1_b + c1;
  l.conv2_b = l.conv2_w + c2 * c1 * 9;
  l.dense_w = l.conv2_b + c2;
  l.dense_b = l.dense_w + h * arch_.flat_size();
  l.out_w = l.dense_b + h;
  l.out_b = l.out_w + kNumClasses * h;
  l.total = l.out_b + kNumClasses;
  return l;
}

ImageModel::ImageModel(const ImageArch& arch, std::uint64_t seed) : arch_(arch) {
  if (arch.input_size < 4 || arch.input_size % 4 != 0 || arch.conv1 < 1 || arch.conv2 < 1 || arch.hidden < 1) {
    throw std::invalid_argument("image model: invalid architecture");
  }
  const auto l = layout();
  params_.assign(l.total, 0.0);
  std::mt19937_64 rng(seed);
  auto he = [&](std::size_t begin, std::size_t end, double fan_in) {
    std::normal_distribution<double> n(0.0, std::sqrt(2.0 / fan_in));
    for (std::size_t k = begin; k < end; ++k) params_[k] = n(rng);
  };
  he(l.conv1_w, l.conv1_b, 9.0);
  he(l.conv2_w, l.conv2_b, 9.0 * arch.conv1);
  he(l.dense_w, l.dense_b, static_cast<double>(arch.flat_size()));
  he(l.out_w, l.out_b, static_cast<double>(arch.hidden));
}

ImageModel::Activations ImageModel::forward(std::span<const double> pixels) const {
  const int s = arch_.input_size, s2 = arch_.pooled1(), s4 = arch_.pooled2();
  if (pixels.size() != static_cast<std::size_t>(s) * s) {
    throw std::invalid_argument("image model: expected " + std::to_string(s) + "x" + std::to_string(s) + " input");
  }
  if (params_.empty()) throw std::logic_error("image model has no parameters");
  const auto l = layout();
  const std::span<const double> p(params_);
  const int c1 = arch_.conv1, c2 = arch_.conv2, h = arch_.hidden;

  Activations a;
  a.input.assign(pixels.begin(), pixels.end());
  a.conv1_pre.resize(static_cast<std::size_t>(c1) * s * s);
  a.conv1.resize(a.conv1_pre.size());
  conv3x3_forward(a.input, 1, s, p.subspan(l.conv1_w, c1 * 9), p.subspan(l.conv1_b, c1), c1, a.conv1_pre);
  relu(a.conv1_pre, a.conv1);
  a.pool1.resize(static_cast<std::size_t>(c1) * s2 * s2);
  a.pool1_arg.resize(a.pool1.size());
  maxpool2_forward(a.conv1, c1, s, a.pool1, a.pool1_arg);

  a.conv2_pre.resize(static_cast<std::size_t>(c2) * s2 * s2);
  a.conv2.resize(a.conv2_pre.size());
  conv3x3_forward(a.pool1, c1, s2, p.subspan(l.conv2_w, static_cast<std::size_t>(c2) * c1 * 9),
                  p.subspan(l.conv2_b, c2), c2, a.conv2_pre);
  relu(a.conv2_pre, a.conv2);
  a.pool2.resize(static_cast<std::size_t>(c2) * s4 * s4);
  a.pool2_arg.resize(a.pool2.size());
  maxpool2_forward(a.conv2, c2, s2, a.pool2, a.pool2_arg);

  const std::size_t flat = arch_.flat_size();
  a.hidden_pre.resize(h);
  a.hidden.resize(h);
  for (int j = 0; j < h; ++j) {
    const double* wrow = params_.data() + l.dense_w + static_cast<std::size_t>(j) * flat;
    double acc = params_[l.dense_b + j];
    for (std::size_t k = 0; k < flat; ++k) acc += wrow[k] * a.pool2[k];
    a.hidden_pre[j] = acc;
  }
  relu(a.hidden_pre, a.hidden);
  for (int c = 0; c < kNumClasses; ++c) {
    const double* wrow = params_.data() + l.out_w + static_cast<std::size_t>(c) * h;
    double acc = params_[l.out_b + c];
    for (int j = 0; j < h; ++j) acc += wrow[j] * a.hidden[j];
    a.logits[c] = acc;
  }
  return a;
}

void ImageModel::backward(const Activations& a, std::span<const double> dlogits, ReluBackward mode,
                          const BackwardTargets& out) const {
  const int s = arch_.input_size, s2 = arch_.pooled1();
  const int c1 = arch_.conv1, c2 = arch_.conv2, h = arch_.hidden;
  const std::size_t flat = arch_.flat_size();
  const auto l = layout();
  double* g = out.params ? out.params->data() : nullptr;
  if (out.params && out.params->size() != params_.size()) throw std::invalid_argument("image model: bad grad buffer");

  std::vector<double> d_hidden(h, 0.0);
  for (int c = 0; c < kNumClasses; ++c) {
    const double dz = dlogits[c];
    const double* wrow = params_.data() + l.out_w + static_cast<std::size_t>(c) * h;
    if (g) {
      g[l.out_b + c] += dz;
      double* grow = g + l.out_w + static_cast<std::size_t>(c) * h;
      for (int j = 0; j < h; ++j) grow[j] += dz * a.hidden[j];
    }
    for (int j = 0; j < h; ++j) d_hidden[j] += dz * wrow[j];
  }
  relu_backward(a.hidden_pre, d_hidden, mode);

  std::vector<double> d_pool2(flat, 0.0);
  for (int j = 0; j < h; ++j) {
    const double dj = d_hidden[j];
    if (dj == 0.0) continue;
    const double* wrow = params_.data() + l.dense_w + static_cast<std::size_t>(j) * flat;
    if (g) {
      g[l.dense_b + j] += dj;
      double* grow = g + l.dense_w + static_cast<std::size_t>(j) * flat;
      for (std::size_t k = 0; k < flat; ++k) grow[k] += dj * a.pool2[k];
    }
    for (std::size_t k = 0; k < flat; ++k) d_pool2[k] += dj * wrow[k];
  }

  std::vector<double> d_conv2(a.conv2.size(), 0.0);
  for (std::size_t k = 0; k < flat; ++k) d_conv2[a.pool2_arg[k]] += d_pool2[k];
  if (out.conv2) *out.conv2 = d_conv2;
  if (!g && !out.input) return;

  relu_backward(a.conv2_pre, d_conv2, mode);
  std::vector<double> d_pool1(a.pool1.size(), 0.0);
  const std::span<const double> p(params_);
  conv3x3_backward(a.pool1, c1, s2, p.subspan(l.conv2_w, static_cast<std::size_t>(c2) * c1 * 9), c2, d_conv2,
                   g ? g + l.conv2_w : nullptr, g ? g + l.conv2_b : nullptr, d_pool1.data());

  std::vector<double> d_conv1(a.conv1.size(), 0.0);
  for (std::size_t k = 0; k < d_pool1.size(); ++k) d_conv1[a.pool1_arg[k]] += d_pool1[k];
  relu_backward(a.conv1_pre, d_conv1, mode);
  std::vector<double> d_input;
  if (out.input) d_input.assign(static_cast<std::size_t>(s) * s, 0.0);
  conv3x3_backward(a.input, 1, s, p.subspan(l.conv1_w, c1 * 9), c1, d_conv1, g ? g + l.conv1_w : nullptr,
                   g ? g + l.conv1_b : nullptr, out.input ? d_input.data() : nullptr);
  if (out.input) *out.input = std::move(d_input);
}

double ImageModel::loss(const std::vector<std::vector<double>>& images, std::span<const std::size_t> idx,
                        std::span<const int> labels, std::span<double> grad) const {
  if (idx.empty()) throw std::invalid_argument("image model: empty batch");
  const double inv_n = 1.0 / static_cast<double>(idx.size());
  std::vector<double> scratch;
  if (!grad.empty()) scratch.assign(params_.size(), 0.0);
  double total = 0.0;
  for (auto i : idx) {
    const auto a = forward(images.at(i));
    const double mx = *std::max_element(a.logits.begin(), a.logits.end());
    double z = 0.0;
    std::array<double, kNumClasses> prob{};
    for (int c = 0; c < kNumClasses; ++c) z += prob[c] = std::exp(a.logits[c] - mx);
    const int y = labels[i];
    total += std::log(z) + mx - a.logits[y];
    if (grad.empty()) continue;
    std::array<double, kNumClasses> dz{};
    for (int c = 0; c < kNumClasses; ++c) dz[c] = (prob[c] / z - (c == y ? 1.0 : 0.0)) * inv_n;
    backward(a, dz, ReluBackward::Standard, {.params = &scratch});
  }
  if (!grad.empty()) {
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += scratch[k];
  }
  return total * inv_n;
}

ClassDistribution ImageModel::predict_proba(std::span<const double> pixels) const {
  const auto a = forward(pixels);
  return ClassDistribution::softmax(a.logits);
}

ClassDistribution ImageModel::predict_proba(const ScanImage& image) const { return predict_proba(image.pixels); }

std::vector<double> ImageModel::penultimate(std::span<const double> pixels) const { return forward(pixels).hidden; }

std::vector<std::vector<double>> image_pixels(const CohortDataset& dataset) {
  std::vector<std::vector<double>> out;
  out.reserve(dataset.records.size());
  for (const auto& r : dataset.records) out.push_back(r.image.pixels);
  return out;
}

ImageModel ImageModel::train(const CohortDataset& train, const ImageParams& params) {
  const auto labels = train.labels();
  return ImageModel::train(image_pixels(train), labels, params);
}

ImageModel ImageModel::train(const std::vector<std::vector<double>>& images, std::span<const int> labels,
                             const ImageParams& params) {
  if (images.size() != labels.size() || images.empty()) throw std::invalid_argument("image model: no training images");
  const std::size_t expected = static_cast<std::size_t>(params.arch.input_size) * params.arch.input_size;
  for (const auto& img : images) {
    if (img.size() != expected) throw std::invalid_argument("image model: image does not match input size");
    for (double v : img) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("image model: pixel outside [0,1]");
    }
  }
  ImageModel m(params.arch, params.sgd.seed);
  std::array<double, kNumClasses> counts{};
  for (int y : labels) counts.at(y) += 1.0;
  const auto l = m.layout();
  for (int c = 0; c < kNumClasses; ++c) {
    m.params_[l.out_b + c] = std::log(std::max(counts[c], 1e-9) / static_cast<double>(labels.size()));
  }

  const std::vector<int> label_vec(labels.begin(), labels.end());
  auto [fit, holdout] = holdout_split(label_vec, params.sgd);
  ImageModel scratch = m;
  const LossGradFn loss_grad = [&](std::span<const std::size_t> idx, std::span<double> grad) {
    return scratch.loss(images, idx, label_vec, grad);
  };
  const LossFn eval_loss = [&](std::span<const std::size_t> idx) { return scratch.loss(images, idx, label_vec, {}); };
  // The optimizer updates scratch's parameters in place; loss_grad reads them back.
  m.report_ = run_sgd(scratch.params_, fit, holdout, loss_grad, eval_loss, params.sgd);
  m.params_ = std::move(scratch.params_);
  m.trained_ = true;
  return m;
}

void ImageModel::save(ByteWriter& w) const {
  w.i64(arch_.input_size);
  w.i64(arch_.conv1);
  w.i64(arch_.conv2);
  w.i64(arch_.hidden);
  w.u64(trained_ ? 1 : 0);
  w.f64s(params_);
}

ImageModel ImageModel::load(ByteReader& r) {
  ImageModel m;
  m.arch_.input_size = static_cast<int>(r.i64());
  m.arch_.conv1 = static_cast<int>(r.i64());
  m.arch_.conv2 = static_cast<int>(r.i64());
  m.arch_.hidden = static_cast<int>(r.i64());
  m.trained_ = r.u64() != 0;
  m.params_ = r.f64s();
  if (m.arch_.input_size < 4 || m.arch_.input_size % 4 != 0 || m.params_.size() != m.layout().total) {
    throw std::runtime_error("artifact: inconsistent image model");
  }
  return m;
}

}  // namespace diag
