#include "diag/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "diag/embed.hpp"
#include "diag/models.hpp"

namespace diag {

ModalityWeights::ModalityWeights(const std::array<double, kNumModalities>& weights) : w(weights) {
  double sum = 0.0;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("modality weights must be nonnegative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("modality weights must sum to 1");
}

std::array<double, kNumModalities> renormalized_weights(const ModalityWeights& weights, const ModalityMask& mask) {
  if (mask.count() == 0) throw std::invalid_argument("cannot fuse: every modality is masked");
  // Full masks keep the weights as given, so feeding renormalized weights back in is exact.
  if (mask.all()) return weights.w;
  double total = 0.0;
  for (int m = 0; m < kNumModalities; ++m) {
    if (mask.present[m]) total += weights[m];
  }
  std::array<double, kNumModalities> out{};
  for (int m = 0; m < kNumModalities; ++m) {
    if (mask.present[m]) out[m] = total > 0.0 ? weights[m] / total : 1.0 / mask.count();
  }
  return out;
}

FusedPrediction fuse(const ModalityPredictions& per_modality, const ModalityWeights& weights,
                     const ModalityMask& mask) {
  if (mask.count() == 0) throw std::invalid_argument("cannot fuse: every modality is masked");
  FusedPrediction out;
  out.per_modality = per_modality;
  out.present = mask;

  out.effective_weights = renormalized_weights(weights, mask);

  std::array<double, kNumClasses> fused{};
  for (int c = 0; c < kNumClasses; ++c) {
    double s = 0.0;
    for (int m = 0; m < kNumModalities; ++m) {
      if (mask.present[m]) s += out.effective_weights[m] * per_modality[m][c];
    }
    fused[c] = s;
  }
  out.fused = ClassDistribution(fused);
  for (int m = 0; m < kNumModalities; ++m) {
    if (!mask.present[m]) continue;
    for (int c = 0; c < kNumClasses; ++c) {
      out.contribution_share[m][c] = fused[c] > 0.0 ? out.effective_weights[m] * per_modality[m][c] / fused[c] : 0.0;
    }
  }
  return out;
}

namespace {

void check_inputs(std::span<const ModalityPredictions> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("predictions and labels differ in length");
  for (int y : labels) {
    if (y < 0 || y >= kNumClasses) throw std::invalid_argument("label out of range");
  }
}

/// Loss and gradient with respect to the weights.
double loss_and_grad(std::span<const ModalityPredictions> predictions, std::span<const int> labels,
                     const std::array<double, kNumModalities>& w, std::array<double, kNumModalities>* grad) {
  double loss = 0.0;
  std::array<double, kNumModalities> g{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    double f = 0.0;
    for (int m = 0; m < kNumModalities; ++m) f += w[m] * predictions[i][m][y];
    loss -= std::log(f);
    for (int m = 0; m < kNumModalities; ++m) g[m] -= predictions[i][m][y] / f;
  }
  const double n = static_cast<double>(labels.size());
  if (grad) {
    for (int m = 0; m < kNumModalities; ++m) (*grad)[m] = g[m] / n;
  }
  return loss / n;
}

}  // namespace

double fusion_loss(std::span<const ModalityPredictions> predictions, std::span<const int> labels,
                   const ModalityWeights& weights) {
  check_inputs(predictions, labels);
  if (labels.empty()) throw std::invalid_argument("no examples");
  return loss_and_grad(predictions, labels, weights.w, nullptr);
}

std::array<double, kNumModalities> project_to_simplex(const std::array<double, kNumModalities>& v) {
  auto u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0, theta = 0.0;
  for (int k = 0; k < kNumModalities; ++k) {
    cumulative += u[k];
    const double t = (cumulative - 1.0) / (k + 1);
    if (u[k] - t > 0.0) theta = t;
  }
  std::array<double, kNumModalities> out{};
  for (int k = 0; k < kNumModalities; ++k) out[k] = std::max(v[k] - theta, 0.0);
  return out;
}

WeightLearningResult learn_weights(std::span<const ModalityPredictions> predictions, std::span<const int> labels,
                                   const WeightLearningConfig& config) {
  check_inputs(predictions, labels);
  if (labels.size() < 10) throw std::invalid_argument("weight learning needs at least 10 labeled examples");
  if (config.iterations < 0 || !(config.step > 0.0)) throw std::invalid_argument("invalid weight-learning config");

  WeightLearningResult out;
  std::array<double, kNumModalities> w{1.0 / 3, 1.0 / 3, 1.0 / 3};
  auto best = w;
  double best_loss = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter <= config.iterations; ++iter) {
    std::array<double, kNumModalities> g{};
    const double loss = loss_and_grad(predictions, labels, w, &g);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("fusion loss is not finite at iteration " + std::to_string(iter));
    }
    out.loss_trace.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = w;
    }
    if (iter == config.iterations) break;
    for (int m = 0; m < kNumModalities; ++m) w[m] -= config.step * g[m];
    w = project_to_simplex(w);
  }
  // The projection can leave the sum a few ulps from one; renormalize before validation.
  const double sum = best[0] + best[1] + best[2];
  for (double& v : best) v /= sum;
  out.weights = ModalityWeights(best);
  out.initial_loss = out.loss_trace.front();
  out.final_loss = best_loss;
  return out;
}

FeatureLevelClassifier FeatureLevelClassifier::train(const Matrix& x, std::span<const int> labels,
                                                     const LogisticParams& params) {
  if (x.rows != labels.size()) throw std::invalid_argument("embedding rows and labels differ in length");
  if (x.rows == 0 || x.cols == 0) throw std::invalid_argument("empty embedding matrix");
  FeatureLevelClassifier model;
  model.standardizer_ = Standardizer::fit(x);
  const Matrix z = model.standardizer_.apply(x);
  const std::size_t n = z.rows, d = z.cols;

  std::array<double, kNumClasses> counts{};
  for (int y : labels) {
    if (y < 0 || y >= kNumClasses) throw std::invalid_argument("label out of range");
    counts[y] += 1.0;
  }
  for (int c = 0; c < kNumClasses; ++c) {
    model.bias_[c] = counts[c] > 0 ? std::log(counts[c] / static_cast<double>(n)) : -30.0;
  }
  model.weights_ = Matrix(kNumClasses, d);

  // Step from the smoothness bound 0.5 * lambda_max(Z'Z/n + bias column) + l2, by power iteration.
  std::vector<double> v(d + 1, 1.0 / std::sqrt(static_cast<double>(d + 1))), zv(n);
  double lambda = 0.0;
  for (int it = 0; it < 50; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = v[d];
      for (std::size_t k = 0; k < d; ++k) s += z(i, k) * v[k];
      zv[i] = s;
    }
    std::vector<double> next(d + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) next[k] += z(i, k) * zv[i];
      next[d] += zv[i];
    }
    double norm = 0.0;
    for (double& e : next) {
      e /= static_cast<double>(n);
      norm += e * e;
    }
    norm = std::sqrt(norm);
    lambda = norm;
    if (norm == 0.0) break;
    for (std::size_t k = 0; k <= d; ++k) v[k] = next[k] / norm;
  }
  const double step = params.step_scale / (0.5 * lambda + params.l2);

  Matrix gw(kNumClasses, d);
  std::vector<double> logits(kNumClasses);
  for (int iter = 0; iter < params.iterations; ++iter) {
    std::fill(gw.data.begin(), gw.data.end(), 0.0);
    std::array<double, kNumClasses> gb{};
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = z.row(i);
      for (int c = 0; c < kNumClasses; ++c) {
        double s = model.bias_[c];
        for (std::size_t k = 0; k < d; ++k) s += model.weights_(c, k) * row[k];
        logits[c] = s;
      }
      const auto p = ClassDistribution::softmax(logits);
      for (int c = 0; c < kNumClasses; ++c) {
        const double r = p[c] - (labels[i] == c ? 1.0 : 0.0);
        gb[c] += r;
        for (std::size_t k = 0; k < d; ++k) gw(c, k) += r * row[k];
      }
    }
    for (int c = 0; c < kNumClasses; ++c) {
      model.bias_[c] -= step * gb[c] / static_cast<double>(n);
      for (std::size_t k = 0; k < d; ++k) {
        model.weights_(c, k) -= step * (gw(c, k) / static_cast<double>(n) + params.l2 * model.weights_(c, k));
      }
    }
  }
  return model;
}

ClassDistribution FeatureLevelClassifier::predict_proba(std::span<const double> x) const {
  if (x.size() != input_dim()) {
    throw std::invalid_argument("embedding has " + std::to_string(x.size()) + " entries, expected " +
                                std::to_string(input_dim()));
  }
  const auto z = standardizer_.apply(x);
  std::array<double, kNumClasses> logits{};
  for (int c = 0; c < kNumClasses; ++c) {
    double s = bias_[c];
    for (std::size_t k = 0; k < z.size(); ++k) s += weights_(c, k) * z[k];
    logits[c] = s;
  }
  return ClassDistribution::softmax(logits);
}

void FeatureLevelClassifier::save(ByteWriter& w) const {
  w.f64s(standardizer_.mean);
  w.f64s(standardizer_.scale);
  w.matrix(weights_);
  w.f64s(bias_);
}

FeatureLevelClassifier FeatureLevelClassifier::load(ByteReader& r) {
  FeatureLevelClassifier m;
  m.standardizer_.mean = r.f64s();
  m.standardizer_.scale = r.f64s();
  m.weights_ = r.matrix();
  const auto b = r.f64s();
  if (b.size() != kNumClasses || m.weights_.rows != kNumClasses || m.weights_.cols != m.standardizer_.mean.size()) {
    throw std::runtime_error("corrupt feature-level classifier");
  }
  std::copy(b.begin(), b.end(), m.bias_.begin());
  return m;
}

ModalityPredictions modality_predictions(const TrainedModels& models, const PatientRecord& record) {
  ModalityPredictions out;
  for (int m = 0; m < kNumModalities; ++m) {
    if (record.mask.present[m]) out[m] = models.predict(static_cast<Modality>(m), record);
  }
  return out;
}

nlohmann::json metrics_json(const ModelMetrics& m) {
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& row : m.confusion) confusion.push_back(row);
  return {{"accuracy", m.accuracy}, {"macro_recall", m.macro_recall}, {"macro_f1", m.macro_f1},
          {"confusion", confusion}};
}

nlohmann::json FusionComparisonReport::to_json() const {
  nlohmann::json unimodal_json;
  for (int m = 0; m < kNumModalities; ++m) {
    unimodal_json[std::string(modality_name(static_cast<Modality>(m)))] = metrics_json(unimodal[m]);
  }
  return {{"weights",
           {{"indicator", weights.w[0]}, {"text", weights.w[1]}, {"image", weights.w[2]}}},
          {"loss_trace", learning.loss_trace},
          {"initial_loss", learning.initial_loss},
          {"final_loss", learning.final_loss},
          {"unimodal", unimodal_json},
          {"decision_level", metrics_json(decision_level)},
          {"feature_level", metrics_json(feature_level)},
          {"val_size", val_card_ids.size()},
          {"val_card_ids", val_card_ids},
          {"provenance", nlohmann::json::parse(provenance.empty() ? "null" : provenance)}};
}

FusionComparisonReport compare_fusion_strategies(const CohortDataset& dataset, const TrainedModels& models,
                                                 const LogisticParams& baseline, const WeightLearningConfig& learning) {
  if (!models.complete()) throw std::logic_error("fusion comparison needs all three modality models");
  const auto split = current_split(dataset);
  const auto train = subset(dataset, split.train);
  const auto val = subset(dataset, split.val);
  const auto val_labels = val.labels();

  FusionComparisonReport report;
  report.provenance = dataset.provenance;
  std::vector<ModalityPredictions> val_preds;
  for (const auto& r : val.records) {
    val_preds.push_back(modality_predictions(models, r));
    report.val_card_ids.push_back(r.card_id);
  }

  for (int m = 0; m < kNumModalities; ++m) {
    std::vector<int> pred;
    for (const auto& p : val_preds) pred.push_back(p[m].argmax());
    report.unimodal[m] = evaluate_predictions(val_labels, pred);
  }

  report.learning = learn_weights(val_preds, val_labels, learning);
  report.weights = report.learning.weights;
  std::vector<int> fused_pred;
  for (std::size_t i = 0; i < val.records.size(); ++i) {
    fused_pred.push_back(fuse(val_preds[i], report.weights, val.records[i].mask).fused.argmax());
  }
  report.decision_level = evaluate_predictions(val_labels, fused_pred);

  const auto classifier = FeatureLevelClassifier::train(concatenated_embeddings(models, train), train.labels(), baseline);
  const Matrix val_x = concatenated_embeddings(models, val);
  std::vector<int> feature_pred;
  for (std::size_t i = 0; i < val_x.rows; ++i) feature_pred.push_back(classifier.predict_proba(val_x.row(i)).argmax());
  report.feature_level = evaluate_predictions(val_labels, feature_pred);
  return report;
}

}  // namespace diag
