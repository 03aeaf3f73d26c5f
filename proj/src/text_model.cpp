#include "diag/text_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace diag {

std::map<std::string, int> build_vocabulary(const std::vector<std::vector<std::string>>& docs, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& doc : docs) {
    for (const auto& t : doc) ++counts[t];
  }
  std::map<std::string, int> vocab;
  for (const auto& [token, n] : counts) {
    if (n >= min_count) vocab.emplace(token, static_cast<int>(vocab.size()));
  }
  return vocab;
}

TextModel::TextModel(std::map<std::string, int> vocabulary, Matrix embedding, Matrix class_weights,
                     std::array<double, kNumClasses> bias)
    : vocab_(std::move(vocabulary)),
      embedding_(std::move(embedding)),
      class_weights_(std::move(class_weights)),
      bias_(bias) {
  if (embedding_.rows != vocab_.size() || class_weights_.rows != kNumClasses ||
      class_weights_.cols != embedding_.cols) {
    throw std::invalid_argument("text model: inconsistent parameter shapes");
  }
}

std::optional<int> TextModel::index_of(const std::string& token) const {
  const auto it = vocab_.find(token);
  if (it == vocab_.end()) return std::nullopt;
  return it->second;
}

TextModel::Bag TextModel::bag(std::span<const std::string> tokens) const {
  std::map<int, int> counts;
  for (const auto& t : tokens) {
    if (auto idx = index_of(t)) ++counts[*idx];
  }
  return Bag(counts.begin(), counts.end());
}

namespace {

void embed_bag(const Matrix& embedding, const TextModel::Bag& bag, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (const auto& [idx, count] : bag) {
    const auto row = embedding.row(idx);
    const double n = count;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += n * row[k];
  }
}

std::array<double, kNumClasses> logits_of(const Matrix& w, const std::array<double, kNumClasses>& b,
                                          std::span<const double> e) {
  std::array<double, kNumClasses> z = b;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto row = w.row(c);
    for (std::size_t k = 0; k < e.size(); ++k) z[c] += row[k] * e[k];
  }
  return z;
}

}  // namespace

std::vector<double> TextModel::embed(std::span<const std::string> tokens) const {
  std::vector<double> e(dim());
  embed_bag(embedding_, bag(tokens), e);
  return e;
}

std::array<double, kNumClasses> TextModel::logits(std::span<const std::string> tokens) const {
  const auto e = embed(tokens);
  return logits_of(class_weights_, bias_, e);
}

ClassDistribution TextModel::predict_proba(std::span<const std::string> tokens) const {
  if (embedding_.rows == 0) throw std::logic_error("text model is untrained");
  const auto z = logits(tokens);
  return ClassDistribution::softmax(z);
}

double TextModel::loss(const std::vector<Bag>& docs, std::span<const int> labels, Gradients* grads) const {
  if (docs.size() != labels.size() || docs.empty()) throw std::invalid_argument("text model: bad batch");
  const std::size_t d = dim();
  if (grads) {
    grads->embedding = Matrix(embedding_.rows, d);
    grads->class_weights = Matrix(kNumClasses, d);
    grads->bias.fill(0.0);
  }
  const double inv_n = 1.0 / static_cast<double>(docs.size());
  std::vector<double> e(d), de(d);
  double total = 0.0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    embed_bag(embedding_, docs[i], e);
    const auto z = logits_of(class_weights_, bias_, e);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    std::array<double, kNumClasses> p{};
    for (int c = 0; c < kNumClasses; ++c) sum += p[c] = std::exp(z[c] - mx);
    for (auto& v : p) v /= sum;
    total += std::log(sum) + mx - z[labels[i]];
    if (!grads) continue;

    std::fill(de.begin(), de.end(), 0.0);
    for (int c = 0; c < kNumClasses; ++c) {
      const double dz = (p[c] - (labels[i] == c ? 1.0 : 0.0)) * inv_n;
      grads->bias[c] += dz;
      auto gw = grads->class_weights.row(c);
      const auto w = class_weights_.row(c);
      for (std::size_t k = 0; k < d; ++k) {
        gw[k] += dz * e[k];
        de[k] += dz * w[k];
      }
    }
    for (const auto& [idx, count] : docs[i]) {
      auto ge = grads->embedding.row(idx);
      for (std::size_t k = 0; k < d; ++k) ge[k] += count * de[k];
    }
  }
  return total * inv_n;
}

std::vector<double> TextModel::flatten() const {
  std::vector<double> flat(embedding_.data);
  flat.insert(flat.end(), class_weights_.data.begin(), class_weights_.data.end());
  flat.insert(flat.end(), bias_.begin(), bias_.end());
  return flat;
}

void TextModel::unflatten(std::span<const double> flat) {
  auto it = flat.begin();
  std::copy_n(it, embedding_.data.size(), embedding_.data.begin());
  it += static_cast<std::ptrdiff_t>(embedding_.data.size());
  std::copy_n(it, class_weights_.data.size(), class_weights_.data.begin());
  it += static_cast<std::ptrdiff_t>(class_weights_.data.size());
  std::copy_n(it, kNumClasses, bias_.begin());
}

TextModel TextModel::train(const CohortDataset& train, const TextParams& params) {
  std::vector<std::vector<std::string>> docs;
  docs.reserve(train.records.size());
  for (const auto& r : train.records) docs.push_back(r.note.tokens());
  const auto labels = train.labels();
  return TextModel::train(docs, labels, params);
}

TextModel TextModel::train(const std::vector<std::vector<std::string>>& docs, std::span<const int> labels,
                           const TextParams& params) {
  if (docs.size() != labels.size() || docs.empty()) throw std::invalid_argument("text model: no training documents");
  if (params.dim < 1 || params.min_count < 1) throw std::invalid_argument("text model: invalid hyperparameters");
  auto vocab = build_vocabulary(docs, params.min_count);
  if (vocab.empty()) throw std::invalid_argument("text model: empty vocabulary");

  TextModel m;
  m.vocab_ = std::move(vocab);
  std::vector<Bag> bags;
  bags.reserve(docs.size());
  std::size_t covered = 0;
  for (const auto& doc : docs) {
    bags.push_back(m.bag(doc));
    covered += bags.back().empty() ? 0 : 1;
  }
  if (static_cast<double>(covered) < 0.9 * static_cast<double>(docs.size())) {
    throw std::invalid_argument("text model: vocabulary covers fewer than 90% of documents");
  }

  const std::size_t d = static_cast<std::size_t>(params.dim);
  std::mt19937_64 rng(params.sgd.seed);
  std::normal_distribution<double> init(0.0, params.init_scale);
  m.embedding_ = Matrix(m.vocab_.size(), d);
  for (auto& v : m.embedding_.data) v = init(rng);
  m.class_weights_ = Matrix(kNumClasses, d);
  for (auto& v : m.class_weights_.data) v = init(rng);
  std::array<double, kNumClasses> counts{};
  for (int y : labels) counts.at(y) += 1.0;
  for (int c = 0; c < kNumClasses; ++c) {
    m.bias_[c] = std::log(std::max(counts[c], 1e-9) / static_cast<double>(labels.size()));
  }

  const std::vector<int> label_vec(labels.begin(), labels.end());
  auto [fit, holdout] = holdout_split(label_vec, params.sgd);
  auto gather = [&](std::span<const std::size_t> idx, std::vector<Bag>& b, std::vector<int>& y) {
    b.clear();
    y.clear();
    for (auto i : idx) {
      b.push_back(bags[i]);
      y.push_back(label_vec[i]);
    }
  };

  std::vector<double> flat = m.flatten();
  TextModel scratch = m;
  std::vector<Bag> batch_docs;
  std::vector<int> batch_labels;
  Gradients g;
  const LossGradFn loss_grad = [&](std::span<const std::size_t> idx, std::span<double> grad) {
    scratch.unflatten(flat);
    gather(idx, batch_docs, batch_labels);
    const double l = scratch.loss(batch_docs, batch_labels, &g);
    auto out = grad.begin();
    out = std::copy(g.embedding.data.begin(), g.embedding.data.end(), out);
    out = std::copy(g.class_weights.data.begin(), g.class_weights.data.end(), out);
    std::copy(g.bias.begin(), g.bias.end(), out);
    return l;
  };
  const LossFn eval_loss = [&](std::span<const std::size_t> idx) {
    scratch.unflatten(flat);
    gather(idx, batch_docs, batch_labels);
    return scratch.loss(batch_docs, batch_labels, nullptr);
  };
  m.report_ = run_sgd(flat, fit, holdout, loss_grad, eval_loss, params.sgd);
  m.unflatten(flat);
  return m;
}

void TextModel::save(ByteWriter& w) const {
  w.u64(vocab_.size());
  for (const auto& [token, idx] : vocab_) {
    w.str(token);
    w.i64(idx);
  }
  w.matrix(embedding_);
  w.matrix(class_weights_);
  w.f64s(bias_);
}

TextModel TextModel::load(ByteReader& r) {
  std::map<std::string, int> vocab;
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    auto token = r.str();
    const auto idx = r.i64();
    if (idx < 0 || idx >= static_cast<std::int64_t>(n)) throw std::runtime_error("artifact: bad vocabulary index");
    vocab.emplace(std::move(token), static_cast<int>(idx));
  }
  auto emb = r.matrix();
  auto w = r.matrix();
  const auto b = r.f64s();
  if (b.size() != kNumClasses) throw std::runtime_error("artifact: bad text bias");
  std::array<double, kNumClasses> bias{};
  std::copy(b.begin(), b.end(), bias.begin());
  return TextModel(std::move(vocab), std::move(emb), std::move(w), bias);
}

}  // namespace diag
