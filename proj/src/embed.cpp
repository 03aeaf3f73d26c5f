#include "diag/embed.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <random>
#include <stdexcept>

namespace diag {

std::string_view space_name(EmbeddingSpace s) {
  switch (s) {
    case EmbeddingSpace::Indicator: return "indicator";
    case EmbeddingSpace::Text: return "text";
    case EmbeddingSpace::Image: return "image";
    case EmbeddingSpace::Fusion: return "fusion";
  }
  throw std::invalid_argument("unknown embedding space");
}

EmbeddingSpace parse_space(std::string_view text) {
  for (int s = 0; s < kNumSpaces; ++s) {
    if (space_name(static_cast<EmbeddingSpace>(s)) == text) return static_cast<EmbeddingSpace>(s);
  }
  throw std::invalid_argument("invalid embedding space '" + std::string(text) + "'");
}

std::size_t embedding_dim(const TrainedModels& models, Modality m) {
  switch (m) {
    case Modality::Indicator: return kNumTabularFeatures;
    case Modality::Text:
      if (!models.text) throw std::logic_error("text model not trained");
      return models.text->dim();
    case Modality::Image:
      if (!models.image) throw std::logic_error("image model not trained");
      return static_cast<std::size_t>(models.image->arch().hidden);
  }
  throw std::invalid_argument("unknown modality");
}

std::vector<double> modality_embedding(const TrainedModels& models, Modality m, const PatientRecord& record) {
  if (!record.mask.has(m)) return std::vector<double>(embedding_dim(models, m), 0.0);
  switch (m) {
    case Modality::Indicator: {
      if (!models.indicator) throw std::logic_error("indicator model not trained");
      const auto f = record.indicators.features();
      return models.indicator->standardize(f);
    }
    case Modality::Text:
      if (!models.text) throw std::logic_error("text model not trained");
      return models.text->embed(record.note.tokens());
    case Modality::Image:
      if (!models.image) throw std::logic_error("image model not trained");
      return models.image->penultimate(record.image.pixels);
  }
  throw std::invalid_argument("unknown modality");
}

EmbeddingSet extract_embeddings(const TrainedModels& models, const ModalityWeights& weights,
                                const CohortDataset& dataset) {
  std::array<std::size_t, kNumModalities> dims{};
  std::size_t total = 0;
  for (int m = 0; m < kNumModalities; ++m) total += dims[m] = embedding_dim(models, static_cast<Modality>(m));

  const std::size_t n = dataset.records.size();
  EmbeddingSet out;
  out.weights = weights;
  for (int m = 0; m < kNumModalities; ++m) out.spaces[m] = Matrix(n, dims[m]);
  out.spaces[static_cast<int>(EmbeddingSpace::Fusion)] = Matrix(n, total);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = dataset.records[i];
    out.card_ids.push_back(rec.card_id);
    out.masks.push_back(rec.mask);
    auto fusion_row = out.spaces[static_cast<int>(EmbeddingSpace::Fusion)].row(i);
    std::size_t offset = 0;
    for (int m = 0; m < kNumModalities; ++m) {
      const auto v = modality_embedding(models, static_cast<Modality>(m), rec);
      auto row = out.spaces[m].row(i);
      for (std::size_t d = 0; d < dims[m]; ++d) {
        row[d] = v[d];
        fusion_row[offset + d] = weights[m] * v[d];
      }
      offset += dims[m];
    }
  }
  return out;
}

Matrix concatenated_embeddings(const TrainedModels& models, const CohortDataset& dataset) {
  std::size_t total = 0;
  for (int m = 0; m < kNumModalities; ++m) total += embedding_dim(models, static_cast<Modality>(m));
  Matrix x(dataset.records.size(), total);
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    auto row = x.row(i);
    std::size_t offset = 0;
    for (int m = 0; m < kNumModalities; ++m) {
      const auto v = modality_embedding(models, static_cast<Modality>(m), dataset.records[i]);
      std::copy(v.begin(), v.end(), row.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += v.size();
    }
  }
  return x;
}

void TsneParams::validate(std::size_t n) const {
  if (n < 5) throw std::invalid_argument("t-SNE needs at least 5 points");
  if (!(perplexity > 0.0) || !(perplexity < (static_cast<double>(n) - 1.0) / 3.0)) {
    throw std::invalid_argument("perplexity must lie in (0, (n-1)/3)");
  }
  if (iterations < 250) throw std::invalid_argument("t-SNE needs at least 250 iterations");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("t-SNE learning rate must be positive");
}

nlohmann::json TsneParams::to_json() const {
  return {{"perplexity", perplexity},
          {"iterations", iterations},
          {"learning_rate", learning_rate},
          {"early_exaggeration", early_exaggeration},
          {"exaggeration_iterations", exaggeration_iterations},
          {"initial_momentum", initial_momentum},
          {"final_momentum", final_momentum},
          {"momentum_switch", momentum_switch},
          {"seed", seed}};
}

namespace {

Matrix squared_distances(const Matrix& x) {
  const std::size_t n = x.rows;
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) {
        const double diff = x(i, k) - x(j, k);
        s += diff * diff;
      }
      d(i, j) = d(j, i) = s;
    }
  }
  return d;
}

std::size_t distinct_rows(const Matrix& x, std::size_t cap) {
  std::vector<std::size_t> reps;
  for (std::size_t i = 0; i < x.rows && reps.size() < cap; ++i) {
    const auto r = x.row(i);
    bool seen = false;
    for (auto j : reps) {
      if (std::equal(r.begin(), r.end(), x.row(j).begin())) {
        seen = true;
        break;
      }
    }
    if (!seen) reps.push_back(i);
  }
  return reps.size();
}

}  // namespace

Matrix conditional_affinities(const Matrix& x, double perplexity, std::vector<double>* entropies) {
  const std::size_t n = x.rows;
  const Matrix d = squared_distances(x);
  const double target = std::log(perplexity);
  Matrix p(n, n);
  if (entropies) entropies->assign(n, 0.0);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dmin = std::min(dmin, d(i, j));
    }
    // Entropy is unchanged by shifting distances, and the shift keeps exp() from underflowing.
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double h = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
      double sum = 0.0, dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double shifted = j == i ? 0.0 : d(i, j) - dmin;
        row[j] = j == i ? 0.0 : std::exp(-beta * shifted);
        sum += row[j];
        dot += row[j] * shifted;
      }
      h = std::log(sum) + beta * dot / sum;
      for (std::size_t j = 0; j < n; ++j) p(i, j) = row[j] / sum;
      // Far tighter than the 1e-5 nats callers rely on, so recomputing the entropy from p keeps margin.
      if (std::abs(h - target) < 1e-10) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    if (entropies) (*entropies)[i] = h;
  }
  return p;
}

Matrix joint_affinities(const Matrix& x, double perplexity) {
  Matrix c = conditional_affinities(x, perplexity);
  const std::size_t n = x.rows;
  Matrix p(n, n);
  const double denom = 2.0 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) p(i, j) = (c(i, j) + c(j, i)) / denom;
  }
  return p;
}

TsneResult tsne(const Matrix& x, const TsneParams& params) {
  const std::size_t n = x.rows;
  params.validate(n);
  if (distinct_rows(x, 5) < 5) throw std::invalid_argument("degenerate geometry: fewer than 5 distinct vectors");

  const Matrix p = joint_affinities(x, params.perplexity);

  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> normal(0.0, 1e-4);
  Matrix y(n, 2);
  for (auto& v : y.data) v = normal(rng);

  Matrix update(n, 2), gains(n, 2, 1.0), grad(n, 2);
  Matrix num(n, n);
  TsneResult result;

  const auto kl_divergence = [&](double qsum) {
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j || p(i, j) <= 0.0) continue;
        const double q = std::max(num(i, j) / qsum, std::numeric_limits<double>::min());
        kl += p(i, j) * std::log(p(i, j) / q);
      }
    }
    return kl;
  };

  for (int iter = 0; iter < params.iterations; ++iter) {
    const double exaggeration = iter < params.exaggeration_iterations ? params.early_exaggeration : 1.0;
    const double momentum = iter < params.momentum_switch ? params.initial_momentum : params.final_momentum;

    double qsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num(i, j) = num(j, i) = v;
        qsum += 2.0 * v;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = (exaggeration * p(i, j) - num(i, j) / qsum) * num(i, j);
        gx += w * (y(i, 0) - y(j, 0));
        gy += w * (y(i, 1) - y(j, 1));
      }
      grad(i, 0) = 4.0 * gx;
      grad(i, 1) = 4.0 * gy;
    }
    // Delta-bar-delta gains as in the reference implementation.
    for (std::size_t k = 0; k < y.data.size(); ++k) {
      const bool same_sign = (grad.data[k] > 0.0) == (update.data[k] > 0.0);
      gains.data[k] = std::max(same_sign ? gains.data[k] * 0.8 : gains.data[k] + 0.2, 0.01);
      update.data[k] = momentum * update.data[k] - params.learning_rate * gains.data[k] * grad.data[k];
      y.data[k] += update.data[k];
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y(i, 0);
      my += y(i, 1);
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y(i, 0) -= mx;
      y(i, 1) -= my;
    }

    if ((iter + 1) % 50 == 0 || iter + 1 == params.iterations) {
      double qs = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
          const double v = 1.0 / (1.0 + dx * dx + dy * dy);
          num(i, j) = num(j, i) = v;
          qs += 2.0 * v;
        }
      }
      const double kl = kl_divergence(qs);
      if (!std::isfinite(kl)) throw std::runtime_error("t-SNE produced a non-finite KL divergence");
      if ((iter + 1) % 50 == 0) result.kl_trace.emplace_back(iter + 1, kl);
      result.final_kl = kl;
    }
  }
  for (double v : y.data) {
    if (!std::isfinite(v)) throw std::runtime_error("t-SNE produced non-finite coordinates");
  }
  result.coords = std::move(y);
  return result;
}

nlohmann::json ProjectionSet::to_json() const {
  nlohmann::json j;
  j["params"] = params.to_json();
  for (int s = 0; s < kNumSpaces; ++s) {
    const auto name = std::string(space_name(static_cast<EmbeddingSpace>(s)));
    auto points = nlohmann::json::array();
    for (std::size_t i = 0; i < card_ids.size(); ++i) {
      points.push_back({{"card_id", card_ids[i]}, {"x", spaces[s].coords(i, 0)}, {"y", spaces[s].coords(i, 1)}});
    }
    j["spaces"][name] = std::move(points);
    auto trace = nlohmann::json::array();
    for (const auto& [it, kl] : spaces[s].kl_trace) trace.push_back({{"iteration", it}, {"kl", kl}});
    j["kl_trace"][name] = std::move(trace);
    j["final_kl"][name] = spaces[s].final_kl;
  }
  return j;
}

ProjectionSet ProjectionSet::from_json(const nlohmann::json& j) {
  ProjectionSet ps;
  const auto& pj = j.at("params");
  ps.params.perplexity = pj.at("perplexity").get<double>();
  ps.params.iterations = pj.at("iterations").get<int>();
  ps.params.learning_rate = pj.at("learning_rate").get<double>();
  ps.params.early_exaggeration = pj.at("early_exaggeration").get<double>();
  ps.params.exaggeration_iterations = pj.at("exaggeration_iterations").get<int>();
  ps.params.initial_momentum = pj.at("initial_momentum").get<double>();
  ps.params.final_momentum = pj.at("final_momentum").get<double>();
  ps.params.momentum_switch = pj.at("momentum_switch").get<int>();
  ps.params.seed = pj.at("seed").get<std::uint64_t>();
  for (int s = 0; s < kNumSpaces; ++s) {
    const auto name = std::string(space_name(static_cast<EmbeddingSpace>(s)));
    const auto& points = j.at("spaces").at(name);
    auto& res = ps.spaces[s];
    res.coords = Matrix(points.size(), 2);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < points.size(); ++i) {
      ids.push_back(points[i].at("card_id").get<std::string>());
      res.coords(i, 0) = points[i].at("x").get<double>();
      res.coords(i, 1) = points[i].at("y").get<double>();
    }
    if (s == 0) {
      ps.card_ids = std::move(ids);
    } else if (ids != ps.card_ids) {
      throw std::runtime_error("projection spaces disagree on card_ids");
    }
    for (const auto& t : j.at("kl_trace").at(name)) {
      res.kl_trace.emplace_back(t.at("iteration").get<int>(), t.at("kl").get<double>());
    }
    res.final_kl = j.at("final_kl").at(name).get<double>();
  }
  return ps;
}

ProjectionSet project_all(const EmbeddingSet& embeddings, const TsneParams& params) {
  if (embeddings.card_ids.empty()) throw std::invalid_argument("no embeddings to project");
  ProjectionSet out;
  out.card_ids = embeddings.card_ids;
  out.params = params;
  std::array<std::future<TsneResult>, kNumSpaces> jobs;
  for (int s = 0; s < kNumSpaces; ++s) {
    jobs[s] = std::async(std::launch::async, [&, s] { return tsne(embeddings.spaces[s], params); });
  }
  for (int s = 0; s < kNumSpaces; ++s) {
    try {
      out.spaces[s] = jobs[s].get();
    } catch (const std::exception& e) {
      for (int t = s + 1; t < kNumSpaces; ++t) jobs[t].wait();
      throw std::runtime_error(std::string(space_name(static_cast<EmbeddingSpace>(s))) + " space: " + e.what());
    }
  }
  return out;
}

}  // namespace diag
