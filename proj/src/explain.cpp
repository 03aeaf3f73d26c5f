#include "diag/explain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "diag/png.hpp"

namespace diag {
namespace {

void check_shapley_inputs(std::span<const double> x, const Matrix& background, int target_class) {
  if (background.rows == 0) throw std::invalid_argument("Shapley background is empty");
  if (background.cols != x.size()) throw std::invalid_argument("background width differs from the input");
  if (target_class < 0 || target_class >= kNumClasses) throw std::invalid_argument("target class out of range");
}

double output(const ModelFn& f, std::span<const double> z, int target_class) {
  const double v = f(z)[target_class];
  if (!std::isfinite(v)) throw std::runtime_error("model output is not finite");
  return v;
}

}  // namespace

ShapleyAttribution exact_shapley(const ModelFn& f, std::span<const double> x, const Matrix& background,
                                 int target_class) {
  check_shapley_inputs(x, background, target_class);
  const std::size_t n = x.size();
  if (n > kMaxExactShapleyFeatures) {
    throw std::invalid_argument("exact_shapley enumerates 2^n coalitions and accepts at most 15 features; use "
                                "sampled_shapley for " + std::to_string(n));
  }
  const std::size_t coalitions = std::size_t{1} << n;
  std::vector<double> value(coalitions, 0.0);
  std::vector<double> z(n);
  for (std::size_t s = 0; s < coalitions; ++s) {
    double sum = 0.0;
    for (std::size_t b = 0; b < background.rows; ++b) {
      const auto row = background.row(b);
      for (std::size_t i = 0; i < n; ++i) z[i] = (s >> i) & 1 ? x[i] : row[i];
      sum += output(f, z, target_class);
    }
    value[s] = sum / static_cast<double>(background.rows);
  }

  // weight[k] = k! (n-k-1)! / n!
  std::vector<double> weight(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double w = 1.0 / static_cast<double>(n);
    for (std::size_t j = 1; j <= k; ++j) w *= static_cast<double>(j) / static_cast<double>(n - j);
    weight[k] = w;
  }

  ShapleyAttribution out;
  out.target_class = target_class;
  out.base_value = value[0];
  out.prediction = value[coalitions - 1];
  out.phi.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    double phi = 0.0;
    for (std::size_t s = 0; s < coalitions; ++s) {
      if (s & bit) continue;
      phi += weight[static_cast<std::size_t>(std::popcount(s))] * (value[s | bit] - value[s]);
    }
    out.phi[i] = phi;
  }
  return out;
}

ShapleyAttribution sampled_shapley(const ModelFn& f, std::span<const double> x, const Matrix& background,
                                   int target_class, std::size_t n_samples, std::uint64_t seed) {
  check_shapley_inputs(x, background, target_class);
  if (n_samples < 100) throw std::invalid_argument("sampled_shapley needs at least 100 samples");
  const std::size_t n = x.size();

  ShapleyAttribution out;
  out.target_class = target_class;
  double base = 0.0;
  for (std::size_t b = 0; b < background.rows; ++b) base += output(f, background.row(b), target_class);
  out.base_value = base / static_cast<double>(background.rows);
  out.prediction = output(f, x, target_class);
  out.phi.assign(n, 0.0);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_row(0, background.rows - 1);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> z(n);
  std::size_t taken = 0;
  while (taken < n_samples) {
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto row = background.row(pick_row(rng));
    for (int pass = 0; pass < 2 && taken < n_samples; ++pass, ++taken) {
      std::copy(row.begin(), row.end(), z.begin());
      double prev = output(f, z, target_class);
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = pass == 0 ? perm[k] : perm[n - 1 - k];
        z[i] = x[i];
        const double cur = output(f, z, target_class);
        out.phi[i] += cur - prev;
        prev = cur;
      }
    }
  }
  for (double& p : out.phi) p /= static_cast<double>(n_samples);

  const double residual = out.prediction - out.base_value - std::accumulate(out.phi.begin(), out.phi.end(), 0.0);
  double abs_sum = 0.0;
  for (double p : out.phi) abs_sum += std::abs(p);
  for (double& p : out.phi) {
    p += abs_sum > 0.0 ? residual * std::abs(p) / abs_sum : residual / static_cast<double>(n);
  }
  return out;
}

Matrix sample_background(const Matrix& rows, std::size_t count, std::uint64_t seed) {
  if (rows.rows == 0) throw std::invalid_argument("no rows to sample a background from");
  std::vector<std::size_t> idx(rows.rows);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(count, rows.rows));
  std::sort(idx.begin(), idx.end());
  Matrix out(idx.size(), rows.cols);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = rows.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

std::string_view cam_mode_name(CamMode mode) {
  return mode == CamMode::GradCam ? "grad_cam" : "guided_grad_cam";
}

std::vector<double> bilinear_upsample(std::span<const double> in, int in_size, int out_size) {
  std::vector<double> out(static_cast<std::size_t>(out_size) * out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  const auto coord = [&](int o, int& i0, int& i1, double& t) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, in_size - 1);
    t = src - i0;
  };
  for (int r = 0; r < out_size; ++r) {
    int r0, r1;
    double tr;
    coord(r, r0, r1, tr);
    for (int c = 0; c < out_size; ++c) {
      int c0, c1;
      double tc;
      coord(c, c0, c1, tc);
      const double top = (1 - tc) * in[r0 * in_size + c0] + tc * in[r0 * in_size + c1];
      const double bottom = (1 - tc) * in[r1 * in_size + c0] + tc * in[r1 * in_size + c1];
      out[static_cast<std::size_t>(r) * out_size + c] = (1 - tr) * top + tr * bottom;
    }
  }
  return out;
}

SaliencyMap grad_cam(const ImageModel& model, std::span<const double> pixels, int target_class, CamMode mode) {
  if (!model.trained()) throw std::logic_error("grad_cam needs a trained image model");
  if (target_class < 0 || target_class >= kNumClasses) throw std::invalid_argument("target class out of range");
  const int size = model.arch().input_size;
  if (pixels.size() != static_cast<std::size_t>(size) * size) throw std::invalid_argument("image shape mismatch");

  const auto acts = model.forward(pixels);
  std::array<double, kNumClasses> dlogits{};
  dlogits[target_class] = 1.0;
  std::vector<double> d_maps;
  model.backward(acts, dlogits, ImageModel::ReluBackward::Standard, {.conv2 = &d_maps});

  const int channels = model.arch().conv2;
  const int s2 = model.arch().pooled1();
  const std::size_t area = static_cast<std::size_t>(s2) * s2;
  std::vector<double> cam(area, 0.0);
  for (int k = 0; k < channels; ++k) {
    const std::size_t off = static_cast<std::size_t>(k) * area;
    double alpha = 0.0;
    for (std::size_t p = 0; p < area; ++p) alpha += d_maps[off + p];
    alpha /= static_cast<double>(area);
    for (std::size_t p = 0; p < area; ++p) cam[p] += alpha * acts.conv2[off + p];
  }
  for (double& v : cam) v = std::max(v, 0.0);

  SaliencyMap out;
  out.target_class = target_class;
  out.mode = mode;
  out.values = bilinear_upsample(cam, s2, size);
  if (mode == CamMode::GuidedGradCam) {
    std::vector<double> guided;
    model.backward(acts, dlogits, ImageModel::ReluBackward::Guided, {.input = &guided});
    for (std::size_t p = 0; p < out.values.size(); ++p) out.values[p] *= std::abs(guided[p]);
  }
  const double peak = *std::max_element(out.values.begin(), out.values.end());
  if (peak > 0.0) {
    for (double& v : out.values) v /= peak;
  }
  return out;
}

TokenAttribution token_attribution(const TextModel& model, std::span<const std::string> tokens, int target_class) {
  if (model.vocabulary().empty()) throw std::logic_error("token_attribution needs a trained text model");
  if (target_class < 0 || target_class >= kNumClasses) throw std::invalid_argument("target class out of range");
  TokenAttribution out;
  out.target_class = target_class;
  out.bias = model.bias()[target_class];
  out.logit = model.logits(tokens)[target_class];
  const auto w = model.class_weights().row(static_cast<std::size_t>(target_class));
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    TokenWeight tw{tokens[pos], pos, 0.0};
    if (const auto idx = model.index_of(tokens[pos])) {
      const auto e = model.embedding().row(static_cast<std::size_t>(*idx));
      double s = 0.0;
      for (std::size_t d = 0; d < e.size(); ++d) s += w[d] * e[d];
      tw.weight = s;
    }
    out.tokens.push_back(std::move(tw));
  }
  return out;
}

AttributionBundle explain_patient(const TrainedModels& models, const Matrix& background, const PatientRecord& record,
                                  int target_class, const ExplainConfig& config) {
  AttributionBundle b;
  b.card_id = record.card_id;
  b.target_class = target_class;
  b.mask = record.mask;
  const auto annotate = [&](Modality m, const auto& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(modality_name(m)) + " attribution for '" + record.card_id + "': " + e.what());
    }
  };
  if (record.mask.has(Modality::Indicator)) {
    annotate(Modality::Indicator, [&] {
      if (!models.indicator) throw std::logic_error("indicator model not trained");
      const auto& model = *models.indicator;
      const ModelFn f = [&model](std::span<const double> z) { return model.predict_features(z).values(); };
      const auto x = record.indicators.features();
      b.shapley = sampled_shapley(f, x, background, target_class, config.shapley_samples, config.seed);
    });
  }
  if (record.mask.has(Modality::Text)) {
    annotate(Modality::Text, [&] {
      if (!models.text) throw std::logic_error("text model not trained");
      b.tokens = token_attribution(*models.text, record.note.tokens(), target_class);
    });
  }
  if (record.mask.has(Modality::Image)) {
    annotate(Modality::Image, [&] {
      if (!models.image) throw std::logic_error("image model not trained");
      b.saliency = grad_cam(*models.image, record.image.pixels, target_class, CamMode::GuidedGradCam);
    });
  }
  return b;
}

std::string saliency_png(const SaliencyMap& map) {
  const auto bytes = png::quantize(map.values);
  return png::encode_gray(kImageSize, kImageSize, bytes);
}

nlohmann::json saliency_json(const SaliencyMap& map) {
  auto rows = nlohmann::json::array();
  for (int r = 0; r < kImageSize; ++r) {
    rows.push_back(std::vector<double>(map.values.begin() + r * kImageSize, map.values.begin() + (r + 1) * kImageSize));
  }
  return {{"target_class", map.target_class}, {"mode", cam_mode_name(map.mode)}, {"values", rows}};
}

nlohmann::json AttributionBundle::to_json() const {
  nlohmann::json j{{"card_id", card_id},
                   {"target_class", target_class},
                   {"mask", {{"indicator", mask.present[0]}, {"text", mask.present[1]}, {"image", mask.present[2]}}}};
  if (shapley) {
    j["shapley"] = {{"base_value", shapley->base_value}, {"phi", shapley->phi}, {"prediction", shapley->prediction}};
  }
  if (tokens) {
    auto list = nlohmann::json::array();
    for (const auto& t : tokens->tokens) list.push_back({{"token", t.token}, {"position", t.position}, {"weight", t.weight}});
    j["tokens"] = {{"bias", tokens->bias}, {"logit", tokens->logit}, {"tokens", list}};
  }
  if (saliency) j["saliency"] = saliency_json(*saliency);
  return j;
}

AttributionBundle AttributionBundle::from_json(const nlohmann::json& j) {
  AttributionBundle b;
  b.card_id = j.at("card_id").get<std::string>();
  b.target_class = j.at("target_class").get<int>();
  const auto& m = j.at("mask");
  b.mask.present = {m.at("indicator").get<bool>(), m.at("text").get<bool>(), m.at("image").get<bool>()};
  if (j.contains("shapley")) {
    ShapleyAttribution s;
    s.target_class = b.target_class;
    s.base_value = j["shapley"].at("base_value").get<double>();
    s.phi = j["shapley"].at("phi").get<std::vector<double>>();
    s.prediction = j["shapley"].at("prediction").get<double>();
    b.shapley = std::move(s);
  }
  if (j.contains("tokens")) {
    TokenAttribution t;
    t.target_class = b.target_class;
    t.bias = j["tokens"].at("bias").get<double>();
    t.logit = j["tokens"].at("logit").get<double>();
    for (const auto& e : j["tokens"].at("tokens")) {
      t.tokens.push_back({e.at("token").get<std::string>(), e.at("position").get<std::size_t>(),
                          e.at("weight").get<double>()});
    }
    b.tokens = std::move(t);
  }
  if (j.contains("saliency")) {
    SaliencyMap s;
    s.target_class = b.target_class;
    s.mode = j["saliency"].at("mode").get<std::string>() == "grad_cam" ? CamMode::GradCam : CamMode::GuidedGradCam;
    for (const auto& row : j["saliency"].at("values")) {
      for (const auto& v : row) s.values.push_back(v.get<double>());
    }
    b.saliency = std::move(s);
  }
  return b;
}

}  // namespace diag
