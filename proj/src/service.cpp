#include "diag/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <fstream>
#include <future>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <thread>

#include "httplib.h"

#include "diag/png.hpp"
#include "diag/serialize.hpp"

namespace diag {
namespace fs = std::filesystem;
using nlohmann::json;

bool point_in_polygon(double x, double y, std::span<const std::array<double, 2>> polygon) {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = polygon[i][0], yi = polygon[i][1];
    const double xj = polygon[j][0], yj = polygon[j][1];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

namespace {

/// Client-visible failure with an HTTP status.
struct ApiError : std::runtime_error {
  int status;
  ApiError(int s, const std::string& msg) : std::runtime_error(msg), status(s) {}
};

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

/// Append-only JSON-lines file; appends are serialized by one mutex.
class JsonlStore {
 public:
  explicit JsonlStore(fs::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) entries_.push_back(json::parse(line));
    }
  }

  /// `make` receives the next 1-based sequence number and returns the entry to persist.
  template <typename Make>
  json append(Make&& make) {
    std::lock_guard lock(mu_);
    json entry = make(entries_.size() + 1);
    fs::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    out << entry.dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot append to " + path_.string());
    entries_.push_back(entry);
    return entry;
  }

  std::vector<json> all() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

 private:
  fs::path path_;
  mutable std::mutex mu_;
  std::vector<json> entries_;
};

json dist_json(const ClassDistribution& d) { return d.values(); }

json modality_map(const std::array<std::array<double, kNumClasses>, kNumModalities>& v) {
  json j;
  for (int m = 0; m < kNumModalities; ++m) j[std::string(modality_name(static_cast<Modality>(m)))] = v[m];
  return j;
}

json weights_json(const std::array<double, kNumModalities>& w) {
  return {{"indicator", w[0]}, {"text", w[1]}, {"image", w[2]}};
}

json parse_body(const std::string& body) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw ApiError(400, "request body must be a JSON object");
    return j;
  } catch (const json::exception&) {
    throw ApiError(400, "request body is not valid JSON");
  }
}

std::string body_string(const json& j, const std::string& key, bool required) {
  if (!j.contains(key) || j[key].is_null()) {
    if (required) throw ApiError(400, "missing field '" + key + "'");
    return "";
  }
  if (!j[key].is_string()) throw ApiError(400, "field '" + key + "' must be a string");
  return j[key].get<std::string>();
}

}  // namespace

struct DiagnosticService::Impl {
  Config config;
  Workspace ws;

  std::mutex load_mu;
  std::atomic<bool> loaded{false};
  std::mutex error_mu;
  std::string load_error;

  CohortDataset dataset;
  TrainedModels models;
  FusionArtifact fusion;
  std::optional<ProjectionSet> projections;
  json projections_json;
  json summary;
  Matrix background;
  std::string cache_key;
  std::vector<FusedPrediction> fused;  // per record
  std::map<std::string, std::size_t> index;

  std::mutex cache_mu;
  std::map<std::pair<std::string, int>, std::shared_future<AttributionBundle>> cache;

  std::unique_ptr<JsonlStore> notes, actions, selections;

  httplib::Server server;
  std::thread server_thread, loader_thread;
  std::mutex stop_mu;
  std::condition_variable stop_cv;
  bool stopped = false;

  explicit Impl(Config c) : config(std::move(c)), ws(config.workdir) {
    for (const auto& [path, sub] : {std::pair{fs::path(ws.cohort().indicators_csv), "generate-data"},
                                    std::pair{ws.split_file(), "generate-data"},
                                    std::pair{ws.models_file(), "train --modality all"},
                                    std::pair{ws.fusion_file(), "evaluate"}}) {
      if (!fs::exists(path)) {
        throw MissingArtifact("missing " + path.string() + "; run `diag-assistant " + std::string(sub) + "` first");
      }
    }
    notes = std::make_unique<JsonlStore>(ws.store_dir() / "notes.jsonl");
    actions = std::make_unique<JsonlStore>(ws.store_dir() / "actions.jsonl");
    selections = std::make_unique<JsonlStore>(ws.store_dir() / "selections.jsonl");
  }

  void load() {
    std::lock_guard lock(load_mu);
    if (loaded) return;
    dataset = load_workspace_dataset(ws);
    models = load_models(ws.models_file());
    if (!models.complete()) throw MissingArtifact("models artifact lacks a modality; run `diag-assistant train --modality all` first");
    fusion = load_fusion(ws.fusion_file());
    if (fs::exists(ws.projections_file())) {
      projections_json = read_json(ws.projections_file());
      projections = ProjectionSet::from_json(projections_json);
    }
    background = shapley_background(dataset, config);
    cache_key = fnv1a_hex(read_file(ws.models_file().string()) + "|" +
                          std::to_string(config.explain.shapley_samples) + "|" + std::to_string(config.explain.seed) +
                          "|" + std::to_string(config.background_size) + "|" +
                          std::to_string(config.background_seed));
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
      const auto& r = dataset.records[i];
      index[r.card_id] = i;
      fused.push_back(fuse(modality_predictions(models, r), fusion.weights, r.mask));
    }
    build_summary();
    loaded = true;
  }

  void build_summary() {
    const auto s = cohort_summary(dataset);
    json counts;
    for (int c = 0; c < kNumClasses; ++c) counts[std::string(label_name(label_from_code(c)))] = s.class_counts[c];
    json available;
    for (int m = 0; m < kNumModalities; ++m) available[std::string(modality_name(static_cast<Modality>(m)))] = s.available[m];
    summary["cohort"] = {{"n", s.n},
                         {"class_counts", counts},
                         {"unlabeled", s.unlabeled},
                         {"age", {{"min", s.age_min}, {"max", s.age_max}, {"mean", s.age_mean}}},
                         {"gender", {{"male", s.male}, {"female", s.female}, {"ratio", s.gender_ratio}}},
                         {"available", available},
                         {"train_size", s.train_size},
                         {"val_size", s.val_size},
                         {"dropped", s.dropped},
                         {"provenance", dataset.provenance.empty() ? json(nullptr) : json::parse(dataset.provenance)}};
    if (fs::exists(ws.fusion_report())) {
      const auto report = read_json(ws.fusion_report());
      summary["metrics"] = report.at("unimodal");
      summary["fusion"] = json::object();
      for (const auto* key : {"decision_level", "feature_level"}) {
        if (report.contains(key)) summary["fusion"][key] = report[key];
      }
    } else {
      summary["metrics"] = json::object();
      summary["fusion"] = json::object();
    }
    summary["weights"] = weights_json(fusion.weights.w);
    summary["task"] =
        "Classify the lumbar disc of each patient as normal, herniated, or bulging from lab indicators, a clinical "
        "note, and a scan image; per-modality predictions are fused by learned weighted voting.";
  }

  // ---- helpers -------------------------------------------------------------

  std::size_t record_index(const std::string& card_id) const {
    const auto it = index.find(card_id);
    if (it == index.end()) throw ApiError(404, "unknown card_id '" + card_id + "'");
    return it->second;
  }

  int parse_class(const std::multimap<std::string, std::string>& query, std::size_t idx) const {
    const auto it = query.find("class");
    if (it == query.end() || it->second.empty()) return fused[idx].fused.argmax();
    try {
      return code(parse_label(it->second));
    } catch (const std::exception&) {
      throw ApiError(400, "invalid class '" + it->second + "'");
    }
  }

  AttributionBundle bundle(std::size_t idx, int cls) {
    const auto& rec = dataset.records[idx];
    const auto key = std::make_pair(rec.card_id, cls);
    std::promise<AttributionBundle> promise;
    std::shared_future<AttributionBundle> future;
    bool owner = false;
    {
      std::lock_guard lock(cache_mu);
      auto it = cache.find(key);
      if (it == cache.end()) {
        future = promise.get_future().share();
        cache.emplace(key, future);
        owner = true;
      } else {
        future = it->second;
      }
    }
    if (owner) {
      try {
        const auto path = ws.cache_dir() / cache_key /
                          (rec.card_id + "_" + std::string(label_name(label_from_code(cls))) + ".json");
        std::optional<AttributionBundle> b;
        if (fs::exists(path)) {
          try {
            b = AttributionBundle::from_json(read_json(path));
          } catch (const std::exception&) {
            b.reset();  // unreadable cache entry; recompute
          }
        }
        if (!b) {
          b = explain_patient(models, background, rec, cls, config.explain);
          write_json(path, b->to_json());
        }
        promise.set_value(*b);
      } catch (...) {
        promise.set_exception(std::current_exception());
        std::lock_guard lock(cache_mu);
        cache.erase(key);
      }
    }
    return future.get();
  }

  json log_action(const std::string& actor, const std::string& kind, const json& payload) {
    return actions->append([&](std::size_t seq) {
      return json{{"seq", seq},
                  {"timestamp", now_iso8601()},
                  {"actor", actor.empty() ? "anonymous" : actor},
                  {"kind", kind},
                  {"digest", fnv1a_hex(payload.dump())}};
    });
  }

  json fusion_json(const FusedPrediction& f) const {
    json per;
    for (int m = 0; m < kNumModalities; ++m) {
      per[std::string(modality_name(static_cast<Modality>(m)))] =
          f.present.present[m] ? dist_json(f.per_modality[m]) : json(nullptr);
    }
    return {{"per_modality", per},
            {"fused", dist_json(f.fused)},
            {"effective_weights", weights_json(f.effective_weights)},
            {"contribution_share", modality_map(f.contribution_share)},
            {"predicted_class", label_name(label_from_code(f.fused.argmax()))}};
  }

  json image_urls(const std::string& card_id, int cls) const {
    return {{"raw", "/api/image/" + card_id + "/raw"},
            {"cam", "/api/image/" + card_id + "/cam?class=" + std::string(label_name(label_from_code(cls)))}};
  }

  // ---- endpoints -----------------------------------------------------------

  json selection(const json& body) {
    const auto space_name_str = body_string(body, "space", true);
    EmbeddingSpace space;
    try {
      space = parse_space(space_name_str);
    } catch (const std::exception&) {
      throw ApiError(400, "invalid space '" + space_name_str + "'");
    }
    std::vector<std::size_t> members;
    if (body.contains("card_ids")) {
      if (!body["card_ids"].is_array()) throw ApiError(400, "card_ids must be an array");
      std::set<std::size_t> seen;
      for (const auto& id : body["card_ids"]) {
        if (!id.is_string()) throw ApiError(400, "card_ids must hold strings");
        const auto idx = record_index(id.get<std::string>());
        if (seen.insert(idx).second) members.push_back(idx);
      }
    } else if (body.contains("polygon")) {
      if (!projections) throw ApiError(503, "projections not computed; run `diag-assistant project`");
      if (!body["polygon"].is_array()) throw ApiError(400, "polygon must be an array of [x, y] pairs");
      std::vector<std::array<double, 2>> poly;
      for (const auto& p : body["polygon"]) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
          throw ApiError(400, "polygon must be an array of [x, y] pairs");
        }
        poly.push_back({p[0].get<double>(), p[1].get<double>()});
      }
      if (poly.size() < 3) throw ApiError(400, "polygon needs at least 3 vertices");
      const auto& coords = projections->space(space).coords;
      for (std::size_t i = 0; i < projections->card_ids.size(); ++i) {
        if (point_in_polygon(coords(i, 0), coords(i, 1), poly)) members.push_back(record_index(projections->card_ids[i]));
      }
    } else {
      throw ApiError(400, "selection needs card_ids or polygon");
    }
    if (members.empty()) throw ApiError(400, "selection is empty");

    const auto analytics = selection_analytics(members);
    json ids = json::array();
    for (auto i : members) ids.push_back(dataset.records[i].card_id);
    const auto actor = body_string(body, "actor", false);
    const auto stored = selections->append([&](std::size_t seq) {
      return json{{"selection_id", seq}, {"space", space_name(space)}, {"card_ids", ids}, {"created_at", now_iso8601()}};
    });
    log_action(actor, "select", body);
    return {{"selection", stored}, {"analytics", analytics}};
  }

  json selection_analytics(const std::vector<std::size_t>& members) const {
    const double n = static_cast<double>(members.size());
    std::array<std::size_t, kNumClasses> pred_counts{}, true_counts{};
    std::array<std::array<double, kNumClasses>, kNumModalities> mean{}, contribution{};
    std::array<std::size_t, kNumModalities> present{};
    std::array<double, kNumClasses> fused_mean{};
    json thumbs = {{"normal", json::array()}, {"herniated", json::array()}, {"bulging", json::array()}};
    for (auto i : members) {
      const auto& f = fused[i];
      const auto& rec = dataset.records[i];
      const int pred = f.fused.argmax();
      ++pred_counts[pred];
      if (rec.label) ++true_counts[code(*rec.label)];
      thumbs[std::string(label_name(label_from_code(pred)))].push_back(rec.card_id);
      for (int c = 0; c < kNumClasses; ++c) fused_mean[c] += f.fused[c] / n;
      for (int m = 0; m < kNumModalities; ++m) {
        if (!f.present.present[m]) continue;
        ++present[m];
        for (int c = 0; c < kNumClasses; ++c) {
          mean[m][c] += f.per_modality[m][c];
          contribution[m][c] += f.contribution_share[m][c];
        }
      }
    }
    for (int m = 0; m < kNumModalities; ++m) {
      for (int c = 0; c < kNumClasses; ++c) {
        mean[m][c] = present[m] ? mean[m][c] / static_cast<double>(present[m]) : 0.0;
        contribution[m][c] /= n;
      }
    }
    const auto fractions = [&](const std::array<std::size_t, kNumClasses>& counts) {
      std::array<double, kNumClasses> f{};
      for (int c = 0; c < kNumClasses; ++c) f[c] = static_cast<double>(counts[c]) / n;
      return f;
    };

    json indicators = json::array();
    const auto& names = tabular_feature_names();
    for (int k = 0; k < kNumTabularFeatures; ++k) {
      std::vector<double> values;
      for (auto i : members) values.push_back(dataset.records[i].indicators.features()[k]);
      double sum = 0.0;
      for (double v : values) sum += v;
      indicators.push_back({{"name", names[k]},
                            {"min", *std::min_element(values.begin(), values.end())},
                            {"max", *std::max_element(values.begin(), values.end())},
                            {"mean", sum / n},
                            {"values", values}});
    }

    std::map<std::string, std::pair<double, std::size_t>> token_sums;
    for (auto i : members) {
      const auto& rec = dataset.records[i];
      if (!rec.mask.has(Modality::Text)) continue;
      const auto attr = token_attribution(*models.text, rec.note.tokens(), fused[i].fused.argmax());
      for (const auto& t : attr.tokens) {
        auto& e = token_sums[t.token];
        e.first += t.weight;
        ++e.second;
      }
    }
    std::vector<std::tuple<std::string, double, std::size_t>> tokens;
    for (const auto& [tok, e] : token_sums) tokens.emplace_back(tok, e.first / static_cast<double>(e.second), e.second);
    std::stable_sort(tokens.begin(), tokens.end(),
                     [](const auto& a, const auto& b) { return std::get<1>(a) > std::get<1>(b); });
    json token_json = json::array();
    for (const auto& [tok, w, count] : tokens) token_json.push_back({{"token", tok}, {"mean_weight", w}, {"count", count}});

    json modality_mean = modality_map(mean);
    modality_mean["fused"] = fused_mean;
    return {{"size", members.size()},
            {"class_distribution",
             {{"predicted", {{"counts", pred_counts}, {"fractions", fractions(pred_counts)}}},
              {"true", {{"counts", true_counts}, {"fractions", fractions(true_counts)}}}}},
            {"modality_mean", modality_mean},
            {"contribution", modality_map(contribution)},
            {"indicators", indicators},
            {"tokens", token_json},
            {"thumbnails", thumbs}};
  }

  json patient(const std::string& card_id, const std::multimap<std::string, std::string>& query) {
    const auto idx = record_index(card_id);
    const int cls = parse_class(query, idx);
    const auto& rec = dataset.records[idx];
    const auto b = bundle(idx, cls);

    json indicators = json::array();
    const auto features = rec.indicators.features();
    const auto& names = tabular_feature_names();
    for (int k = 0; k < kNumTabularFeatures; ++k) {
      indicators.push_back({{"name", names[k]},
                            {"value", features[k]},
                            {"phi", b.shapley ? json(b.shapley->phi[k]) : json(nullptr)}});
    }
    json j{{"card_id", rec.card_id},
           {"label", rec.label ? json(label_name(*rec.label)) : json(nullptr)},
           {"split", dataset.split.at(rec.card_id) == SplitRole::Train ? "train" : "val"},
           {"target_class", label_name(label_from_code(cls))},
           {"indicators", indicators},
           {"images", image_urls(rec.card_id, cls)},
           {"fusion", fusion_json(fused[idx])},
           {"weights", weights_json(fusion.weights.w)}};
    if (b.shapley) {
      double sum = 0.0;
      for (double p : b.shapley->phi) sum += p;
      j["shapley"] = {{"base_value", b.shapley->base_value}, {"prediction", b.shapley->prediction}, {"phi_sum", sum}};
    }
    if (b.tokens) {
      json toks = json::array();
      for (const auto& t : b.tokens->tokens) toks.push_back({{"token", t.token}, {"position", t.position}, {"weight", t.weight}});
      j["tokens"] = toks;
      j["token_bias"] = b.tokens->bias;
      j["token_logit"] = b.tokens->logit;
    }
    return j;
  }

  json compare_column(std::size_t idx) {
    const auto& rec = dataset.records[idx];
    const int cls = fused[idx].fused.argmax();
    const auto b = bundle(idx, cls);
    json top_shap = nullptr;
    if (b.shapley) {
      const auto it = std::max_element(b.shapley->phi.begin(), b.shapley->phi.end());
      const auto k = static_cast<std::size_t>(it - b.shapley->phi.begin());
      top_shap = {{"name", tabular_feature_names()[k]}, {"phi", *it}, {"value", rec.indicators.features()[k]}};
    }
    json top_tokens = json::array();
    if (b.tokens) {
      std::vector<std::pair<std::string, double>> uniq;
      for (const auto& t : b.tokens->tokens) {
        if (std::none_of(uniq.begin(), uniq.end(), [&](const auto& u) { return u.first == t.token; })) {
          uniq.emplace_back(t.token, t.weight);
        }
      }
      std::stable_sort(uniq.begin(), uniq.end(), [](const auto& a, const auto& b2) { return a.second > b2.second; });
      for (std::size_t k = 0; k < std::min<std::size_t>(3, uniq.size()); ++k) {
        top_tokens.push_back({{"token", uniq[k].first}, {"weight", uniq[k].second}});
      }
    }
    return {{"card_id", rec.card_id},
            {"label", rec.label ? json(label_name(*rec.label)) : json(nullptr)},
            {"target_class", label_name(label_from_code(cls))},
            {"top_shap", top_shap},
            {"top_tokens", top_tokens},
            {"images", image_urls(rec.card_id, cls)},
            {"fusion", fusion_json(fused[idx])}};
  }

  json compare(const json& body) {
    const auto a = body_string(body, "card_a", true);
    const auto b = body_string(body, "card_b", true);
    if (a == b) throw ApiError(400, "card_a and card_b must differ");
    const auto ia = record_index(a), ib = record_index(b);
    json out{{"card_ids", {a, b}}, {"patients", {compare_column(ia), compare_column(ib)}}};
    log_action(body_string(body, "actor", false), "compare", body);
    return out;
  }

  json post_note(const json& body) {
    const auto text = body_string(body, "text", true);
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw ApiError(400, "note text is empty");
    const auto author = body_string(body, "author", false);
    json ids = json::array();
    if (body.contains("card_ids")) {
      if (!body["card_ids"].is_array()) throw ApiError(400, "card_ids must be an array");
      for (const auto& id : body["card_ids"]) {
        if (!id.is_string()) throw ApiError(400, "card_ids must hold strings");
        record_index(id.get<std::string>());
        ids.push_back(id);
      }
    }
    const auto note = notes->append([&](std::size_t seq) {
      return json{{"note_id", seq},
                  {"author", author.empty() ? "anonymous" : author},
                  {"card_ids", ids},
                  {"text", text},
                  {"timestamp", now_iso8601()}};
    });
    log_action(author, "note", body);
    return note;
  }

  json get_notes(const std::multimap<std::string, std::string>& query) const {
    const auto it = query.find("card_id");
    json out = json::array();
    for (const auto& n : notes->all()) {
      if (it != query.end()) {
        const auto& ids = n.at("card_ids");
        if (std::find(ids.begin(), ids.end(), json(it->second)) == ids.end()) continue;
      }
      out.push_back(n);
    }
    return {{"notes", out}};
  }

  json view(const json& body) {
    const auto id = body_string(body, "card_id", true);
    record_index(id);
    return log_action(body_string(body, "actor", false), "view", body);
  }

  ApiResponse image(const std::string& card_id, const std::string& kind,
                    const std::multimap<std::string, std::string>& query) {
    const auto idx = record_index(card_id);
    ApiResponse r;
    r.content_type = "image/png";
    if (kind == "raw") {
      r.body = png::encode_gray(kImageSize, kImageSize, png::quantize(dataset.records[idx].image.pixels));
    } else if (kind == "cam") {
      const auto b = bundle(idx, parse_class(query, idx));
      if (!b.saliency) throw ApiError(404, "no image modality for '" + card_id + "'");
      r.body = saliency_png(*b.saliency);
    } else {
      throw ApiError(404, "unknown image kind '" + kind + "'");
    }
    return r;
  }

  ApiResponse route(const std::string& method, const std::string& path,
                    const std::multimap<std::string, std::string>& query, const std::string& body) {
    static const std::regex patient_re("^/api/patient/([^/]+)$");
    static const std::regex image_re("^/api/image/([^/]+)/([^/]+)$");
    const auto ok = [](const json& j) { return ApiResponse{200, "application/json", j.dump()}; };
    std::smatch m;

    if (!path.starts_with("/api/")) throw ApiError(404, "not found");
    if (!loaded) {
      std::lock_guard lock(error_mu);
      if (!load_error.empty()) throw ApiError(500, "artifact loading failed: " + load_error);
      throw ApiError(503, "artifacts are still loading");
    }
    if (method == "GET") {
      if (path == "/api/summary") return ok(summary);
      if (path == "/api/projections") {
        if (!projections) throw ApiError(503, "projections not computed; run `diag-assistant project`");
        return ok(projections_json);
      }
      if (std::regex_match(path, m, patient_re)) return ok(patient(m[1], query));
      if (std::regex_match(path, m, image_re)) return image(m[1], m[2], query);
      if (path == "/api/notes") return ok(get_notes(query));
      if (path == "/api/log") return ok(json{{"entries", actions->all()}});
      if (path == "/api/selections") return ok(json{{"selections", selections->all()}});
    } else if (method == "POST") {
      if (path == "/api/selection") return ok(selection(parse_body(body)));
      if (path == "/api/compare") return ok(compare(parse_body(body)));
      if (path == "/api/notes") return ok(post_note(parse_body(body)));
      if (path == "/api/view") return ok(view(parse_body(body)));
    }
    throw ApiError(404, "no route for " + method + " " + path);
  }
};

DiagnosticService::DiagnosticService(Config config) : impl_(std::make_unique<Impl>(std::move(config))) {}

DiagnosticService::~DiagnosticService() {
  stop();
  if (impl_->loader_thread.joinable()) impl_->loader_thread.join();
}

void DiagnosticService::load() { impl_->load(); }

bool DiagnosticService::ready() const { return impl_->loaded; }

ApiResponse DiagnosticService::handle(const std::string& method, const std::string& path,
                                      const std::multimap<std::string, std::string>& query,
                                      const std::string& body) {
  try {
    return impl_->route(method, path, query, body);
  } catch (const ApiError& e) {
    return {e.status, "application/json", json{{"error", e.what()}}.dump()};
  } catch (const std::exception& e) {
    return {500, "application/json", json{{"error", e.what()}}.dump()};
  }
}

int DiagnosticService::start(const std::string& host, int port) {
  auto& s = impl_->server;
  const int threads = impl_->config.threads;
  s.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  const auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    std::multimap<std::string, std::string> query(req.params.begin(), req.params.end());
    const auto r = handle(req.method, req.path, query, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  s.Get(".*", dispatch);
  s.Post(".*", dispatch);
  int bound = port;
  if (port == 0) {
    bound = s.bind_to_any_port(host);
  } else if (!s.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->loader_thread = std::thread([this] {
    try {
      impl_->load();
    } catch (const std::exception& e) {
      std::lock_guard lock(impl_->error_mu);
      impl_->load_error = e.what();
    }
  });
  return bound;
}

void DiagnosticService::wait() {
  std::unique_lock lock(impl_->stop_mu);
  impl_->stop_cv.wait(lock, [this] { return impl_->stopped; });
}

void DiagnosticService::stop() {
  {
    std::lock_guard lock(impl_->stop_mu);
    if (impl_->stopped) return;
    impl_->stopped = true;
  }
  impl_->server.stop();
  if (impl_->server_thread.joinable()) impl_->server_thread.join();
  impl_->stop_cv.notify_all();
}

}  // namespace diag
