#include "diag/pipeline.hpp"

#include <fstream>
#include <sstream>

#include "diag/serialize.hpp"

namespace diag {
namespace fs = std::filesystem;
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

long long to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != static_cast<double>(static_cast<long long>(d))) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  return static_cast<long long>(d);
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(to_double(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

void require_file(const fs::path& path, const std::string& subcommand) {
  if (!fs::exists(path)) {
    throw MissingArtifact("missing " + path.string() + "; run `diag-assistant " + subcommand + "` first");
  }
}

}  // namespace

Config Config::parse(const std::string& text, const fs::path& workdir) {
  Config c;
  c.workdir = workdir;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = unquote(trim(line.substr(eq + 1)));
    try {
      if (key == "workdir") {
        const fs::path p(value);
        c.workdir = p.is_absolute() ? p : workdir / p;
      } else if (key == "seed") {
        c.synthetic.seed = static_cast<std::uint64_t>(to_int(key, value));
      } else if (key == "n_patients") {
        c.synthetic.n_patients = static_cast<std::size_t>(to_int(key, value));
      } else if (key == "class_priors") {
        const auto p = to_list(key, value);
        if (p.size() != kNumClasses) throw ConfigError("config key 'class_priors': expected 3 values");
        std::copy(p.begin(), p.end(), c.synthetic.class_priors.begin());
      } else if (key == "noise_level") {
        c.synthetic.noise_level = to_double(key, value);
      } else if (key == "complementarity") {
        c.synthetic.complementarity = to_double(key, value);
      } else if (key == "split_ratio") {
        c.split_ratio = to_double(key, value);
      } else if (key == "split_seed") {
        c.split_seed = static_cast<std::uint64_t>(to_int(key, value));
      } else if (starts_with(key, "indicator.")) {
        apply_hyperparams(c.models.indicator, {{key.substr(10), to_double(key, value)}});
      } else if (starts_with(key, "text.")) {
        apply_hyperparams(c.models.text, {{key.substr(5), to_double(key, value)}});
      } else if (starts_with(key, "image.")) {
        apply_hyperparams(c.models.image, {{key.substr(6), to_double(key, value)}});
      } else if (starts_with(key, "grid.")) {
        const auto rest = key.substr(5);
        const auto dot = rest.find('.');
        if (dot == std::string::npos) throw ConfigError("config key '" + key + "': expected grid.<modality>.<name>");
        const auto modality = parse_modality(rest.substr(0, dot));
        c.grids[modality].axes.emplace_back(rest.substr(dot + 1), to_list(key, value));
      } else if (key == "cv_folds") {
        c.cv_folds = static_cast<int>(to_int(key, value));
      } else if (key == "cv_seed") {
        c.cv_seed = static_cast<std::uint64_t>(to_int(key, value));
      } else if (key == "fusion.iterations") {
        c.weight_learning.iterations = static_cast<int>(to_int(key, value));
      } else if (key == "fusion.step") {
        c.weight_learning.step = to_double(key, value);
      } else if (key == "baseline.iterations") {
        c.baseline.iterations = static_cast<int>(to_int(key, value));
      } else if (key == "baseline.step_scale") {
        c.baseline.step_scale = to_double(key, value);
      } else if (key == "baseline.l2") {
        c.baseline.l2 = to_double(key, value);
      } else if (key == "tsne.perplexity") {
        c.tsne.perplexity = to_double(key, value);
      } else if (key == "tsne.iterations") {
        c.tsne.iterations = static_cast<int>(to_int(key, value));
      } else if (key == "tsne.learning_rate") {
        c.tsne.learning_rate = to_double(key, value);
      } else if (key == "tsne.seed") {
        c.tsne.seed = static_cast<std::uint64_t>(to_int(key, value));
      } else if (key == "explain.shapley_samples") {
        c.explain.shapley_samples = static_cast<std::size_t>(to_int(key, value));
      } else if (key == "explain.seed") {
        c.explain.seed = static_cast<std::uint64_t>(to_int(key, value));
      } else if (key == "background_size") {
        c.background_size = static_cast<std::size_t>(to_int(key, value));
      } else if (key == "background_seed") {
        c.background_seed = static_cast<std::uint64_t>(to_int(key, value));
      } else if (key == "host") {
        c.host = value;
      } else if (key == "port") {
        c.port = static_cast<int>(to_int(key, value));
      } else if (key == "threads") {
        c.threads = static_cast<int>(to_int(key, value));
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  try {
    c.synthetic.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) throw ConfigError("split_ratio must lie in (0,1)");
  if (c.port < 0 || c.port > 65535) throw ConfigError("port out of range");
  if (c.cv_folds < 2) throw ConfigError("cv_folds must be at least 2");
  if (c.threads < 1) throw ConfigError("threads must be positive");
  return c;
}

Config Config::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

CohortPaths Workspace::cohort() const {
  return {(root / "data" / "indicators.csv").string(), (root / "data" / "notes.jsonl").string(),
          (root / "data" / "images").string()};
}

fs::path Workspace::grid_report(Modality m) const {
  return root / "reports" / ("grid-" + std::string(modality_name(m)) + ".json");
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path.string(), j.dump(2) + "\n");
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path.string()));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed JSON: " + e.what());
  }
}

void save_models(const TrainedModels& models, const fs::path& path) {
  ArtifactContainer c;
  if (models.indicator) {
    ByteWriter w;
    models.indicator->save(w);
    c.put("indicator", w.take());
  }
  if (models.text) {
    ByteWriter w;
    models.text->save(w);
    c.put("text", w.take());
  }
  if (models.image) {
    ByteWriter w;
    models.image->save(w);
    c.put("image", w.take());
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  c.save(path.string());
}

TrainedModels load_models(const fs::path& path) {
  const auto c = ArtifactContainer::load(path.string());
  TrainedModels m;
  if (c.has("indicator")) {
    ByteReader r(c.get("indicator"));
    m.indicator = IndicatorModel::load(r);
  }
  if (c.has("text")) {
    ByteReader r(c.get("text"));
    m.text = TextModel::load(r);
  }
  if (c.has("image")) {
    ByteReader r(c.get("image"));
    m.image = ImageModel::load(r);
  }
  return m;
}

void save_fusion(const FusionArtifact& artifact, const fs::path& path) {
  ArtifactContainer c;
  ByteWriter w;
  w.f64s(artifact.weights.w);
  c.put("weights", w.take());
  ByteWriter f;
  artifact.feature_level.save(f);
  c.put("feature_level", f.take());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  c.save(path.string());
}

FusionArtifact load_fusion(const fs::path& path) {
  const auto c = ArtifactContainer::load(path.string());
  FusionArtifact a;
  ByteReader w(c.get("weights"));
  const auto v = w.f64s();
  if (v.size() != kNumModalities) throw std::runtime_error("corrupt fusion weights");
  a.weights = ModalityWeights({v[0], v[1], v[2]});
  ByteReader f(c.get("feature_level"));
  a.feature_level = FeatureLevelClassifier::load(f);
  return a;
}

CohortDataset load_workspace_dataset(const Workspace& ws) {
  require_file(ws.cohort().indicators_csv, "generate-data");
  require_file(ws.split_file(), "generate-data");
  auto ds = load_cohort(ws.cohort());
  const auto split = read_json(ws.split_file());
  for (const auto& [role, key] : {std::pair{SplitRole::Train, "train"}, std::pair{SplitRole::Val, "val"}}) {
    for (const auto& id : split.at(key)) ds.split[id.get<std::string>()] = role;
  }
  for (const auto& r : ds.records) {
    if (!ds.split.count(r.card_id)) throw std::runtime_error("split file does not cover '" + r.card_id + "'");
  }
  if (fs::exists(ws.provenance_file())) ds.provenance = read_json(ws.provenance_file()).dump();
  return ds;
}

Matrix shapley_background(const CohortDataset& dataset, const Config& config) {
  const auto split = current_split(dataset);
  return sample_background(tabular_matrix(subset(dataset, split.train)), config.background_size,
                           config.background_seed);
}

void run_generate(const Config& config) {
  const Workspace ws(config.workdir);
  auto ds = generate_synthetic_cohort(config.synthetic);
  const auto split = split_dataset(ds, config.split_ratio, config.split_seed);
  apply_split(ds, split);
  save_cohort(ds, ws.cohort());
  nlohmann::json sj{{"ratio", config.split_ratio}, {"seed", config.split_seed}};
  sj["train"] = nlohmann::json::array();
  sj["val"] = nlohmann::json::array();
  for (auto i : split.train) sj["train"].push_back(ds.records[i].card_id);
  for (auto i : split.val) sj["val"].push_back(ds.records[i].card_id);
  write_json(ws.split_file(), sj);
  write_json(ws.provenance_file(), nlohmann::json::parse(ds.provenance));
}

void run_train(const Config& config, const std::vector<Modality>& modalities) {
  const Workspace ws(config.workdir);
  const auto ds = load_workspace_dataset(ws);
  const auto split = current_split(ds);
  const auto train = subset(ds, split.train);
  const auto val = subset(ds, split.val);

  ModelConfig mc = config.models;
  for (auto m : modalities) {
    const auto grid = config.grids.find(m);
    if (grid == config.grids.end()) continue;
    const auto result = grid_search(m, grid->second, train, config.cv_folds, config.cv_seed, mc);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : result.report) {
      rows.push_back({{"point", row.point},
                      {"fold_f1", row.fold_f1},
                      {"mean_f1", row.mean_f1},
                      {"stdev_f1", row.stdev_f1},
                      {"diverged", row.diverged}});
    }
    write_json(ws.grid_report(m), {{"modality", modality_name(m)}, {"k", config.cv_folds}, {"best", result.best},
                                   {"report", rows}});
    switch (m) {
      case Modality::Indicator: apply_hyperparams(mc.indicator, result.best); break;
      case Modality::Text: apply_hyperparams(mc.text, result.best); break;
      case Modality::Image: apply_hyperparams(mc.image, result.best); break;
    }
  }

  TrainedModels models = fs::exists(ws.models_file()) ? load_models(ws.models_file()) : TrainedModels{};
  const auto fresh = train_models(train, mc, modalities);
  if (fresh.indicator) models.indicator = fresh.indicator;
  if (fresh.text) models.text = fresh.text;
  if (fresh.image) models.image = fresh.image;
  save_models(models, ws.models_file());

  nlohmann::json report;
  for (int m = 0; m < kNumModalities; ++m) {
    const auto mod = static_cast<Modality>(m);
    const bool have = (mod == Modality::Indicator && models.indicator) || (mod == Modality::Text && models.text) ||
                      (mod == Modality::Image && models.image);
    if (!have) continue;
    report[std::string(modality_name(mod))] =
        metrics_json(evaluate([&](const PatientRecord& r) { return models.predict(mod, r); }, val));
  }
  report["val_size"] = val.records.size();
  write_json(ws.metrics_report(), report);
}

FusionComparisonReport run_evaluate(const Config& config, FusionMode mode) {
  const Workspace ws(config.workdir);
  const auto ds = load_workspace_dataset(ws);
  require_file(ws.models_file(), "train --modality all");
  const auto models = load_models(ws.models_file());
  if (!models.complete()) {
    throw MissingArtifact("models artifact lacks a modality; run `diag-assistant train --modality all` first");
  }
  const auto report = compare_fusion_strategies(ds, models, config.baseline, config.weight_learning);

  const auto split = current_split(ds);
  const auto train = subset(ds, split.train);
  FusionArtifact artifact{report.weights,
                          FeatureLevelClassifier::train(concatenated_embeddings(models, train), train.labels(),
                                                        config.baseline)};
  save_fusion(artifact, ws.fusion_file());

  auto j = report.to_json();
  if (mode == FusionMode::Decision) j.erase("feature_level");
  if (mode == FusionMode::Feature) j.erase("decision_level");
  j["mode"] = mode == FusionMode::Decision ? "decision" : mode == FusionMode::Feature ? "feature" : "both";
  write_json(ws.fusion_report(), j);
  return report;
}

ProjectionSet run_project(const Config& config) {
  const Workspace ws(config.workdir);
  const auto ds = load_workspace_dataset(ws);
  require_file(ws.models_file(), "train --modality all");
  require_file(ws.fusion_file(), "evaluate");
  const auto models = load_models(ws.models_file());
  const auto fusion = load_fusion(ws.fusion_file());
  const auto projections = project_all(extract_embeddings(models, fusion.weights, ds), config.tsne);
  write_json(ws.projections_file(), projections.to_json());
  return projections;
}

AttributionBundle run_explain(const Config& config, const std::string& card_id, std::optional<int> target_class) {
  const Workspace ws(config.workdir);
  const auto ds = load_workspace_dataset(ws);
  require_file(ws.models_file(), "train --modality all");
  require_file(ws.fusion_file(), "evaluate");
  const auto models = load_models(ws.models_file());
  const auto fusion = load_fusion(ws.fusion_file());
  const auto& record = ds.find(card_id);
  const int cls = target_class ? *target_class
                               : fuse(modality_predictions(models, record), fusion.weights, record.mask).fused.argmax();
  const auto bundle = explain_patient(models, shapley_background(ds, config), record, cls, config.explain);
  const auto stem = card_id + "_" + std::string(label_name(label_from_code(cls)));
  write_json(ws.explain_dir() / (stem + ".json"), bundle.to_json());
  if (bundle.saliency) write_file((ws.explain_dir() / (stem + ".png")).string(), saliency_png(*bundle.saliency));
  return bundle;
}

}  // namespace diag
