#include "diag/models.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace diag {
namespace {

int as_int(const std::string& name, double v) {
  if (v != std::floor(v)) throw std::invalid_argument("hyperparameter '" + name + "' must be an integer");
  return static_cast<int>(v);
}

void apply_sgd(SgdConfig& s, const std::string& name, double v, bool& handled) {
  handled = true;
  if (name == "learning_rate") {
    s.learning_rate = v;
  } else if (name == "momentum") {
    s.momentum = v;
  } else if (name == "batch_size") {
    s.batch_size = as_int(name, v);
  } else if (name == "epochs") {
    s.epochs = as_int(name, v);
  } else if (name == "patience") {
    s.patience = as_int(name, v);
  } else if (name == "holdout") {
    s.holdout = v;
  } else if (name == "seed") {
    s.seed = static_cast<std::uint64_t>(as_int(name, v));
  } else {
    handled = false;
  }
}

[[noreturn]] void unknown(const std::string& model, const std::string& name) {
  throw std::invalid_argument("unknown " + model + " hyperparameter '" + name + "'");
}

}  // namespace

void apply_hyperparams(GbdtParams& p, const HyperParams& hp) {
  for (const auto& [name, v] : hp) {
    if (name == "tree_count") {
      p.tree_count = as_int(name, v);
    } else if (name == "max_depth") {
      p.max_depth = as_int(name, v);
    } else if (name == "learning_rate") {
      p.learning_rate = v;
    } else if (name == "min_samples_leaf") {
      p.min_samples_leaf = as_int(name, v);
    } else {
      unknown("indicator", name);
    }
  }
}

void apply_hyperparams(TextParams& p, const HyperParams& hp) {
  for (const auto& [name, v] : hp) {
    bool handled = false;
    apply_sgd(p.sgd, name, v, handled);
    if (handled) continue;
    if (name == "dim") {
      p.dim = as_int(name, v);
    } else if (name == "min_count") {
      p.min_count = as_int(name, v);
    } else if (name == "init_scale") {
      p.init_scale = v;
    } else {
      unknown("text", name);
    }
  }
}

void apply_hyperparams(ImageParams& p, const HyperParams& hp) {
  for (const auto& [name, v] : hp) {
    bool handled = false;
    apply_sgd(p.sgd, name, v, handled);
    if (handled) continue;
    if (name == "conv1") {
      p.arch.conv1 = as_int(name, v);
    } else if (name == "conv2") {
      p.arch.conv2 = as_int(name, v);
    } else if (name == "hidden") {
      p.arch.hidden = as_int(name, v);
    } else {
      unknown("image", name);
    }
  }
}

std::size_t HyperparamGrid::size() const {
  std::size_t n = 1;
  for (const auto& [_, values] : axes) n *= values.size();
  return n;
}

std::vector<HyperParams> HyperparamGrid::points() const {
  if (axes.empty()) throw std::invalid_argument("hyperparameter grid has no axes");
  for (const auto& [name, values] : axes) {
    if (values.empty()) throw std::invalid_argument("hyperparameter grid axis '" + name + "' is empty");
  }
  std::vector<HyperParams> out;
  std::vector<std::size_t> pos(axes.size(), 0);
  for (std::size_t n = 0; n < size(); ++n) {
    HyperParams p;
    for (std::size_t a = 0; a < axes.size(); ++a) p[axes[a].first] = axes[a].second[pos[a]];
    out.push_back(std::move(p));
    for (std::size_t a = axes.size(); a-- > 0;) {
      if (++pos[a] < axes[a].second.size()) break;
      pos[a] = 0;
    }
  }
  return out;
}

std::string hyperparams_to_string(const HyperParams& hp) {
  std::ostringstream os;
  os << '{';
  bool first = true;
  for (const auto& [k, v] : hp) {
    os << (first ? "" : ", ") << k << '=' << v;
    first = false;
  }
  os << '}';
  return os.str();
}

ClassDistribution TrainedModels::predict(Modality m, const PatientRecord& record) const {
  switch (m) {
    case Modality::Indicator:
      if (!indicator) throw std::logic_error("indicator model not trained");
      return indicator->predict_proba(record.indicators);
    case Modality::Text:
      if (!text) throw std::logic_error("text model not trained");
      return text->predict_proba(record.note);
    case Modality::Image:
      if (!image) throw std::logic_error("image model not trained");
      return image->predict_proba(record.image);
  }
  throw std::invalid_argument("unknown modality");
}

TrainedModels train_models(const CohortDataset& train, const ModelConfig& config, const std::vector<Modality>& which) {
  TrainedModels out;
  for (auto m : which) {
    switch (m) {
      case Modality::Indicator: out.indicator = IndicatorModel::train(train, config.indicator); break;
      case Modality::Text: out.text = TextModel::train(train, config.text); break;
      case Modality::Image: out.image = ImageModel::train(train, config.image); break;
    }
  }
  return out;
}

GridSearchResult grid_search(Modality modality, const HyperparamGrid& grid, const CohortDataset& dataset, int k,
                             std::uint64_t seed, const ModelConfig& base) {
  const auto points = grid.points();
  const auto folds = kfold(dataset, k, seed);
  GridSearchResult result;
  double best_score = -1.0;
  for (const auto& point : points) {
    ModelConfig cfg = base;
    GridPointResult row;
    row.point = point;
    try {
      switch (modality) {
        case Modality::Indicator: apply_hyperparams(cfg.indicator, point); break;
        case Modality::Text: apply_hyperparams(cfg.text, point); break;
        case Modality::Image: apply_hyperparams(cfg.image, point); break;
      }
      for (const auto& fold : folds) {
        const auto train = subset(dataset, fold.train);
        const auto val = subset(dataset, fold.val);
        const auto models = train_models(train, cfg, {modality});
        const auto metrics = evaluate([&](const PatientRecord& r) { return models.predict(modality, r); }, val);
        row.fold_f1.push_back(metrics.macro_f1);
      }
    } catch (const DivergenceError&) {
      row.diverged = true;
      row.fold_f1.assign(folds.size(), 0.0);
    } catch (const std::exception& e) {
      throw std::runtime_error("grid point " + hyperparams_to_string(point) + ": " + e.what());
    }
    const double n = static_cast<double>(row.fold_f1.size());
    row.mean_f1 = std::accumulate(row.fold_f1.begin(), row.fold_f1.end(), 0.0) / n;
    double ss = 0.0;
    for (double f : row.fold_f1) ss += (f - row.mean_f1) * (f - row.mean_f1);
    row.stdev_f1 = n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    if (row.mean_f1 > best_score) {
      best_score = row.mean_f1;
      result.best = point;
    }
    result.report.push_back(std::move(row));
  }
  return result;
}

}  // namespace diag
