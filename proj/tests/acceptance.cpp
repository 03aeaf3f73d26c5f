// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"

#include "diag/explain.hpp"
#include "diag/gbdt.hpp"
#include "diag/service.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace diag;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!ok) detail << " [failed: " << what << "]";
  }
};

int failures = 0;

void report(const std::string& name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << " (" << o.detail.str() << ")" << std::endl;
}

using Clock = std::chrono::steady_clock;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DIAG_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Shared state: the default pipeline run through the CLI in a scratch directory.
struct Run {
  testing::TempDir dir{"acceptance"};
  std::filesystem::path workdir = dir.path() / "ws";
  bool ok = false;
  double pipeline_seconds = 0;
  double project_seconds = 0;
};

Run& run() {
  static Run r;
  return r;
}

std::string workdir_arg() { return "--workdir " + run().workdir.string(); }

// ---------------------------------------------------------------------------

void shapley_oracle(Outcome& o) {
  const auto ds = generate_synthetic_cohort({});
  Matrix x(ds.records.size(), 8);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    for (std::size_t k = 0; k < 8; ++k) x(i, k) = ds.records[i].indicators.values[k];
  }
  GbdtParams p;
  p.tree_count = 30;
  const auto model = GradientBoostedClassifier::fit(x, ds.labels(), p);
  const auto background = sample_background(x, 100, 0);
  const ModelFn f = [&model](std::span<const double> z) { return model.predict(z).values(); };

  double max_err = 0, max_eff = 0, sampled_seconds = 0;
  for (std::size_t row : {7u, 100u, 400u}) {
    const std::vector<double> xr(x.row(row).begin(), x.row(row).end());
    for (int cls = 0; cls < 3; ++cls) {
      const auto exact = exact_shapley(f, xr, background, cls);
      const auto t0 = Clock::now();
      const auto est = sampled_shapley(f, xr, background, cls, 2000, 0);
      sampled_seconds = std::max(sampled_seconds, testing::seconds_since(t0));
      double sum = est.base_value;
      for (std::size_t k = 0; k < 8; ++k) {
        max_err = std::max(max_err, std::abs(est.phi[k] - exact.phi[k]));
        sum += est.phi[k];
      }
      max_eff = std::max(max_eff, std::abs(sum - f(xr)[cls]));
    }
  }
  o.detail << "max|phi-exact|=" << max_err << " <= 0.05, efficiency=" << max_eff << " <= 1e-9, slowest run "
           << sampled_seconds << "s < 10s";
  o.require(max_err <= 0.05, "error");
  o.require(max_eff <= 1e-9, "efficiency");
  o.require(sampled_seconds < 10.0, "runtime");
}

void shapley_axioms(Outcome& o) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(0.0, 1.0);
  double sym = 0, null = 0;
  for (int trial = 0; trial < 20; ++trial) {
    // Features 0 and 1 are interchangeable; feature 3 is ignored.
    Matrix bg(30, 5);
    for (std::size_t i = 0; i < 30; ++i) {
      const double shared = z(rng);
      bg(i, 0) = shared, bg(i, 1) = shared;
      for (std::size_t k = 2; k < 5; ++k) bg(i, k) = z(rng);
    }
    const double a = z(rng), b = z(rng), c = z(rng);
    const ModelFn f = [=](std::span<const double> v) {
      return std::array<double, 3>{a * (v[0] + v[1]) + b * v[2] + c * v[4], 0.0, 0.0};
    };
    const double same = z(rng);
    const std::vector<double> x{same, same, z(rng), z(rng), z(rng)};
    const auto r = exact_shapley(f, x, bg, 0);
    sym = std::max(sym, std::abs(r.phi[0] - r.phi[1]));
    null = std::max(null, std::abs(r.phi[3]));
  }
  o.detail << "max|phi0-phi1|=" << sym << ", max|phi_null|=" << null << ", both <= 1e-9";
  o.require(sym <= 1e-9, "symmetry");
  o.require(null <= 1e-9, "null player");
}

void gradients(Outcome& o) {
  const auto t0 = Clock::now();
  double cnn = 0, text = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    cnn = std::max(cnn, oracle::image_gradients(seed).max_rel_error);
    text = std::max(text, oracle::text_gradients(seed).max_rel_error);
  }
  const double secs = testing::seconds_since(t0);
  o.detail << "cnn rel err " << cnn << ", text rel err " << text << " (<= 1e-4), " << secs << "s < 30s";
  o.require(cnn <= 1e-4, "cnn");
  o.require(text <= 1e-4, "text");
  o.require(secs < 30.0, "runtime");
}

void grad_cam_localization(Outcome& o) {
  if (!run().ok) throw std::runtime_error("pipeline run failed");
  const auto models = load_models(Workspace(run().workdir).models_file());
  std::mt19937_64 rng(2024);
  double guided = 0, plain = 0;
  for (int k = 0; k < 50; ++k) {
    ScanImage img;
    const auto box = render_scan(img, DiagnosisLabel::Herniated, k % 4, 0.0, rng).dilated(2.0);
    const auto mass = [&](CamMode mode) {
      const auto m = grad_cam(*models.image, img.pixels, code(DiagnosisLabel::Herniated), mode);
      double in = 0, total = 0;
      for (int r = 0; r < kImageSize; ++r) {
        for (int c = 0; c < kImageSize; ++c) {
          total += m.at(r, c);
          if (box.contains(r, c)) in += m.at(r, c);
        }
      }
      return total > 0 ? in / total : 0.0;
    };
    guided += mass(CamMode::GuidedGradCam) / 50;
    plain += mass(CamMode::GradCam) / 50;
  }
  o.detail << "guided mass " << guided << " >= 0.7 (plain " << plain << ")";
  o.require(guided >= 0.7, "mass");
}

Matrix blob_fixture(std::vector<int>& labels) {
  const std::array<std::array<double, 2>, 3> centres{{{0.0, 0.0}, {10.0, 0.0}, {5.0, 5.0 * std::sqrt(3.0)}}};
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z(0.0, 0.1);
  Matrix x(60, 5);
  for (std::size_t i = 0; i < 60; ++i) {
    const int c = static_cast<int>(i / 20);
    for (std::size_t k = 0; k < 5; ++k) x(i, k) = (k < 2 ? centres[c][k] : 0.0) + z(rng);
    labels.push_back(c);
  }
  return x;
}

void tsne_criteria(Outcome& o) {
  if (!run().ok) throw std::runtime_error("pipeline run failed");
  const Workspace ws(run().workdir);
  const auto ds = load_workspace_dataset(ws);
  const auto models = load_models(ws.models_file());
  const auto fusion = load_fusion(ws.fusion_file());
  const auto emb = extract_embeddings(models, fusion.weights, ds);
  const double target = std::log(TsneParams{}.perplexity);
  double worst = 0;
  for (int s = 0; s < kNumSpaces; ++s) {
    const auto p = conditional_affinities(emb.spaces[s], TsneParams{}.perplexity, nullptr);
    for (std::size_t i = 0; i < p.rows; ++i) {
      double h = 0;
      for (std::size_t j = 0; j < p.cols; ++j) {
        if (p(i, j) > 0) h -= p(i, j) * std::log(p(i, j));
      }
      worst = std::max(worst, std::abs(h - target));
    }
  }

  const auto proj = ProjectionSet::from_json(read_json(ws.projections_file()));
  bool kl_ok = true;
  std::ostringstream kls;
  for (int s = 0; s < kNumSpaces; ++s) {
    double kl300 = NAN, kl1000 = NAN;
    for (auto [it, kl] : proj.spaces[s].kl_trace) {
      if (it == 300) kl300 = kl;
      if (it == 1000) kl1000 = kl;
    }
    kl_ok = kl_ok && kl1000 <= kl300;
    kls << space_name(static_cast<EmbeddingSpace>(s)) << " " << kl300 << "->" << kl1000 << " ";
  }

  std::vector<int> labels;
  const auto blobs = blob_fixture(labels);
  TsneParams bp;
  bp.perplexity = 15.0;
  const double trust = oracle::trustworthiness(blobs, tsne(blobs, bp).coords, 5);

  o.detail << "entropy err " << worst << " <= 1e-5, KL(300->1000) " << kls.str() << ", blob trust " << trust
           << " >= 0.9, n=" << ds.records.size() << " all 4 spaces " << run().project_seconds << "s < 60s";
  o.require(worst <= 1e-5, "entropy");
  o.require(kl_ok, "KL");
  o.require(trust >= 0.9, "trustworthiness");
  o.require(run().project_seconds < 60.0, "runtime");
}

void fusion_math(Outcome& o) {
  std::mt19937_64 rng(1);
  std::gamma_distribution<double> g(0.7, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto dist = [&] {
    std::array<double, 3> p{g(rng) + 1e-12, g(rng) + 1e-12, g(rng) + 1e-12};
    const double s = p[0] + p[1] + p[2];
    for (auto& v : p) v /= s;
    p[2] = std::max(0.0, 1.0 - p[0] - p[1]);
    return ClassDistribution(p);
  };
  double max_err = 0, max_share = 0;
  bool bitwise = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const ModalityPredictions p{dist(), dist(), dist()};
    std::array<double, 3> w{u(rng), u(rng), u(rng)};
    const double s = w[0] + w[1] + w[2];
    for (auto& v : w) v /= s;
    ModalityMask mask;
    if (trial % 2 == 1) mask.present[rng() % 3] = false;

    const auto got = fuse(p, ModalityWeights(w), mask);
    const auto ref = oracle::fuse({p[0].values(), p[1].values(), p[2].values()}, w, mask.present);
    for (int c = 0; c < 3; ++c) {
      max_err = std::max(max_err, std::abs(got.fused[c] - ref.fused[c]));
      double share = 0;
      for (int m = 0; m < 3; ++m) {
        max_err = std::max(max_err, std::abs(got.contribution_share[m][c] - ref.share[m][c]));
        share += got.contribution_share[m][c];
      }
      if (got.fused[c] > 0) max_share = std::max(max_share, std::abs(share - 1.0));
    }

    if (!mask.present[0] || !mask.present[1] || !mask.present[2]) {
      auto zeroed = w;
      double total = 0;
      for (int m = 0; m < 3; ++m) {
        if (!mask.present[m]) zeroed[m] = 0.0;
        total += zeroed[m];
      }
      for (auto& v : zeroed) v /= total;
      const auto direct = fuse(p, ModalityWeights(zeroed));
      for (int c = 0; c < 3; ++c) bitwise = bitwise && got.fused[c] == direct.fused[c];
    }
  }
  o.detail << "max err " << max_err << " <= 1e-12, share sum err " << max_share << ", mask vs zero-weight "
           << (bitwise ? "bitwise equal" : "differ");
  o.require(max_err <= 1e-12, "oracle");
  o.require(max_share <= 1e-12, "shares");
  o.require(bitwise, "bitwise");
}

void weight_learning(Outcome& o) {
  if (!run().ok) throw std::runtime_error("pipeline run failed");
  const auto t0 = Clock::now();
  const Workspace ws(run().workdir);
  const auto ds = load_workspace_dataset(ws);
  const auto models = load_models(ws.models_file());
  std::vector<ModalityPredictions> preds;
  std::vector<int> labels;
  for (const auto& r : ds.records) {
    if (ds.split.at(r.card_id) != SplitRole::Val) continue;
    preds.push_back(modality_predictions(models, r));
    labels.push_back(code(*r.label));
  }
  // The text column is replaced by other patients' text predictions: same marginals, no signal.
  std::vector<std::size_t> perm(preds.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(42));
  auto noisy = preds;
  for (std::size_t i = 0; i < preds.size(); ++i) noisy[i][1] = preds[perm[i]][1];

  const auto learned = learn_weights(noisy, labels);
  const double secs = testing::seconds_since(t0);
  const auto grid = oracle::simplex_grid(noisy, labels, 100);
  const auto& w = learned.weights.w;
  o.detail << "weights (" << w[0] << ", " << w[1] << ", " << w[2] << "), noise weight " << w[1]
           << " <= 0.15, loss " << learned.final_loss << " vs grid " << grid.loss << " (|diff| "
           << std::abs(learned.final_loss - grid.loss) << " <= 1e-3), " << secs << "s < 60s";
  o.require(w[1] <= 0.15, "noise weight");
  o.require(std::abs(learned.final_loss - grid.loss) <= 1e-3, "grid");
  o.require(secs < 60.0, "runtime");
}

void end_to_end(Outcome& o) {
  const auto t0 = Clock::now();
  const auto wd = workdir_arg();
  for (const char* step : {"generate-data", "train --modality all", "evaluate --fusion both"}) {
    const int code = run_cli(std::string(step) + " " + wd);
    if (code != 0) throw std::runtime_error(std::string(step) + " exited with " + std::to_string(code));
  }
  const auto t1 = Clock::now();
  if (run_cli("project " + wd) != 0) throw std::runtime_error("project failed");
  run().project_seconds = testing::seconds_since(t1);
  run().pipeline_seconds = testing::seconds_since(t0);
  run().ok = true;

  const auto rep = read_json(Workspace(run().workdir).fusion_report());
  double best = 0, worst = 1;
  for (const char* m : {"indicator", "text", "image"}) {
    const double acc = rep["unimodal"][m]["accuracy"].get<double>();
    best = std::max(best, acc);
    worst = std::min(worst, acc);
    o.detail << m << " " << acc << ", ";
  }
  const double dec = rep["decision_level"]["accuracy"].get<double>();
  const double feat = rep["feature_level"]["accuracy"].get<double>();
  o.detail << "decision " << dec << " (>= " << best - 0.02 << "), feature " << feat << " (|diff| " << std::abs(dec - feat)
           << " <= 0.05), pipeline " << run().pipeline_seconds << "s < 600s";
  o.require(worst >= 0.70, "unimodal");
  o.require(dec >= best - 0.02, "decision-level");
  o.require(std::abs(dec - feat) <= 0.05, "parity");
  o.require(run().pipeline_seconds < 600.0, "runtime");
}

void metrics_oracle(Outcome& o) {
  const Confusion m{{{4, 1, 0}, {1, 3, 1}, {0, 1, 4}}};
  const auto r = ModelMetrics::from_confusion(m);
  o.detail << "acc " << r.accuracy << " vs 0.7333, macro recall " << r.macro_recall << " vs 0.7333, macro F1 "
           << r.macro_f1 << " vs 0.7322, tol 1e-4";
  o.require(std::abs(r.accuracy - 11.0 / 15.0) <= 1e-4, "accuracy");
  o.require(std::abs(r.macro_recall - 0.7333) <= 1e-4, "recall");
  o.require(std::abs(r.macro_f1 - 0.7322) <= 1e-4, "macro F1");
}

// A `diag-assistant serve` child process on an ephemeral port.
class Server {
 public:
  Server() {
    int fds[2];
    if (pipe(fds) != 0) throw std::runtime_error("pipe failed");
    pid_ = fork();
    if (pid_ == 0) {
      dup2(fds[1], STDOUT_FILENO);
      close(fds[0]);
      const std::string wd = run().workdir.string();
      execl(DIAG_CLI, "diag-assistant", "serve", "--workdir", wd.c_str(), "--port", "0", static_cast<char*>(nullptr));
      _exit(127);
    }
    close(fds[1]);
    FILE* out = fdopen(fds[0], "r");
    char line[256] = {};
    if (!std::fgets(line, sizeof line, out)) throw std::runtime_error("server printed nothing");
    std::fclose(out);
    const std::string s(line);
    port_ = std::stoi(s.substr(s.rfind(':') + 1));
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(120, 0);
    for (int attempt = 0; attempt < 1200; ++attempt) {
      const auto r = client_->Get("/api/summary");
      if (r && r->status == 200) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    throw std::runtime_error("server never became ready");
  }
  ~Server() {
    if (pid_ > 0) {
      kill(pid_, SIGTERM);
      waitpid(pid_, nullptr, 0);
    }
  }
  /// Stops with SIGTERM and returns the exit status.
  int stop() {
    kill(pid_, SIGTERM);
    int status = 0;
    waitpid(pid_, &status, 0);
    pid_ = -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::pair<int, json> get(const std::string& path) {
    const auto r = client_->Get(path);
    if (!r) throw std::runtime_error("GET " + path + " failed");
    return {r->status, r->get_header_value("Content-Type") == "application/json" ? json::parse(r->body) : json()};
  }
  std::pair<int, json> post(const std::string& path, const std::string& body) {
    const auto r = client_->Post(path, body, "application/json");
    if (!r) throw std::runtime_error("POST " + path + " failed");
    return {r->status, json::parse(r->body)};
  }
  httplib::Client& client() { return *client_; }

 private:
  pid_t pid_ = -1;
  int port_ = 0;
  std::unique_ptr<httplib::Client> client_;
};

bool has_keys(const json& j, std::initializer_list<const char*> keys) {
  if (!j.is_object()) return false;
  for (const char* k : keys) {
    if (!j.contains(k)) return false;
  }
  return true;
}

void service_contract(Outcome& o) {
  if (!run().ok) throw std::runtime_error("pipeline run failed");
  const Workspace ws(run().workdir);
  const auto ds = load_workspace_dataset(ws);
  const auto models = load_models(ws.models_file());
  const auto fusion = load_fusion(ws.fusion_file());
  const auto id = [&](std::size_t i) { return ds.records[i].card_id; };

  std::size_t schema_checks = 0, schema_failures = 0;
  const auto expect = [&](bool ok, const std::string& what) {
    ++schema_checks;
    if (!ok) ++schema_failures, o.detail << " [schema: " << what << "]";
  };
  const std::string note_text = "acceptance note " + std::to_string(::getpid());
  std::size_t log_size = 0;
  {
    Server server;
    auto [st, summary] = server.get("/api/summary");
    expect(st == 200 && has_keys(summary, {"cohort", "metrics", "fusion", "weights", "task"}), "summary");
    expect(summary["cohort"]["n"] == ds.records.size(), "summary n");
    auto [pst, proj] = server.get("/api/projections");
    expect(pst == 200 && proj["spaces"].size() == 4, "projections");
    auto [ast, patient] = server.get("/api/patient/" + id(0));
    expect(ast == 200 && has_keys(patient, {"card_id", "indicators", "fusion", "images", "shapley", "tokens", "weights"}),
           "patient");
    expect(patient["indicators"].size() == kNumTabularFeatures, "patient indicators");
    for (const char* kind : {"raw", "cam"}) {
      const auto r = server.client().Get("/api/image/" + id(0) + "/" + kind);
      expect(r && r->status == 200 && r->get_header_value("Content-Type") == "image/png" && r->body.substr(1, 3) == "PNG",
             std::string("image ") + kind);
    }
    auto [cst, cmp] = server.post("/api/compare", json{{"card_a", id(0)}, {"card_b", id(1)}}.dump());
    expect(cst == 200 && cmp["patients"].size() == 2 && has_keys(cmp["patients"][0], {"top_shap", "top_tokens", "fusion"}),
           "compare");
    auto [vst, view] = server.post("/api/view", json{{"card_id", id(2)}, {"actor", "acceptance"}}.dump());
    expect(vst == 200 && view["kind"] == "view", "view");
    auto [nst, note] = server.post("/api/notes", json{{"text", note_text}, {"card_ids", {id(3)}}}.dump());
    expect(nst == 200 && has_keys(note, {"note_id", "author", "card_ids", "text", "timestamp"}), "note");
    for (const char* path : {"/api/notes", "/api/log", "/api/selections"}) {
      expect(server.get(path).first == 200, path);
    }

    // Malformed and unknown inputs: 400 or 404 with an error body, never a 5xx.
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> byte(0, 255), len(0, 48), pick(0, 4);
    const std::vector<std::string> posts{"/api/selection", "/api/compare", "/api/notes", "/api/view"};
    for (int trial = 0; trial < 400; ++trial) {
      std::string body;
      if (trial % 2 == 0) {
        for (int k = len(rng); k > 0; --k) body.push_back(static_cast<char>(byte(rng)));
      } else {
        json j;
        for (const char* key : {"space", "card_ids", "card_a", "card_b", "text", "card_id", "polygon"}) {
          switch (pick(rng)) {
            case 0: break;
            case 1: j[key] = byte(rng); break;
            case 2: j[key] = json::array({byte(rng), "ghost"}); break;
            case 3: j[key] = nullptr; break;
            default: j[key] = "ghost";
          }
        }
        body = j.dump();
      }
      const auto r = server.client().Post(posts[trial % posts.size()], body, "application/json");
      const bool ok = r && (r->status == 400 || r->status == 404) && json::parse(r->body).contains("error");
      expect(ok, "fuzz " + posts[trial % posts.size()] + " trial " + std::to_string(trial));
    }
    for (const char* path : {"/api/patient/ghost", "/api/image/ghost/raw", "/api/nothing"}) {
      expect(server.get(path).first == 404, path);
    }
    expect(server.get("/api/patient/" + id(0) + "?class=sprained").first == 400, "bad class");

    // Selection analytics against a recomputation from the artifacts.
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < ds.records.size(); i += 37) chosen.push_back(i);
    json ids = json::array();
    for (auto i : chosen) ids.push_back(id(i));
    auto [sst, sel] = server.post("/api/selection", json{{"space", "fusion"}, {"card_ids", ids}}.dump());
    expect(sst == 200, "selection");
    const auto& a = sel["analytics"];
    double max_err = 0;
    std::array<double, 3> pred_counts{}, fused_mean{};
    std::array<std::array<double, 3>, 3> mean{}, share{};
    std::array<double, 3> present{};
    std::vector<double> feature_mean(kNumTabularFeatures, 0.0);
    for (auto i : chosen) {
      const auto& rec = ds.records[i];
      const auto p = modality_predictions(models, rec);
      const std::array<std::array<double, 3>, 3> raw{p[0].values(), p[1].values(), p[2].values()};
      const auto f = oracle::fuse(raw, fusion.weights.w, rec.mask.present);
      const int best = static_cast<int>(std::max_element(f.fused.begin(), f.fused.end()) - f.fused.begin());
      ++pred_counts[best];
      for (int c = 0; c < 3; ++c) fused_mean[c] += f.fused[c] / chosen.size();
      for (int m = 0; m < 3; ++m) {
        if (!rec.mask.present[m]) continue;
        ++present[m];
        for (int c = 0; c < 3; ++c) mean[m][c] += raw[m][c], share[m][c] += f.share[m][c] / chosen.size();
      }
      const auto feats = rec.indicators.features();
      for (int k = 0; k < kNumTabularFeatures; ++k) feature_mean[k] += feats[k] / chosen.size();
    }
    for (int c = 0; c < 3; ++c) {
      max_err = std::max(max_err, std::abs(a["class_distribution"]["predicted"]["counts"][c].get<double>() - pred_counts[c]));
      max_err = std::max(max_err, std::abs(a["modality_mean"]["fused"][c].get<double>() - fused_mean[c]));
      int m = 0;
      for (const char* name : {"indicator", "text", "image"}) {
        max_err = std::max(max_err, std::abs(a["modality_mean"][name][c].get<double>() - mean[m][c] / present[m]));
        max_err = std::max(max_err, std::abs(a["contribution"][name][c].get<double>() - share[m][c]));
        ++m;
      }
    }
    for (int k = 0; k < kNumTabularFeatures; ++k) {
      max_err = std::max(max_err, std::abs(a["indicators"][k]["mean"].get<double>() - feature_mean[k]));
    }
    o.detail << "selection of " << chosen.size() << " max err " << max_err << " <= 1e-9, ";
    o.require(max_err <= 1e-9, "selection analytics");

    log_size = server.get("/api/log").second["entries"].size();
    o.require(server.stop() == 0, "clean shutdown");
  }

  // Restart on the same workspace: the note and the log are still there.
  Server again;
  const auto notes = again.get("/api/notes").second["notes"];
  const bool note_kept =
      std::any_of(notes.begin(), notes.end(), [&](const json& n) { return n["text"] == note_text; });
  const auto log = again.get("/api/log").second["entries"];
  o.detail << "schema " << (schema_checks - schema_failures) << "/" << schema_checks << ", note kept "
           << (note_kept ? "yes" : "no") << ", log " << log.size() << "/" << log_size << " after restart";
  o.require(schema_failures == 0, "schema");
  o.require(note_kept, "note persistence");
  o.require(log.size() == log_size && log_size >= 3, "log persistence");
}

}  // namespace

int main() {
  std::cout << std::setprecision(6);
  report("end-to-end synthetic targets", end_to_end);
  report("shapley oracle equivalence", shapley_oracle);
  report("shapley axioms", shapley_axioms);
  report("gradient correctness", gradients);
  report("grad-cam localization", grad_cam_localization);
  report("t-sne", tsne_criteria);
  report("fusion math", fusion_math);
  report("weight learning", weight_learning);
  report("metrics oracle", metrics_oracle);
  report("service contract", service_contract);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
