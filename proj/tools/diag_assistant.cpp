// Batch pipeline and HTTP service for the multimodal diagnosis assistant.

#include <pthread.h>
#include <signal.h>

#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"

#include "diag/pipeline.hpp"
#include "diag/service.hpp"

namespace {

diag::Config load_config(const std::string& path, const std::string& workdir) {
  diag::Config c = path.empty() ? diag::Config{} : diag::Config::load(path);
  if (!workdir.empty()) c.workdir = workdir;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal diagnosis assistant: data generation, training, fusion, projection, and serving"};
  app.require_subcommand(1);

  std::string config_path, workdir;
  app.add_option("--config", config_path, "key=value configuration file")->check(CLI::ExistingFile);
  app.add_option("--workdir", workdir, "working directory for artifacts (overrides the config)");

  auto* gen = app.add_subcommand("generate-data", "write a synthetic cohort and its train/val split");

  auto* train = app.add_subcommand("train", "train per-modality classifiers");
  std::string modality = "all";
  train->add_option("--modality", modality, "indicator, text, image, or all")
      ->check(CLI::IsMember({"indicator", "text", "image", "all"}));

  auto* eval = app.add_subcommand("evaluate", "learn fusion weights and compare fusion strategies");
  std::string fusion_mode = "both";
  eval->add_option("--fusion", fusion_mode, "decision, feature, or both")
      ->check(CLI::IsMember({"decision", "feature", "both"}));

  auto* explain = app.add_subcommand("explain", "write the attribution bundle of one patient");
  std::string card_id, class_name;
  explain->add_option("--card-id", card_id, "patient card id")->required();
  explain->add_option("--class", class_name, "target class (defaults to the fused prediction)");

  auto* project = app.add_subcommand("project", "compute t-SNE projections of all embedding spaces");

  auto* serve = app.add_subcommand("serve", "run the HTTP API");
  std::optional<int> port;
  std::string host;
  serve->add_option("--port", port, "listen port");
  serve->add_option("--host", host, "bind address");

  for (auto* sub : {gen, train, eval, explain, project, serve}) {
    sub->add_option("--config", config_path, "key=value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--workdir", workdir, "working directory for artifacts");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto config = load_config(config_path, workdir);
    if (*gen) {
      diag::run_generate(config);
      std::cout << "cohort written to " << (config.workdir / "data").string() << "\n";
    } else if (*train) {
      std::vector<diag::Modality> which;
      if (modality == "all") {
        which = {diag::Modality::Indicator, diag::Modality::Text, diag::Modality::Image};
      } else {
        which = {diag::parse_modality(modality)};
      }
      diag::run_train(config, which);
      std::cout << "models written to " << diag::Workspace(config.workdir).models_file().string() << "\n";
    } else if (*eval) {
      const auto mode = fusion_mode == "decision"  ? diag::FusionMode::Decision
                        : fusion_mode == "feature" ? diag::FusionMode::Feature
                                                   : diag::FusionMode::Both;
      const auto report = diag::run_evaluate(config, mode);
      std::cout << "decision-level accuracy " << report.decision_level.accuracy << ", feature-level accuracy "
                << report.feature_level.accuracy << "\n";
    } else if (*explain) {
      std::optional<int> cls;
      if (!class_name.empty()) cls = diag::code(diag::parse_label(class_name));
      diag::run_explain(config, card_id, cls);
      std::cout << "attributions written to " << diag::Workspace(config.workdir).explain_dir().string() << "\n";
    } else if (*project) {
      diag::run_project(config);
      std::cout << "projections written to " << diag::Workspace(config.workdir).projections_file().string() << "\n";
    } else if (*serve) {
      // Signals are taken synchronously by a watcher thread, which shuts the server down.
      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);
      diag::DiagnosticService service(config);
      const int bound = service.start(host.empty() ? config.host : host, port.value_or(config.port));
      std::cout << "listening on " << (host.empty() ? config.host : host) << ":" << bound << std::endl;
      std::thread([&service, signals] {
        int sig = 0;
        sigwait(&signals, &sig);
        service.stop();
      }).detach();
      service.wait();
    }
  } catch (const diag::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const diag::MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
