#pragma once

#include <array>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diag/pipeline.hpp"

namespace diag {

/// Even-odd rule; points exactly on an edge may fall either way.
bool point_in_polygon(double x, double y, std::span<const std::array<double, 2>> polygon);

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// HTTP API over the artifacts of a workspace. Artifacts load on a background thread;
/// requests made before loading completes get 503.
class DiagnosticService {
 public:
  /// Throws MissingArtifact when the workspace lacks data, models, or fusion weights.
  explicit DiagnosticService(Config config);
  ~DiagnosticService();
  DiagnosticService(const DiagnosticService&) = delete;
  DiagnosticService& operator=(const DiagnosticService&) = delete;

  /// Loads artifacts synchronously; a no-op once loaded.
  void load();
  bool ready() const;

  ApiResponse handle(const std::string& method, const std::string& path,
                     const std::multimap<std::string, std::string>& query, const std::string& body);

  /// Starts listening (port 0 picks a free port) and begins loading. Returns the bound port.
  int start(const std::string& host, int port);
  /// Blocks until stop() is called.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace diag
