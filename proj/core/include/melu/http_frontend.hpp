#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "melu/service.hpp"

namespace melu {

// JSON endpoints over an OnboardingService:
//   POST /api/sessions                 {"profile": {field: label}}
//   GET  /api/sessions/{id}
//   POST /api/sessions/{id}/evidence   {"ratings": [{"item_id", "rating": 1..5 | "unknown"}]}
//   POST /api/sessions/{id}/feedback   {"ratings": [...]}
//   GET  /api/health
// Errors come back as {"error": message} with 400, 404, 409 or 503.
class HttpFrontend {
 public:
  explicit HttpFrontend(std::shared_ptr<OnboardingService> service,
                        std::filesystem::path static_dir = {});
  ~HttpFrontend();
  HttpFrontend(const HttpFrontend&) = delete;
  HttpFrontend& operator=(const HttpFrontend&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  // Returns the bound port.
  int start(const std::string& host, int port);
  // Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();
  int bound_port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace melu
