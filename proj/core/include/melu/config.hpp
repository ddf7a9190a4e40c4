#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "melu/data.hpp"
#include "melu/meta_trainer.hpp"
#include "melu/model.hpp"

namespace melu {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::uint64_t ab_seed = 0;
  std::size_t evidence_count = 20;
  std::size_t recommendation_count = 20;
  std::size_t local_steps = 1;
  std::filesystem::path session_log = "sessions.jsonl";
  std::filesystem::path static_dir;  // optional UI assets
};

struct EvidenceConfig {
  std::size_t top_k = 20;
  std::size_t local_steps = 1;
  std::size_t threads = 1;
};

struct AppConfig {
  ModelConfig model;
  TrainConfig training;
  PartitionSpec pipeline;
  EvidenceConfig evidence;
  ServiceConfig service;
  // Input format description, kept as written; relative paths resolve
  // against `base_dir`.
  nlohmann::json data = nlohmann::json::object();
  std::filesystem::path base_dir;
  std::uint64_t seed = 0;

  // Propagates one seed to training, partitioning and A/B assignment.
  void apply_seed(std::uint64_t value);

  std::optional<FormatConfig> format() const;

  void validate() const;
  nlohmann::json to_json() const;
  // Digest of the canonical JSON form.
  std::uint64_t digest() const;
};

// Missing sections keep their defaults. A top-level "seed" is applied first
// and section-level seeds override it.
AppConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
AppConfig load_config(const std::filesystem::path& path);

}  // namespace melu
