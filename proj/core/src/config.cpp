#include "melu/config.hpp"

#include "melu/digest.hpp"
#include "melu/errors.hpp"
#include "melu/json_io.hpp"

namespace melu {

using nlohmann::json;

void AppConfig::apply_seed(std::uint64_t value) {
  seed = value;
  training.seed = value;
  pipeline.seed = value;
  service.ab_seed = value;
}

std::optional<FormatConfig> AppConfig::format() const {
  if (data.empty()) return std::nullopt;
  return FormatConfig::from_json(data, base_dir);
}

void AppConfig::validate() const {
  model.validate();
  training.validate();
  pipeline.validate();
  if (service.port < 0 || service.port > 65535) throw ConfigError("service port out of range");
  if (service.evidence_count < 1 || service.recommendation_count < 1) {
    throw ConfigError("service list sizes must be positive");
  }
  if (evidence.top_k < 1) throw ConfigError("evidence top_k must be positive");
}

json AppConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["model"] = model;
  j["training"] = training;
  j["pipeline"] = {{"existing_max_year", pipeline.existing_max_year},
                   {"new_min_year", pipeline.new_min_year},
                   {"user_split_fraction", pipeline.user_split_fraction},
                   {"seed", pipeline.seed},
                   {"min_history", pipeline.min_history},
                   {"max_history", pipeline.max_history},
                   {"query_size", pipeline.query_size}};
  j["evidence"] = {{"top_k", evidence.top_k},
                   {"local_steps", evidence.local_steps},
                   {"threads", evidence.threads}};
  j["service"] = {{"host", service.host},
                  {"port", service.port},
                  {"ab_seed", service.ab_seed},
                  {"evidence_count", service.evidence_count},
                  {"recommendation_count", service.recommendation_count},
                  {"local_steps", service.local_steps},
                  {"session_log", service.session_log.string()},
                  {"static_dir", service.static_dir.string()}};
  j["data"] = data;
  return j;
}

std::uint64_t AppConfig::digest() const {
  return Digest().update(to_json().dump()).value();
}

AppConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  AppConfig c;
  c.base_dir = base_dir;
  try {
    if (j.contains("seed")) c.apply_seed(j["seed"].get<std::uint64_t>());
    if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
    if (j.contains("training")) {
      const auto seed = c.training.seed;
      c.training = j["training"].get<TrainConfig>();
      if (!j["training"].contains("seed")) c.training.seed = seed;
    }
    if (j.contains("pipeline")) {
      const auto& p = j["pipeline"];
      auto& s = c.pipeline;
      s.existing_max_year = p.value("existing_max_year", s.existing_max_year);
      s.new_min_year = p.value("new_min_year", s.new_min_year);
      s.user_split_fraction = p.value("user_split_fraction", s.user_split_fraction);
      s.seed = p.value("seed", s.seed);
      s.min_history = p.value("min_history", s.min_history);
      s.max_history = p.value("max_history", s.max_history);
      s.query_size = p.value("query_size", s.query_size);
    }
    if (j.contains("evidence")) {
      const auto& e = j["evidence"];
      c.evidence.top_k = e.value("top_k", c.evidence.top_k);
      c.evidence.local_steps = e.value("local_steps", c.evidence.local_steps);
      c.evidence.threads = e.value("threads", c.evidence.threads);
    }
    if (j.contains("service")) {
      const auto& s = j["service"];
      auto& o = c.service;
      o.host = s.value("host", o.host);
      o.port = s.value("port", o.port);
      o.ab_seed = s.value("ab_seed", o.ab_seed);
      o.evidence_count = s.value("evidence_count", o.evidence_count);
      o.recommendation_count = s.value("recommendation_count", o.recommendation_count);
      o.local_steps = s.value("local_steps", o.local_steps);
      o.session_log = s.value("session_log", o.session_log.string());
      o.static_dir = s.value("static_dir", std::string());
      if (o.session_log.is_relative() && !base_dir.empty()) o.session_log = base_dir / o.session_log;
      if (!o.static_dir.empty() && o.static_dir.is_relative() && !base_dir.empty()) {
        o.static_dir = base_dir / o.static_dir;
      }
    }
    if (j.contains("data")) c.data = j["data"];
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  return config_from_json(read_json_file(path), std::filesystem::absolute(path).parent_path());
}

}  // namespace melu
