#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "melu/data.hpp"
#include "melu/model.hpp"

namespace melu {

enum class Strategy { popularity, gradient };

// "A" for popularity, "B" for gradient x popularity.
std::string strategy_tag(Strategy s);

// Immutable state shared by all sessions.
struct ServiceSnapshot {
  ModelConfig model;
  ContentSchema schema;
  ParameterSet params;
  // Configured user fields, for transforms applied to raw profile values.
  // When empty each schema field takes its raw value unchanged.
  std::vector<FieldConfig> user_fields;
  std::map<std::int64_t, ProfileRef> items;
  std::map<std::int64_t, ItemInfo> item_info;
  std::vector<std::int64_t> popularity_candidates;
  std::vector<std::int64_t> gradient_candidates;
  double alpha = 5e-6;
  std::size_t local_steps = 1;
  std::size_t evidence_count = 20;
  std::size_t recommendation_count = 20;

  // Throws ConfigError on inconsistent content.
  void validate() const;
};

enum class SessionStage { created, evidence_submitted, feedback_submitted };

// A rating of 1..5, or nullopt for "I do not know this item".
using EvidenceRating = std::optional<double>;

struct Session {
  std::string session_id;
  std::map<std::string, std::string> profile_fields;
  Profile profile;
  Strategy strategy = Strategy::popularity;
  std::vector<std::int64_t> evidence_shown;
  std::map<std::int64_t, EvidenceRating> evidence_ratings;
  std::vector<std::int64_t> recommendations;
  std::map<std::int64_t, EvidenceRating> feedback_ratings;
  SessionStage stage = SessionStage::created;
  std::string created_at;
};

// Survey measures of one completed session.
struct SessionMeasures {
  std::size_t evidence_selected = 0;
  std::size_t recommendations_selected = 0;
  std::optional<double> evidence_mean_rating;
  std::optional<double> recommendation_mean_rating;
  // nDCG@1 of the recommendation order with stated ratings as gains;
  // unrated recommendations count as gain 0.
  double ndcg1 = 0.0;
};

SessionMeasures session_measures(const Session& session);

nlohmann::json item_json(std::int64_t id, const std::map<std::int64_t, ItemInfo>& info);
nlohmann::json session_record(const Session& session);

struct StrategyAggregate {
  std::size_t sessions = 0;
  double mean_evidence_selected = 0.0;
  double mean_recommendations_selected = 0.0;
  std::optional<double> mean_evidence_rating;
  std::optional<double> mean_recommendation_rating;
  double mean_ndcg1 = 0.0;
};

// Per-strategy means over the records of a session log, keyed by tag.
std::map<std::string, StrategyAggregate> aggregate_session_log(const std::filesystem::path& log);

class OnboardingService {
 public:
  using Clock = std::function<std::string()>;

  // A null snapshot leaves the service unavailable until one is installed.
  OnboardingService(std::shared_ptr<const ServiceSnapshot> snapshot, std::uint64_t seed,
                    std::filesystem::path session_log, Clock clock = {});

  void install(std::shared_ptr<const ServiceSnapshot> snapshot);
  std::shared_ptr<const ServiceSnapshot> snapshot() const;
  bool ready() const;

  // Unknown labels map to the unknown index; missing fields count as unknown.
  Session create_session(const std::map<std::string, std::string>& profile_fields);

  // Ratings for shown items only; unknown entries are excluded from the
  // adaptation history. Returns the recommended item ids.
  std::vector<std::int64_t> submit_evidence(const std::string& session_id,
                                            const std::map<std::int64_t, EvidenceRating>& ratings);

  SessionMeasures submit_feedback(const std::string& session_id,
                                  const std::map<std::int64_t, EvidenceRating>& ratings);

  std::optional<Session> find(const std::string& session_id) const;
  std::size_t session_count() const;

 private:
  std::shared_ptr<const ServiceSnapshot> require_snapshot() const;

  mutable std::mutex mutex_;
  std::shared_ptr<const ServiceSnapshot> snapshot_;
  std::mt19937_64 rng_;
  std::uint64_t next_id_ = 1;
  std::map<std::string, Session> sessions_;
  std::filesystem::path log_path_;
  std::mutex log_mutex_;
  Clock clock_;
};

}  // namespace melu
