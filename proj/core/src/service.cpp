#include "melu/service.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "melu/digest.hpp"
#include "melu/errors.hpp"
#include "melu/json_io.hpp"
#include "melu/meta_trainer.hpp"
#include "melu/metrics.hpp"

namespace melu {

using nlohmann::json;

std::string strategy_tag(Strategy s) { return s == Strategy::popularity ? "A" : "B"; }

void ServiceSnapshot::validate() const {
  schema.validate();
  params.validate_shapes();
  if (items.empty()) throw ConfigError("service catalog is empty");
  if (evidence_count < 1 || recommendation_count < 1) {
    throw ConfigError("service list sizes must be positive");
  }
  for (const auto* list : {&popularity_candidates, &gradient_candidates}) {
    if (list->size() < evidence_count) {
      throw ConfigError("candidate list shorter than the evidence count");
    }
    for (auto id : *list) {
      if (!items.contains(id)) throw ConfigError("candidate " + std::to_string(id) + " not in catalog");
    }
  }
  if (!user_fields.empty()) {
    std::size_t categorical = 0;
    for (const auto& f : user_fields) categorical += f.kind != FieldKind::continuous;
    if (categorical != schema.user_fields.size()) {
      throw ConfigError("configured user fields do not match the schema");
    }
  }
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

Profile build_user(const ServiceSnapshot& snap,
                   const std::map<std::string, std::string>& fields) {
  auto lookup = [&](const std::string& name) {
    auto it = fields.find(name);
    return it == fields.end() ? std::string() : it->second;
  };
  if (!snap.user_fields.empty()) {
    std::vector<std::string> raw;
    for (const auto& f : snap.user_fields) raw.push_back(lookup(f.name));
    return make_profile(0, Side::user, raw, snap.user_fields, snap.schema);
  }
  Profile p;
  p.side = Side::user;
  for (const auto& spec : snap.schema.user_fields) {
    p.categorical.push_back({spec.index_of(lookup(spec.name))});
  }
  p.continuous.assign(snap.schema.continuous_user_dims, 0.0);
  return p;
}

void check_rating(double r, const ModelConfig& model) {
  if (!std::isfinite(r) || r < model.rating_min || r > model.rating_max) {
    throw ArgumentError("rating out of range");
  }
}

json ratings_json(const std::map<std::int64_t, EvidenceRating>& ratings) {
  json out = json::array();
  for (const auto& [id, r] : ratings) {
    out.push_back({{"item_id", id}, {"rating", r ? json(*r) : json("unknown")}});
  }
  return out;
}

struct RatingStats {
  std::size_t count = 0;
  double sum = 0.0;
};

RatingStats stats(const std::map<std::int64_t, EvidenceRating>& ratings) {
  RatingStats s;
  for (const auto& [id, r] : ratings) {
    if (r) {
      ++s.count;
      s.sum += *r;
    }
  }
  return s;
}

}  // namespace

SessionMeasures session_measures(const Session& session) {
  SessionMeasures m;
  const auto ev = stats(session.evidence_ratings);
  const auto rec = stats(session.feedback_ratings);
  m.evidence_selected = ev.count;
  m.recommendations_selected = rec.count;
  if (ev.count) m.evidence_mean_rating = ev.sum / static_cast<double>(ev.count);
  if (rec.count) m.recommendation_mean_rating = rec.sum / static_cast<double>(rec.count);

  if (!session.recommendations.empty()) {
    // Rank order is the recommendation order; stated ratings are the gains.
    UserPredictions ranked;
    const auto n = static_cast<double>(session.recommendations.size());
    for (std::size_t i = 0; i < session.recommendations.size(); ++i) {
      const auto id = session.recommendations[i];
      auto it = session.feedback_ratings.find(id);
      const double gain = it != session.feedback_ratings.end() && it->second ? *it->second : 0.0;
      ranked.push_back({id, gain, n - static_cast<double>(i)});
    }
    m.ndcg1 = user_ndcg(ranked, 1);
  }
  return m;
}

json item_json(std::int64_t id, const std::map<std::int64_t, ItemInfo>& info) {
  json j{{"item_id", id}, {"title", ""}, {"year", nullptr}, {"genres", json::array()}};
  auto it = info.find(id);
  if (it != info.end()) {
    j["title"] = it->second.title;
    if (it->second.year > 0) j["year"] = it->second.year;
    j["genres"] = it->second.genres;
  }
  return j;
}

json session_record(const Session& s) {
  const auto m = session_measures(s);
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return json{{"session_id", s.session_id},
              {"strategy", strategy_tag(s.strategy)},
              {"created_at", s.created_at},
              {"profile", s.profile_fields},
              {"evidence_shown", s.evidence_shown},
              {"evidence_ratings", ratings_json(s.evidence_ratings)},
              {"recommendations", s.recommendations},
              {"feedback_ratings", ratings_json(s.feedback_ratings)},
              {"measures",
               {{"evidence_selected", m.evidence_selected},
                {"recommendations_selected", m.recommendations_selected},
                {"evidence_mean_rating", opt(m.evidence_mean_rating)},
                {"recommendation_mean_rating", opt(m.recommendation_mean_rating)},
                {"ndcg1", m.ndcg1}}}};
}

std::map<std::string, StrategyAggregate> aggregate_session_log(const std::filesystem::path& log) {
  std::ifstream in(log);
  if (!in) throw DataError("cannot read session log " + log.string());
  struct Sums {
    StrategyAggregate agg;
    RatingStats evidence, recs;
    double ndcg = 0.0, ev_sel = 0.0, rec_sel = 0.0;
  };
  std::map<std::string, Sums> sums;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    auto& s = sums[j.at("strategy").get<std::string>()];
    ++s.agg.sessions;
    for (const auto& [key, target] :
         {std::pair{"evidence_ratings", &s.evidence}, std::pair{"feedback_ratings", &s.recs}}) {
      for (const auto& r : j.at(key)) {
        if (r.at("rating").is_number()) {
          ++target->count;
          target->sum += r["rating"].get<double>();
        }
      }
    }
    const auto& m = j.at("measures");
    s.ndcg += m.at("ndcg1").get<double>();
    s.ev_sel += m.at("evidence_selected").get<double>();
    s.rec_sel += m.at("recommendations_selected").get<double>();
  }
  std::map<std::string, StrategyAggregate> out;
  for (auto& [tag, s] : sums) {
    const auto n = static_cast<double>(s.agg.sessions);
    s.agg.mean_ndcg1 = s.ndcg / n;
    s.agg.mean_evidence_selected = s.ev_sel / n;
    s.agg.mean_recommendations_selected = s.rec_sel / n;
    if (s.evidence.count) s.agg.mean_evidence_rating = s.evidence.sum / static_cast<double>(s.evidence.count);
    if (s.recs.count) s.agg.mean_recommendation_rating = s.recs.sum / static_cast<double>(s.recs.count);
    out[tag] = s.agg;
  }
  return out;
}

OnboardingService::OnboardingService(std::shared_ptr<const ServiceSnapshot> snapshot,
                                     std::uint64_t seed, std::filesystem::path session_log,
                                     Clock clock)
    : rng_(seed), log_path_(std::move(session_log)), clock_(std::move(clock)) {
  if (!clock_) clock_ = utc_now;
  if (snapshot) install(std::move(snapshot));
}

void OnboardingService::install(std::shared_ptr<const ServiceSnapshot> snapshot) {
  if (!snapshot) throw ArgumentError("null snapshot");
  snapshot->validate();
  std::lock_guard lock(mutex_);
  snapshot_ = std::move(snapshot);
}

std::shared_ptr<const ServiceSnapshot> OnboardingService::snapshot() const {
  std::lock_guard lock(mutex_);
  return snapshot_;
}

bool OnboardingService::ready() const { return snapshot() != nullptr; }

std::shared_ptr<const ServiceSnapshot> OnboardingService::require_snapshot() const {
  auto snap = snapshot();
  if (!snap) throw ServiceUnavailableError("no model checkpoint is loaded");
  return snap;
}

Session OnboardingService::create_session(const std::map<std::string, std::string>& fields) {
  const auto snap = require_snapshot();
  Session s;
  s.profile_fields = fields;
  s.profile = build_user(*snap, fields);
  validate_profile(s.profile, snap->schema);

  std::lock_guard lock(mutex_);
  const std::uint64_t draw = rng_();
  s.strategy = (draw >> 63) == 0 ? Strategy::popularity : Strategy::gradient;
  s.session_id = to_hex(Digest().update(next_id_++).update(rng_()).value());
  const auto& list = s.strategy == Strategy::popularity ? snap->popularity_candidates
                                                        : snap->gradient_candidates;
  s.evidence_shown.assign(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(snap->evidence_count));
  s.created_at = clock_();
  sessions_.emplace(s.session_id, s);
  return s;
}

std::vector<std::int64_t> OnboardingService::submit_evidence(
    const std::string& session_id, const std::map<std::int64_t, EvidenceRating>& ratings) {
  const auto snap = require_snapshot();
  Session s;
  {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFoundError("unknown session " + session_id);
    if (it->second.stage != SessionStage::created) {
      throw ConflictError("evidence already submitted for session " + session_id);
    }
    s = it->second;
  }
  const std::set<std::int64_t> shown(s.evidence_shown.begin(), s.evidence_shown.end());
  std::vector<RatedItem> history;
  for (const auto& [id, r] : ratings) {
    if (!shown.contains(id)) throw ArgumentError("item " + std::to_string(id) + " was not shown");
    if (!r) continue;
    check_rating(*r, snap->model);
    history.push_back({snap->items.at(id), *r});
  }

  std::vector<ProfileRef> catalog;
  catalog.reserve(snap->items.size());
  for (const auto& [id, p] : snap->items) catalog.push_back(p);
  const auto ranked = adapt_and_predict(s.profile, history, catalog, snap->params,
                                        snap->alpha, history.empty() ? 0 : snap->local_steps);
  std::vector<std::int64_t> recs;
  for (std::size_t i = 0; i < ranked.size() && recs.size() < snap->recommendation_count; ++i) {
    recs.push_back(ranked[i].item->id);
  }

  std::lock_guard lock(mutex_);
  auto& stored = sessions_.at(session_id);
  if (stored.stage != SessionStage::created) {
    throw ConflictError("evidence already submitted for session " + session_id);
  }
  stored.evidence_ratings = ratings;
  stored.recommendations = recs;
  stored.stage = SessionStage::evidence_submitted;
  return recs;
}

SessionMeasures OnboardingService::submit_feedback(
    const std::string& session_id, const std::map<std::int64_t, EvidenceRating>& ratings) {
  const auto snap = require_snapshot();
  Session completed;
  {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFoundError("unknown session " + session_id);
    auto& s = it->second;
    if (s.stage == SessionStage::created) {
      throw ConflictError("no recommendations issued yet for session " + session_id);
    }
    if (s.stage == SessionStage::feedback_submitted) {
      throw ConflictError("feedback already submitted for session " + session_id);
    }
    const std::set<std::int64_t> shown(s.recommendations.begin(), s.recommendations.end());
    for (const auto& [id, r] : ratings) {
      if (!shown.contains(id)) throw ArgumentError("item " + std::to_string(id) + " was not recommended");
      if (r) check_rating(*r, snap->model);
    }
    s.feedback_ratings = ratings;
    s.stage = SessionStage::feedback_submitted;
    completed = s;
  }
  {
    std::lock_guard lock(log_mutex_);
    if (!log_path_.empty()) {
      if (log_path_.has_parent_path()) std::filesystem::create_directories(log_path_.parent_path());
      std::ofstream out(log_path_, std::ios::app);
      if (!out) throw DataError("cannot append to session log " + log_path_.string());
      out << session_record(completed).dump() << '\n';
    }
  }
  return session_measures(completed);
}

std::optional<Session> OnboardingService::find(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second;
}

std::size_t OnboardingService::session_count() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

}  // namespace melu
