#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "melu/model.hpp"

namespace melu {

// One user's task: adapt on `support`, evaluate on `query`.
struct UserEpisode {
  Profile user;
  std::vector<RatedItem> support;
  std::vector<RatedItem> query;

  std::int64_t user_id() const { return user.id; }
};

enum class GradMode { first_order };

struct TrainConfig {
  double alpha = 5e-6;
  double beta = 5e-5;
  std::size_t local_steps = 1;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  std::uint64_t seed = 0;
  GradMode grad_mode = GradMode::first_order;
  // Training stops once mean query loss improves by less than this.
  double convergence_tolerance = 1e-5;
  // Worker threads for per-episode gradients; results are reduced in a
  // fixed order, so the outcome does not depend on this value.
  std::size_t threads = 1;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double support_loss = 0.0;  // mean support loss before adaptation
  double query_loss = 0.0;    // mean query loss after adaptation
  double seconds = 0.0;
};

struct BatchStats {
  std::size_t episodes = 0;
  double support_loss_sum = 0.0;
  double query_loss_sum = 0.0;
};

struct TrainState {
  ParameterSet params;
  std::size_t epoch = 0;
  std::string rng_state;
  std::vector<EpochRecord> loss_history;
  BatchStats last_batch;
  std::size_t skipped_episodes = 0;
  std::vector<std::string> warnings;
};

// Runs `steps` gradient steps on the support loss, touching theta2 only.
ParameterSet local_update(const UserEpisode& episode, const ParameterSet& params,
                          double alpha, std::size_t steps);

ParameterSet local_update(const Profile& user, std::span<const RatedItem> support,
                          const ParameterSet& params, double alpha, std::size_t steps);

// One meta step over a batch: local adaptation per user, then the summed
// query-loss gradient (first-order) scaled by beta is subtracted from theta1
// and theta2. Episodes are reduced in ascending user-id order.
TrainState global_update(std::span<const UserEpisode> batch, const TrainState& state,
                         const TrainConfig& config);

TrainState global_update(std::span<const UserEpisode* const> batch,
                         const TrainState& state, const TrainConfig& config);

using EpochObserver = std::function<void(const TrainState&)>;

TrainState train(std::span<const UserEpisode> episodes, const TrainConfig& config,
                 const ModelConfig& model_config, const ContentSchema& schema,
                 const EpochObserver& on_epoch = {});

struct ScoredItem {
  ProfileRef item;
  double score = 0.0;
};

// Adapts theta2 on `history` (skipped when empty) and ranks candidates not in
// the history by descending score, ties by ascending item id.
std::vector<ScoredItem> adapt_and_predict(const Profile& user,
                                          std::span<const RatedItem> history,
                                          std::span<const ProfileRef> candidates,
                                          const ParameterSet& params, double alpha,
                                          std::size_t steps);

}  // namespace melu
