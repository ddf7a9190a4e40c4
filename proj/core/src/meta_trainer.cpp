#include "melu/meta_trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "melu/errors.hpp"

namespace melu {

void TrainConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (local_steps < 1) throw ConfigError("local_steps must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
}

namespace {

// Subtracts step * grad from the theta2 arrays of `params` in place.
void step_theta2(ParameterSet& params, const GradientSet& grad, double step) {
  auto dst = params.theta2();
  auto src = grad.theta2();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto& d = dst[i]->data;
    const auto& g = src[i]->data;
    for (std::size_t k = 0; k < d.size(); ++k) d[k] -= step * g[k];
  }
}

ParameterSet adapt(const Profile& user, std::span<const RatedItem> support,
                   const ParameterSet& params, double alpha, std::size_t steps,
                   double* initial_loss) {
  if (support.empty()) {
    throw AdaptationError("user " + std::to_string(user.id) + " has an empty support set");
  }
  if (steps < 1) throw ArgumentError("local update needs at least one step");
  ParameterSet adapted = params;
  for (std::size_t s = 0; s < steps; ++s) {
    auto lg = loss_and_gradient(user, support, adapted, GradientScope::theta2_only);
    if (s == 0 && initial_loss != nullptr) *initial_loss = lg.loss;
    step_theta2(adapted, lg.gradient, alpha);
  }
  return adapted;
}

struct EpisodeResult {
  double support_loss = 0.0;
  double query_loss = 0.0;
  GradientSet gradient;
};

std::optional<EpisodeResult> meta_gradient(const UserEpisode& episode,
                                           const ParameterSet& params,
                                           const TrainConfig& config) {
  if (episode.query.empty()) return std::nullopt;
  EpisodeResult r;
  const ParameterSet adapted = adapt(episode.user, episode.support, params, config.alpha,
                                     config.local_steps, &r.support_loss);
  // First-order: the adapted theta2 is treated as a constant, so its query
  // gradient is applied to the shared theta2 directly.
  auto lg = loss_and_gradient(episode.user, episode.query, adapted, GradientScope::all);
  r.query_loss = lg.loss;
  r.gradient = std::move(lg.gradient);
  return r;
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> workers;
    workers.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

ParameterSet local_update(const Profile& user, std::span<const RatedItem> support,
                          const ParameterSet& params, double alpha, std::size_t steps) {
  return adapt(user, support, params, alpha, steps, nullptr);
}

ParameterSet local_update(const UserEpisode& episode, const ParameterSet& params,
                          double alpha, std::size_t steps) {
  return adapt(episode.user, episode.support, params, alpha, steps, nullptr);
}

TrainState global_update(std::span<const UserEpisode* const> batch,
                         const TrainState& state, const TrainConfig& config) {
  if (batch.empty()) throw ArgumentError("batch is empty");
  config.validate();

  std::vector<const UserEpisode*> ordered(batch.begin(), batch.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const UserEpisode* a, const UserEpisode* b) {
                     return a->user_id() < b->user_id();
                   });

  std::vector<std::optional<EpisodeResult>> results(ordered.size());
  parallel_for(ordered.size(), config.threads, [&](std::size_t i) {
    results[i] = meta_gradient(*ordered[i], state.params, config);
  });

  TrainState next;
  next.epoch = state.epoch;
  next.rng_state = state.rng_state;
  next.loss_history = state.loss_history;
  next.skipped_episodes = state.skipped_episodes;
  next.warnings = state.warnings;

  GradientSet total = GradientSet::zeros_like(state.params);
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    if (!results[i]) {
      ++next.skipped_episodes;
      next.warnings.push_back("user " + std::to_string(ordered[i]->user_id()) +
                              ": empty query set, episode skipped");
      continue;
    }
    total.add(results[i]->gradient);
    ++next.last_batch.episodes;
    next.last_batch.support_loss_sum += results[i]->support_loss;
    next.last_batch.query_loss_sum += results[i]->query_loss;
  }
  next.params = apply_step(state.params, total, config.beta);
  return next;
}

TrainState global_update(std::span<const UserEpisode> batch, const TrainState& state,
                         const TrainConfig& config) {
  std::vector<const UserEpisode*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& e : batch) ptrs.push_back(&e);
  return global_update(std::span<const UserEpisode* const>(ptrs), state, config);
}

TrainState train(std::span<const UserEpisode> episodes, const TrainConfig& config,
                 const ModelConfig& model_config, const ContentSchema& schema,
                 const EpochObserver& on_epoch) {
  if (episodes.empty()) throw ArgumentError("no training episodes");
  config.validate();

  std::mt19937_64 rng(config.seed);
  TrainState state;
  state.params = init_parameters(schema, model_config, rng);

  std::vector<const UserEpisode*> order;
  order.reserve(episodes.size());
  for (const auto& e : episodes) order.push_back(&e);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);

    BatchStats totals;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      state = global_update(
          std::span<const UserEpisode* const>(order.data() + begin, end - begin), state,
          config);
      totals.episodes += state.last_batch.episodes;
      totals.support_loss_sum += state.last_batch.support_loss_sum;
      totals.query_loss_sum += state.last_batch.query_loss_sum;
    }

    EpochRecord record;
    record.epoch = epoch;
    if (totals.episodes > 0) {
      record.support_loss = totals.support_loss_sum / static_cast<double>(totals.episodes);
      record.query_loss = totals.query_loss_sum / static_cast<double>(totals.episodes);
    }
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    const bool converged =
        !state.loss_history.empty() &&
        state.loss_history.back().query_loss - record.query_loss <
            config.convergence_tolerance;
    state.epoch = epoch;
    state.loss_history.push_back(record);
    std::ostringstream rng_text;
    rng_text << rng;
    state.rng_state = rng_text.str();

    if (on_epoch) on_epoch(state);
    if (converged) break;
  }
  return state;
}

std::vector<ScoredItem> adapt_and_predict(const Profile& user,
                                          std::span<const RatedItem> history,
                                          std::span<const ProfileRef> candidates,
                                          const ParameterSet& params, double alpha,
                                          std::size_t steps) {
  const bool adapt_now = !history.empty() && steps > 0;
  const ParameterSet adapted =
      adapt_now ? adapt(user, history, params, alpha, steps, nullptr) : ParameterSet{};
  const ParameterSet& scoring = adapt_now ? adapted : params;

  std::unordered_set<std::int64_t> seen;
  for (const auto& rated : history) seen.insert(rated.item->id);

  std::vector<ScoredItem> out;
  out.reserve(candidates.size());
  for (const auto& item : candidates) {
    if (seen.contains(item->id)) continue;
    out.push_back({item, forward(user, *item, scoring)});
  }
  std::sort(out.begin(), out.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item->id < b.item->id;
  });
  return out;
}

}  // namespace melu
