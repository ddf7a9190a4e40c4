#include "melu/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "melu/errors.hpp"
#include "melu/json_io.hpp"

namespace melu {

using nlohmann::json;

namespace {

template <typename Fn>
void for_each_index(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
}

UserPredictions predict_episode(const UserEpisode& e, const ParameterSet& params) {
  UserPredictions out;
  out.reserve(e.query.size());
  for (const auto& r : e.query) {
    out.push_back({r.item->id, r.rating, forward(e.user, *r.item, params)});
  }
  return out;
}

// Predictions after 0..max_steps local updates for one episode, reusing each
// step as the start of the next.
std::vector<UserPredictions> sweep_episode(const UserEpisode& e, const ParameterSet& params,
                                           double alpha, std::size_t max_steps) {
  std::vector<UserPredictions> out;
  out.reserve(max_steps + 1);
  out.push_back(predict_episode(e, params));
  if (max_steps == 0 || e.support.empty()) {
    for (std::size_t s = 1; s <= max_steps; ++s) out.push_back(out.front());
    return out;
  }
  ParameterSet adapted = local_update(e, params, alpha, 1);
  out.push_back(predict_episode(e, adapted));
  for (std::size_t s = 2; s <= max_steps; ++s) {
    adapted = local_update(e, adapted, alpha, 1);
    out.push_back(predict_episode(e, adapted));
  }
  return out;
}

}  // namespace

std::string cell_label(std::size_t cell) { return CellKey::from_index(cell).name(); }

std::vector<UserPredictions> predict_queries(std::span<const UserEpisode> episodes,
                                             const ParameterSet& params, double alpha,
                                             std::size_t steps, std::size_t threads) {
  std::vector<UserPredictions> out(episodes.size());
  for_each_index(episodes.size(), threads, [&](std::size_t i) {
    const auto& e = episodes[i];
    if (steps == 0 || e.support.empty()) {
      out[i] = predict_episode(e, params);
    } else {
      out[i] = predict_episode(e, local_update(e, params, alpha, steps));
    }
  });
  return out;
}

CellMetrics cell_metrics(std::span<const UserPredictions> predictions,
                         const EvalOptions& options) {
  CellMetrics m;
  m.users = predictions.size();
  if (predictions.empty()) return m;
  std::vector<UserPredictions> clamped(predictions.begin(), predictions.end());
  if (options.clamp) {
    for (auto& u : clamped) {
      for (auto& p : u) p.predicted = std::clamp(p.predicted, options.rating_min, options.rating_max);
    }
  }
  m.mae = mae(clamped);
  m.ndcg1 = ndcg_k(predictions, 1);
  m.ndcg3 = ndcg_k(predictions, 3);
  return m;
}

EvalReport evaluate(const ParameterSet& params, const PartitionedDataset& dataset,
                    const EvalOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  EvalReport report;
  report.method = options.method;
  report.local_steps = options.local_steps;

  const std::size_t max_steps = std::max(options.max_sweep_steps, options.local_steps);
  report.sweep.resize(options.max_sweep_steps + 1);
  for (std::size_t s = 0; s <= options.max_sweep_steps; ++s) report.sweep[s].local_steps = s;

  for (std::size_t c = 0; c < kCellCount; ++c) {
    const auto& episodes = dataset.cells[c];
    if (episodes.empty()) continue;

    // by_steps[s][u]: predictions of user u after s local updates.
    std::vector<std::vector<UserPredictions>> per_user(episodes.size());
    for_each_index(episodes.size(), options.threads, [&](std::size_t i) {
      per_user[i] = sweep_episode(episodes[i], params, options.alpha, max_steps);
    });
    auto at_steps = [&](std::size_t s) {
      std::vector<UserPredictions> out;
      out.reserve(per_user.size());
      for (auto& u : per_user) out.push_back(u[s]);
      return out;
    };

    const auto headline = at_steps(options.local_steps);
    report.cells[c] = cell_metrics(headline, options);
    for (std::size_t s = 0; s <= options.max_sweep_steps; ++s) {
      report.sweep[s].mae[c] = cell_metrics(at_steps(s), options).mae;
    }

    std::map<std::size_t, std::vector<UserPredictions>> buckets;
    for (std::size_t i = 0; i < episodes.size(); ++i) {
      buckets[episodes[i].support.size()].push_back(headline[i]);
    }
    for (const auto& [length, preds] : buckets) {
      LengthBucket b;
      b.cell = c;
      b.support_length = length;
      b.users = preds.size();
      b.mae = cell_metrics(preds, options).mae;
      b.unstable = preds.size() < options.min_stable_users;
      report.by_support_length.push_back(b);
    }
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

TrainState train_joint_baseline(std::span<const UserEpisode> episodes,
                                const TrainConfig& config, const ModelConfig& model_config,
                                const ContentSchema& schema, const EpochObserver& on_epoch) {
  if (episodes.empty()) throw ArgumentError("no training episodes");
  config.validate();

  struct Triple {
    const Profile* user;
    const RatedItem* item;
  };
  std::vector<Triple> triples;
  for (const auto& e : episodes) {
    for (const auto& r : e.support) triples.push_back({&e.user, &r});
    for (const auto& r : e.query) triples.push_back({&e.user, &r});
  }
  if (triples.empty()) throw ArgumentError("episodes contain no ratings");

  std::mt19937_64 rng(config.seed);
  TrainState state;
  state.params = init_parameters(schema, model_config, rng);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::shuffle(triples.begin(), triples.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < triples.size(); begin += config.batch_size) {
      const std::size_t end = std::min(triples.size(), begin + config.batch_size);
      const double weight = 1.0 / static_cast<double>(end - begin);
      GradientSet grad = GradientSet::zeros_like(state.params);
      double batch_loss = 0.0;
      for (std::size_t t = begin; t < end; ++t) {
        batch_loss += accumulate_loss_gradient(
            *triples[t].user, std::span<const RatedItem>(triples[t].item, 1), state.params,
            GradientScope::all, grad, weight);
      }
      state.params = apply_step(state.params, grad, config.beta);
      loss_sum += batch_loss * weight;
      ++batches;
    }
    EpochRecord record;
    record.epoch = epoch;
    record.support_loss = loss_sum / static_cast<double>(batches);
    record.query_loss = record.support_loss;
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    const bool converged = !state.loss_history.empty() &&
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

json report_to_json(const EvalReport& report, const EvalReport* baseline) {
  json rows = json::array();
  auto add_rows = [&](const EvalReport& r) {
    for (std::size_t c = 0; c < kCellCount; ++c) {
      if (!r.cells[c]) continue;
      const auto& m = *r.cells[c];
      json row{{"cell", cell_label(c)},
               {"method", r.method},
               {"local_steps", r.local_steps},
               {"users", m.users},
               {"mae", m.mae},
               {"ndcg1", m.ndcg1},
               {"ndcg3", m.ndcg3}};
      if (c == CellKey{Group::existing, Group::existing}.index()) row["label"] = "train-cell";
      rows.push_back(std::move(row));
    }
  };
  add_rows(report);
  if (baseline != nullptr) add_rows(*baseline);

  json out{{"rows", rows}, {"seconds", report.seconds}};

  json sweep = json::array();
  for (const auto& p : report.sweep) {
    json point{{"local_steps", p.local_steps}};
    for (std::size_t c = 0; c < kCellCount; ++c) {
      if (p.mae[c]) point[cell_label(c)] = *p.mae[c];
    }
    sweep.push_back(std::move(point));
  }
  out["sweep"] = sweep;

  if (baseline != nullptr) {
    json deltas = json::array();
    for (std::size_t c = 0; c < kCellCount; ++c) {
      if (!report.cells[c] || !baseline->cells[c]) continue;
      deltas.push_back({{"cell", cell_label(c)},
                        {"mae", report.cells[c]->mae - baseline->cells[c]->mae},
                        {"ndcg1", report.cells[c]->ndcg1 - baseline->cells[c]->ndcg1},
                        {"ndcg3", report.cells[c]->ndcg3 - baseline->cells[c]->ndcg3}});
    }
    out["baseline_deltas"] = deltas;
    out["baseline_method"] = baseline->method;
  }
  return out;
}

void write_report(const std::filesystem::path& dir, const EvalReport& report,
                  const EvalReport* baseline, const json& provenance) {
  std::filesystem::create_directories(dir);
  json doc = report_to_json(report, baseline);
  doc["provenance"] = provenance;
  write_json_file(dir / "report.json", doc, 2);

  {
    std::ofstream out(dir / "sweep.tsv");
    out << "local_steps";
    for (std::size_t c = 0; c < kCellCount; ++c) out << '\t' << cell_label(c);
    out << '\n';
    for (const auto& p : report.sweep) {
      out << p.local_steps;
      for (std::size_t c = 0; c < kCellCount; ++c) {
        out << '\t';
        if (p.mae[c]) out << *p.mae[c];
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "support_length.tsv");
    out << "cell\tsupport_length\tusers\tmae\tunstable\n";
    for (const auto& b : report.by_support_length) {
      out << cell_label(b.cell) << '\t' << b.support_length << '\t' << b.users << '\t'
          << b.mae << '\t' << (b.unstable ? 1 : 0) << '\n';
    }
  }
}

}  // namespace melu
