#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "melu/data.hpp"
#include "melu/meta_trainer.hpp"
#include "melu/metrics.hpp"

namespace melu {

struct EvalOptions {
  double alpha = 5e-6;
  // Local steps for the headline metrics and the support-length breakdown.
  std::size_t local_steps = 1;
  // The sweep covers 0..max_sweep_steps local updates.
  std::size_t max_sweep_steps = 5;
  // Clamp predictions to [rating_min, rating_max] before MAE.
  bool clamp = true;
  double rating_min = 1.0;
  double rating_max = 5.0;
  std::string method = "MeLU";
  std::size_t threads = 1;
  // Breakdown buckets with fewer users are flagged unstable.
  std::size_t min_stable_users = 5;
};

struct CellMetrics {
  std::size_t users = 0;
  double mae = 0.0;
  double ndcg1 = 0.0;
  double ndcg3 = 0.0;
};

struct SweepPoint {
  std::size_t local_steps = 0;
  std::array<std::optional<double>, kCellCount> mae;
};

struct LengthBucket {
  std::size_t cell = 0;
  std::size_t support_length = 0;
  std::size_t users = 0;
  double mae = 0.0;
  bool unstable = false;
};

struct EvalReport {
  std::string method;
  std::size_t local_steps = 0;
  std::array<std::optional<CellMetrics>, kCellCount> cells;
  std::vector<SweepPoint> sweep;
  std::vector<LengthBucket> by_support_length;
  double seconds = 0.0;
};

// Predictions for every query item of every episode after `steps` local
// updates on the support set (no adaptation when steps == 0).
std::vector<UserPredictions> predict_queries(std::span<const UserEpisode> episodes,
                                             const ParameterSet& params, double alpha,
                                             std::size_t steps, std::size_t threads = 1);

CellMetrics cell_metrics(std::span<const UserPredictions> predictions,
                         const EvalOptions& options);

// Headline metrics per cell, the local-step sweep and the support-length
// breakdown. `params` is never modified.
EvalReport evaluate(const ParameterSet& params, const PartitionedDataset& dataset,
                    const EvalOptions& options);

// Same architecture trained by plain mini-batch gradient descent on every
// (user, item, rating) triple of the episodes (support and query pooled),
// with batches of config.batch_size triples and step config.beta.
TrainState train_joint_baseline(std::span<const UserEpisode> episodes,
                                const TrainConfig& config, const ModelConfig& model_config,
                                const ContentSchema& schema,
                                const EpochObserver& on_epoch = {});

// Structured report: one row per cell and method, with deltas against the
// baseline when one is given. The existing/existing cell is labelled
// "train-cell".
nlohmann::json report_to_json(const EvalReport& report, const EvalReport* baseline = nullptr);

// report.json, sweep.tsv and support_length.tsv.
void write_report(const std::filesystem::path& dir, const EvalReport& report,
                  const EvalReport* baseline, const nlohmann::json& provenance);

std::string cell_label(std::size_t cell);

}  // namespace melu
