#include "melu/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "melu/errors.hpp"

namespace melu {

double user_mae(std::span<const QueryPrediction> items) {
  if (items.empty()) throw ArgumentError("user has no query predictions");
  double sum = 0.0;
  for (const auto& p : items) sum += std::abs(p.rating - p.predicted);
  return sum / static_cast<double>(items.size());
}

double mae(std::span<const UserPredictions> users) {
  if (users.empty()) throw ArgumentError("MAE over an empty user set");
  double sum = 0.0;
  for (const auto& u : users) sum += user_mae(u);
  return sum / static_cast<double>(users.size());
}

namespace {

double dcg(const std::vector<double>& ratings_in_rank_order, std::size_t k) {
  double total = 0.0;
  const std::size_t depth = std::min(k, ratings_in_rank_order.size());
  for (std::size_t r = 1; r <= depth; ++r) {
    total += (std::exp2(ratings_in_rank_order[r - 1]) - 1.0) /
             std::log2(1.0 + static_cast<double>(r));
  }
  return total;
}

}  // namespace

double user_ndcg(std::span<const QueryPrediction> items, std::size_t k) {
  if (k < 1) throw ArgumentError("nDCG cutoff k must be at least 1");
  if (items.empty()) throw ArgumentError("user has no query predictions");

  std::vector<QueryPrediction> ranked(items.begin(), items.end());
  std::sort(ranked.begin(), ranked.end(),
            [](const QueryPrediction& a, const QueryPrediction& b) {
              if (a.predicted != b.predicted) return a.predicted > b.predicted;
              return a.item_id < b.item_id;
            });
  std::vector<double> observed;
  observed.reserve(ranked.size());
  for (const auto& p : ranked) observed.push_back(p.rating);

  std::vector<double> ideal = observed;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());

  const double idcg = dcg(ideal, k);
  if (idcg == 0.0) return 0.0;
  return dcg(observed, k) / idcg;
}

double ndcg_k(std::span<const UserPredictions> users, std::size_t k) {
  if (k < 1) throw ArgumentError("nDCG cutoff k must be at least 1");
  if (users.empty()) throw ArgumentError("nDCG over an empty user set");
  double sum = 0.0;
  for (const auto& u : users) sum += user_ndcg(u, k);
  return sum / static_cast<double>(users.size());
}

}  // namespace melu
