#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace melu {

// One query item of one user: true rating and model estimate.
struct QueryPrediction {
  std::int64_t item_id = 0;
  double rating = 0.0;
  double predicted = 0.0;
};

using UserPredictions = std::vector<QueryPrediction>;

// Mean absolute error averaged per user first, then across users.
double mae(std::span<const UserPredictions> users);

// Mean absolute error of a single user's query set.
double user_mae(std::span<const QueryPrediction> items);

// nDCG@k for one user. Items are ranked by predicted value (ties by ascending
// item id); gains are 2^rating - 1 of the true rating at each rank. A query
// shorter than k uses all of its items. Returns 0 when the ideal DCG is 0.
double user_ndcg(std::span<const QueryPrediction> items, std::size_t k);

// Mean of user_ndcg over users.
double ndcg_k(std::span<const UserPredictions> users, std::size_t k);

}  // namespace melu
