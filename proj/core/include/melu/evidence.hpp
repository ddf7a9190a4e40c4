#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "melu/model.hpp"

namespace melu {

struct ItemScore {
  std::int64_t item_id = 0;
  double gradient_value = 0.0;    // mean unit-error gradient norm over raters
  double popularity_value = 0.0;  // number of ratings
  double norm_gradient = 0.0;
  double norm_popularity = 0.0;
  double score = 0.0;             // norm_gradient * norm_popularity
};

// One observed (user, item, rating) triple.
struct RatingPair {
  ProfileRef user;
  ProfileRef item;
  double rating = 0.0;
};

// Frobenius norm over all theta2 arrays of the single-pair squared-loss
// gradient divided by that loss, evaluated at `adapted`. Zero loss gives 0.
double unit_gradient_norm(const Profile& user, const Profile& item, double rating,
                          const ParameterSet& adapted);

// Adapts theta2 on `history` (on the pair itself when `history` is empty)
// with `steps` local updates, then returns unit_gradient_norm at the adapted
// parameters.
double pair_unit_gradient_norm(const Profile& user, const Profile& item, double rating,
                               const ParameterSet& params, double alpha, std::size_t steps,
                               std::span<const RatedItem> history = {});

// Per-item gradient and popularity values over all pairs. Pairs are grouped
// by user and each user is adapted once on their full pair list. Fills
// gradient_value and popularity_value; output ordered by item id.
std::vector<ItemScore> item_values(std::span<const RatingPair> pairs,
                                   const ParameterSet& params, double alpha,
                                   std::size_t steps, std::size_t threads = 1);

// (v - min) / (max - min); a degenerate range maps everything to 0.
std::vector<double> normalize_minmax(std::span<const double> values);

// Fills norm_gradient, norm_popularity and score in place.
void score_items(std::vector<ItemScore>& scores);

// Highest `k` scores, ties by ascending item id.
std::vector<std::int64_t> top_k_candidates(std::span<const ItemScore> scores, std::size_t k);

// Popularity-only scores: popularity_value and its min-max normalization in
// both norm_popularity and score. Ordered by item id.
std::vector<ItemScore> popularity_scores(std::span<const RatingPair> pairs);

// Top-k items by interaction count with the same tie-break.
std::vector<std::int64_t> popularity_candidates(std::span<const RatingPair> pairs,
                                                std::size_t k);

// Tab-separated table: rank, item_id, title, gradient_value,
// popularity_value, score. Rows follow `order`; ids missing from `scores`
// are skipped.
void write_candidate_table(std::ostream& out, std::span<const std::int64_t> order,
                           std::span<const ItemScore> scores,
                           const std::map<std::int64_t, std::string>& titles);

struct CandidateRow {
  std::size_t rank = 0;
  std::int64_t item_id = 0;
  std::string title;
  double gradient_value = 0.0;
  double popularity_value = 0.0;
  double score = 0.0;
};

std::vector<CandidateRow> read_candidate_table(std::istream& in);

// Number of ids shared by two candidate lists.
std::size_t overlap(std::span<const std::int64_t> a, std::span<const std::int64_t> b);

}  // namespace melu
