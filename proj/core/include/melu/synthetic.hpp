#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "melu/meta_trainer.hpp"
#include "melu/model.hpp"

namespace melu {

// A family of users whose ratings follow user-specific preference functions.
// A user's rating offset for a genre is an individual rating bias, a part
// shared by users of the same visible "type", and an individual taste per
// genre. The bias and the individual taste are not revealed by any content
// field, so a single global model cannot fit every user.
struct SyntheticSpec {
  std::size_t users = 200;
  std::size_t items = 160;
  std::size_t genres = 6;
  std::size_t user_types = 4;
  std::size_t min_history = 20;
  std::size_t max_history = 40;
  std::size_t query_size = 10;
  double bias_weight = 1.0;
  double type_weight = 0.5;
  double individual_weight = 0.5;
  double noise = 0.1;
  bool integer_ratings = false;
  std::uint64_t seed = 0;
};

struct SyntheticFamily {
  ContentSchema schema;
  std::vector<ProfileRef> items;
  std::vector<UserEpisode> episodes;
  // preference[u][g]: rating offset of user u for genre g.
  std::vector<std::vector<double>> preference;
};

// Users get ids first_user_id, first_user_id + 1, ...; the items, genres and
// type preferences depend on spec.seed only, so families drawn with the same
// seed and different user offsets share one world.
SyntheticFamily make_synthetic_family(const SyntheticSpec& spec,
                                      std::int64_t first_user_id = 1);

// Writes ratings.dat, users.dat and movies.dat in the MovieLens 1M layout.
// Release years span 1990..2000 and every user rates both older and newer
// items.
void write_synthetic_movielens(const std::filesystem::path& dir, const SyntheticSpec& spec);

}  // namespace melu
