#include "melu/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "melu/errors.hpp"

namespace melu {

namespace {

constexpr std::size_t kAgeBins = 7;
constexpr std::size_t kEras = 5;

const char* const kGenreNames[] = {"Action",  "Adventure", "Animation", "Children's", "Comedy",
                                   "Crime",   "Documentary", "Drama",   "Fantasy",    "Film-Noir",
                                   "Horror",  "Musical",   "Mystery",   "Romance",    "Sci-Fi",
                                   "Thriller", "War",      "Western"};
constexpr std::size_t kGenreNameCount = std::size(kGenreNames);

struct World {
  std::vector<std::size_t> item_genre;
  std::vector<std::size_t> item_era;
  std::vector<std::vector<double>> type_pref;  // [type][genre]
};

World make_world(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> genre(0, spec.genres - 1);
  std::uniform_int_distribution<std::size_t> era(0, kEras - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  World w;
  for (std::size_t i = 0; i < spec.items; ++i) {
    // Round-robin keeps every genre populated.
    w.item_genre.push_back(i < spec.genres ? i : genre(rng));
    w.item_era.push_back(era(rng));
  }
  w.type_pref.assign(spec.user_types, std::vector<double>(spec.genres));
  for (auto& row : w.type_pref) {
    for (auto& v : row) v = normal(rng);
  }
  return w;
}

void check(const SyntheticSpec& spec) {
  if (spec.users < 1 || spec.items < 1 || spec.genres < 1 || spec.user_types < 1) {
    throw ArgumentError("synthetic family sizes must be positive");
  }
  if (spec.genres > kGenreNameCount) throw ArgumentError("too many synthetic genres");
  if (spec.min_history <= spec.query_size || spec.max_history < spec.min_history ||
      spec.max_history > spec.items) {
    throw ArgumentError("synthetic history bounds must satisfy query < min <= max <= items");
  }
}

FieldSpec numbered_field(const std::string& name, std::size_t labels) {
  FieldSpec f;
  f.name = name;
  for (std::size_t i = 0; i < labels; ++i) f.add_label(std::to_string(i));
  return f;
}

std::vector<double> preferences(const SyntheticSpec& spec, const World& world,
                                std::size_t type, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double bias = spec.bias_weight * normal(rng);
  std::vector<double> pref(spec.genres);
  for (std::size_t g = 0; g < spec.genres; ++g) {
    pref[g] = bias + spec.type_weight * world.type_pref[type][g] +
              spec.individual_weight * normal(rng);
  }
  return pref;
}

double rate(double offset, const SyntheticSpec& spec, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, spec.noise);
  double r = 3.0 + offset + noise(rng);
  if (spec.integer_ratings) r = std::round(r);
  return std::clamp(r, 1.0, 5.0);
}

}  // namespace

SyntheticFamily make_synthetic_family(const SyntheticSpec& spec, std::int64_t first_user_id) {
  check(spec);
  const World world = make_world(spec);

  SyntheticFamily fam;
  fam.schema.user_fields = {numbered_field("type", spec.user_types),
                            numbered_field("age", kAgeBins)};
  fam.schema.item_fields = {numbered_field("genre", spec.genres), numbered_field("era", kEras)};
  fam.schema.validate();

  for (std::size_t i = 0; i < spec.items; ++i) {
    Profile p;
    p.id = static_cast<std::int64_t>(i + 1);
    p.side = Side::item;
    p.categorical = {{static_cast<std::uint32_t>(world.item_genre[i] + 1)},
                     {static_cast<std::uint32_t>(world.item_era[i] + 1)}};
    fam.items.push_back(std::make_shared<const Profile>(std::move(p)));
  }

  // Users draw from a stream keyed by their id so families with different
  // offsets stay independent.
  std::vector<std::size_t> order(spec.items);
  for (std::size_t u = 0; u < spec.users; ++u) {
    const auto id = first_user_id + static_cast<std::int64_t>(u);
    std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(id), std::uint64_t{0x5eed}};
    std::mt19937_64 rng(seq);
    const std::size_t type = std::uniform_int_distribution<std::size_t>(0, spec.user_types - 1)(rng);
    const std::size_t age = std::uniform_int_distribution<std::size_t>(0, kAgeBins - 1)(rng);
    const auto pref = preferences(spec, world, type, rng);

    UserEpisode e;
    e.user.id = id;
    e.user.side = Side::user;
    e.user.categorical = {{static_cast<std::uint32_t>(type + 1)},
                          {static_cast<std::uint32_t>(age + 1)}};
    const std::size_t length =
        std::uniform_int_distribution<std::size_t>(spec.min_history, spec.max_history)(rng);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < length; ++k) {
      const auto item = order[k];
      RatedItem r{fam.items[item], rate(pref[world.item_genre[item]], spec, rng)};
      (k < spec.query_size ? e.query : e.support).push_back(std::move(r));
    }
    auto by_id = [](const RatedItem& a, const RatedItem& b) { return a.item->id < b.item->id; };
    std::sort(e.support.begin(), e.support.end(), by_id);
    std::sort(e.query.begin(), e.query.end(), by_id);
    fam.episodes.push_back(std::move(e));
    fam.preference.push_back(std::move(pref));
  }
  return fam;
}

void write_synthetic_movielens(const std::filesystem::path& dir, const SyntheticSpec& spec) {
  check(spec);
  const World world = make_world(spec);
  std::filesystem::create_directories(dir);

  std::mt19937_64 rng(spec.seed ^ 0x6d6c31ULL);
  std::vector<int> years(spec.items);
  {
    std::ofstream movies(dir / "movies.dat");
    std::uniform_int_distribution<int> year(1990, 2000);
    std::uniform_int_distribution<std::size_t> extra(0, spec.genres - 1);
    for (std::size_t i = 0; i < spec.items; ++i) {
      years[i] = year(rng);
      std::string genres = kGenreNames[world.item_genre[i]];
      const auto second = extra(rng);
      if (i % 3 == 0 && second != world.item_genre[i]) genres += std::string("|") + kGenreNames[second];
      movies << (i + 1) << "::Synthetic Movie " << (i + 1) << " (" << years[i] << ")::" << genres
             << '\n';
    }
  }

  std::vector<std::size_t> older, newer;
  for (std::size_t i = 0; i < spec.items; ++i) (years[i] <= 1997 ? older : newer).push_back(i);
  if (older.size() < spec.max_history || newer.size() < spec.min_history) {
    throw ArgumentError("too few synthetic items for both release-year groups");
  }

  static const int kAgeCodes[kAgeBins] = {1, 18, 25, 35, 45, 50, 56};
  std::ofstream users(dir / "users.dat");
  std::ofstream ratings(dir / "ratings.dat");
  std::int64_t timestamp = 978300000;
  for (std::size_t u = 0; u < spec.users; ++u) {
    const std::size_t type = std::uniform_int_distribution<std::size_t>(0, spec.user_types - 1)(rng);
    const int age = kAgeCodes[std::uniform_int_distribution<std::size_t>(0, kAgeBins - 1)(rng)];
    const char gender = (rng() & 1) ? 'M' : 'F';
    const int zip = std::uniform_int_distribution<int>(10000, 99999)(rng);
    users << (u + 1) << "::" << gender << "::" << age << "::" << type << "::" << zip << '\n';

    const auto pref = preferences(spec, world, type, rng);
    for (auto* pool : {&older, &newer}) {
      auto picks = *pool;
      std::shuffle(picks.begin(), picks.end(), rng);
      const auto hi = std::min(spec.max_history, picks.size());
      const auto length = std::uniform_int_distribution<std::size_t>(spec.min_history, hi)(rng);
      for (std::size_t k = 0; k < length; ++k) {
        const auto item = picks[k];
        ratings << (u + 1) << "::" << (item + 1) << "::"
                << static_cast<int>(std::round(rate(pref[world.item_genre[item]], spec, rng)))
                << "::" << timestamp++ << '\n';
      }
    }
  }
}

}  // namespace melu
