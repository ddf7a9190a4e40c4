#include "melu/evidence.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <istream>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>
#include <unordered_map>

#include "melu/errors.hpp"
#include "melu/meta_trainer.hpp"

namespace melu {

double unit_gradient_norm(const Profile& user, const Profile& item, double rating,
                          const ParameterSet& adapted) {
  // Non-owning ref to the caller's item.
  const RatedItem pair{ProfileRef(ProfileRef{}, &item), rating};
  const auto lg =
      loss_and_gradient(user, std::span<const RatedItem>(&pair, 1), adapted,
                        GradientScope::theta2_only);
  if (lg.loss == 0.0) return 0.0;
  return theta2_frobenius_norm(lg.gradient) / lg.loss;
}

double pair_unit_gradient_norm(const Profile& user, const Profile& item, double rating,
                               const ParameterSet& params, double alpha, std::size_t steps,
                               std::span<const RatedItem> history) {
  const RatedItem self{ProfileRef(ProfileRef{}, &item), rating};
  const auto support = history.empty() ? std::span<const RatedItem>(&self, 1) : history;
  const ParameterSet adapted =
      steps == 0 ? params : local_update(user, support, params, alpha, steps);
  return unit_gradient_norm(user, item, rating, adapted);
}

namespace {

struct UserPairs {
  ProfileRef user;
  std::vector<RatedItem> items;
};

// Groups by user id; a repeated (user, item) keeps the last rating.
std::vector<UserPairs> group_by_user(std::span<const RatingPair> pairs) {
  std::map<std::int64_t, UserPairs> grouped;
  std::map<std::pair<std::int64_t, std::int64_t>, std::size_t> position;
  for (const auto& p : pairs) {
    auto& g = grouped[p.user->id];
    g.user = p.user;
    const auto key = std::make_pair(p.user->id, p.item->id);
    if (auto it = position.find(key); it != position.end()) {
      g.items[it->second].rating = p.rating;
      continue;
    }
    position.emplace(key, g.items.size());
    g.items.push_back({p.item, p.rating});
  }
  std::vector<UserPairs> out;
  out.reserve(grouped.size());
  for (auto& [id, g] : grouped) out.push_back(std::move(g));
  return out;
}

}  // namespace

std::vector<ItemScore> item_values(std::span<const RatingPair> pairs,
                                   const ParameterSet& params, double alpha,
                                   std::size_t steps, std::size_t threads) {
  const auto users = group_by_user(pairs);

  // (item id, user id, norm), filled per user.
  using Entry = std::tuple<std::int64_t, std::int64_t, double>;
  std::vector<std::vector<Entry>> per_user(users.size());

  auto work = [&](std::size_t u) {
    const auto& g = users[u];
    const ParameterSet adapted =
        steps == 0 ? params : local_update(*g.user, g.items, params, alpha, steps);
    auto& out = per_user[u];
    out.reserve(g.items.size());
    for (const auto& r : g.items) {
      out.emplace_back(r.item->id, g.user->id,
                       unit_gradient_norm(*g.user, *r.item, r.rating, adapted));
    }
  };

  threads = std::max<std::size_t>(1, std::min(threads, users.size()));
  if (threads == 1) {
    for (std::size_t u = 0; u < users.size(); ++u) work(u);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t u = next++; u < users.size(); u = next++) work(u);
      });
    }
  }

  std::vector<Entry> all;
  for (auto& v : per_user) all.insert(all.end(), v.begin(), v.end());
  std::sort(all.begin(), all.end());

  std::vector<ItemScore> out;
  for (std::size_t i = 0; i < all.size();) {
    const auto item = std::get<0>(all[i]);
    double sum = 0.0;
    std::size_t count = 0;
    for (; i < all.size() && std::get<0>(all[i]) == item; ++i, ++count) {
      sum += std::get<2>(all[i]);
    }
    ItemScore s;
    s.item_id = item;
    s.gradient_value = sum / static_cast<double>(count);
    s.popularity_value = static_cast<double>(count);
    out.push_back(s);
  }
  return out;
}

std::vector<double> normalize_minmax(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("cannot normalize an empty list");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double min = *lo;
  const double range = *hi - *lo;
  std::vector<double> out(values.size(), 0.0);
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - min) / range;
  return out;
}

void score_items(std::vector<ItemScore>& scores) {
  if (scores.empty()) return;
  std::vector<double> grad;
  std::vector<double> pop;
  for (const auto& s : scores) {
    grad.push_back(s.gradient_value);
    pop.push_back(s.popularity_value);
  }
  const auto ng = normalize_minmax(grad);
  const auto np = normalize_minmax(pop);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i].norm_gradient = ng[i];
    scores[i].norm_popularity = np[i];
    scores[i].score = ng[i] * np[i];
  }
}

std::vector<std::int64_t> top_k_candidates(std::span<const ItemScore> scores,
                                           std::size_t k) {
  if (k < 1) throw ArgumentError("k must be at least 1");
  std::vector<const ItemScore*> ranked;
  ranked.reserve(scores.size());
  for (const auto& s : scores) ranked.push_back(&s);
  const std::size_t take = std::min(k, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take),
                    ranked.end(), [](const ItemScore* a, const ItemScore* b) {
                      if (a->score != b->score) return a->score > b->score;
                      return a->item_id < b->item_id;
                    });
  std::vector<std::int64_t> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(ranked[i]->item_id);
  return out;
}

std::vector<ItemScore> popularity_scores(std::span<const RatingPair> pairs) {
  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  std::map<std::int64_t, double> counts;
  for (const auto& p : pairs) {
    if (seen.emplace(p.item->id, p.user->id).second) counts[p.item->id] += 1.0;
  }
  std::vector<ItemScore> out;
  for (const auto& [item, count] : counts) {
    ItemScore s;
    s.item_id = item;
    s.popularity_value = count;
    out.push_back(s);
  }
  if (out.empty()) return out;
  std::vector<double> pop;
  for (const auto& s : out) pop.push_back(s.popularity_value);
  const auto np = normalize_minmax(pop);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].norm_popularity = np[i];
    out[i].score = np[i];
  }
  return out;
}

std::vector<std::int64_t> popularity_candidates(std::span<const RatingPair> pairs,
                                                std::size_t k) {
  auto scores = popularity_scores(pairs);
  // Rank on the raw counts so a degenerate normalization still orders ties by id.
  for (auto& s : scores) s.score = s.popularity_value;
  return top_k_candidates(scores, k);
}

namespace {

std::string clean_title(std::string title) {
  std::replace(title.begin(), title.end(), '\t', ' ');
  std::replace(title.begin(), title.end(), '\n', ' ');
  return title;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_candidate_table(std::ostream& out, std::span<const std::int64_t> order,
                           std::span<const ItemScore> scores,
                           const std::map<std::int64_t, std::string>& titles) {
  std::unordered_map<std::int64_t, const ItemScore*> by_id;
  for (const auto& s : scores) by_id.emplace(s.item_id, &s);
  out << "rank\titem_id\ttitle\tgradient_value\tpopularity_value\tscore\n";
  std::size_t rank = 0;
  for (auto id : order) {
    auto it = by_id.find(id);
    if (it == by_id.end()) continue;
    const auto t = titles.find(id);
    out << ++rank << '\t' << id << '\t'
        << clean_title(t == titles.end() ? std::string() : t->second) << '\t'
        << fmt(it->second->gradient_value) << '\t' << fmt(it->second->popularity_value)
        << '\t' << fmt(it->second->score) << '\n';
  }
}

std::vector<CandidateRow> read_candidate_table(std::istream& in) {
  std::vector<CandidateRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() == 5) f.insert(f.begin() + 2, std::string());
    if (f.size() != 6) throw DataError("malformed candidate row: " + line);
    CandidateRow r;
    r.rank = std::stoul(f[0]);
    r.item_id = std::stoll(f[1]);
    r.title = f[2];
    r.gradient_value = std::stod(f[3]);
    r.popularity_value = std::stod(f[4]);
    r.score = std::stod(f[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::size_t overlap(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
  const std::set<std::int64_t> sa(a.begin(), a.end());
  std::size_t n = 0;
  for (auto id : std::set<std::int64_t>(b.begin(), b.end())) n += sa.contains(id);
  return n;
}

}  // namespace melu
