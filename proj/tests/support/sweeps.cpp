#include "sweeps.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "melu/metrics.hpp"
#include "melu/model.hpp"
#include "oracles.hpp"

namespace melu::testing {

namespace {

void record(SweepOutcome& out, const std::string& what) {
  if (out.failures++ == 0) out.first_failure = what;
}

void compare(SweepOutcome& out, const GradientSet& analytic, const GradientSet& numeric,
             double rel_tol, double abs_tol, std::uint64_t seed, bool theta2_only) {
  const auto a = analytic.all();
  const auto n = numeric.all();
  const std::size_t theta1_arrays = analytic.theta1().size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i]->data.size(); ++k) {
      const double x = a[i]->data[k];
      const double y = theta2_only && i < theta1_arrays ? 0.0 : n[i]->data[k];
      const double diff = std::abs(x - y);
      out.worst_abs = std::max(out.worst_abs, diff);
      ++out.entries;
      if (!(diff <= abs_tol || diff <= rel_tol * std::max(std::abs(x), std::abs(y)))) {
        std::ostringstream msg;
        msg << "seed " << seed << (theta2_only ? " theta2_only" : " all") << " array " << i
            << " entry " << k << ": analytic " << x << " vs " << y;
        record(out, msg.str());
      }
    }
  }
}

}  // namespace

SweepOutcome gradient_sweep(std::uint64_t first_seed, std::size_t seeds, double rel_tol,
                            double abs_tol, double h) {
  SweepOutcome out;
  for (std::uint64_t seed = first_seed; seed < first_seed + seeds; ++seed) {
    SmallInstance inst;
    const UserEpisode* episode = nullptr;
    for (std::uint64_t attempt = 0;; ++attempt) {
      inst = random_instance(seed * 1000 + attempt);
      episode = &inst.episodes[0];
      if (min_abs_preactivation(episode->support, episode->user, inst.params) > 1e-3) break;
    }
    ++out.instances;
    const auto& e = *episode;
    const auto loss = [&](const ParameterSet& p) { return naive_loss(e.support, e.user, p); };
    const auto numeric = finite_difference_gradient(loss, inst.params, h);
    compare(out, backward(e.user, e.support, inst.params, GradientScope::all), numeric, rel_tol,
            abs_tol, seed, false);
    compare(out, backward(e.user, e.support, inst.params, GradientScope::theta2_only), numeric,
            rel_tol, abs_tol, seed, true);
  }
  return out;
}

SweepOutcome metric_sweep(std::uint64_t first_seed, std::size_t instances) {
  SweepOutcome out;
  for (std::uint64_t seed = first_seed; seed < first_seed + instances; ++seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](std::size_t lo, std::size_t hi) {
      return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    // Coarse grids make ties in predictions and ratings common.
    const bool coarse = seed % 2 == 0;
    std::vector<UserPredictions> users(pick(1, 5));
    for (auto& u : users) {
      const auto n = pick(1, 10);
      for (std::size_t i = 0; i < n; ++i) {
        const double rating = coarse ? static_cast<double>(pick(0, 5))
                                     : std::uniform_real_distribution<double>(0, 5)(rng);
        const double pred = coarse ? static_cast<double>(pick(1, 3))
                                   : std::uniform_real_distribution<double>(0, 6)(rng);
        u.push_back({static_cast<std::int64_t>(pick(0, 1000) * 10 + i), rating, pred});
      }
    }
    ++out.instances;
    auto check = [&](double got, double want, const char* what) {
      ++out.entries;
      const double diff = std::abs(got - want);
      out.worst_abs = std::max(out.worst_abs, diff);
      if (diff > 1e-12) {
        std::ostringstream msg;
        msg << "seed " << seed << ' ' << what << ": " << got << " vs " << want;
        record(out, msg.str());
      }
    };
    check(mae(users), brute_mae(users), "mae");
    for (std::size_t k = 1; k <= 11; ++k) check(ndcg_k(users, k), brute_ndcg(users, k), "ndcg");
  }
  return out;
}

}  // namespace melu::testing
