#include "service_fixture.hpp"

#include <random>

namespace melu::testing {

ServiceFixture make_service_fixture(std::uint64_t seed) {
  ServiceFixture fx;
  SyntheticSpec spec;
  spec.users = 5;
  spec.items = 60;
  spec.seed = seed;
  fx.family = make_synthetic_family(spec);

  auto snap = std::make_shared<ServiceSnapshot>();
  snap->model.embedding_dim = 4;
  snap->model.layer_widths = {8, 8};
  snap->schema = fx.family.schema;
  std::mt19937_64 rng(seed);
  snap->params = init_parameters(snap->schema, snap->model, rng);
  snap->params.biases.back().data[0] = 3.0;
  snap->alpha = 0.05;
  for (const auto& item : fx.family.items) {
    snap->items.emplace(item->id, item);
    ItemInfo info;
    info.id = item->id;
    info.title = "Item " + std::to_string(item->id);
    info.year = 1990 + static_cast<int>(item->id % 11);
    info.genres = {"g" + std::to_string(item->categorical[0][0])};
    snap->item_info.emplace(item->id, info);
  }
  const auto n = static_cast<std::int64_t>(fx.family.items.size());
  for (std::int64_t i = 0; i < 25; ++i) {
    snap->popularity_candidates.push_back(i + 1);
    snap->gradient_candidates.push_back(n - i);
  }
  fx.snapshot = std::move(snap);
  return fx;
}

}  // namespace melu::testing
