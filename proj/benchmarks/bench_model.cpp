#include <benchmark/benchmark.h>

#include <random>

#include "melu/meta_trainer.hpp"
#include "melu/synthetic.hpp"

using namespace melu;

namespace {

struct Fixture {
  SyntheticFamily family;
  ParameterSet params;
};

// MovieLens-sized model: d_e = 32, two 64-wide decision layers.
const Fixture& fixture() {
  static const Fixture fx = [] {
    Fixture f;
    SyntheticSpec spec;
    spec.users = 64;
    spec.min_history = 40;
    spec.max_history = 60;
    f.family = make_synthetic_family(spec);
    ModelConfig mc;
    mc.embedding_dim = 32;
    mc.layer_widths = {64, 64};
    std::mt19937_64 rng(0);
    f.params = init_parameters(f.family.schema, mc, rng);
    return f;
  }();
  return fx;
}

void BM_Forward(benchmark::State& state) {
  const auto& fx = fixture();
  const auto& e = fx.family.episodes[0];
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(e.user, *e.support[0].item, fx.params));
  }
}
BENCHMARK(BM_Forward);

void BM_Backward(benchmark::State& state) {
  const auto& fx = fixture();
  const auto& e = fx.family.episodes[0];
  const auto scope = state.range(0) == 0 ? GradientScope::theta2_only : GradientScope::all;
  for (auto _ : state) {
    benchmark::DoNotOptimize(backward(e.user, e.support, fx.params, scope));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(e.support.size()));
}
BENCHMARK(BM_Backward)->Arg(0)->Arg(1);

void BM_LocalUpdate(benchmark::State& state) {
  const auto& fx = fixture();
  const auto& e = fx.family.episodes[0];
  const auto steps = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(local_update(e, fx.params, 5e-6, steps));
  }
}
BENCHMARK(BM_LocalUpdate)->Arg(1)->Arg(5);

void BM_GlobalUpdate(benchmark::State& state) {
  const auto& fx = fixture();
  const std::span<const UserEpisode> batch(fx.family.episodes.data(), 32);
  TrainConfig cfg;
  cfg.threads = static_cast<std::size_t>(state.range(0));
  TrainState st;
  st.params = fx.params;
  for (auto _ : state) {
    benchmark::DoNotOptimize(global_update(batch, st, cfg));
  }
}
BENCHMARK(BM_GlobalUpdate)->Arg(1)->Arg(4)->UseRealTime();

}  // namespace
BENCHMARK_MAIN();
