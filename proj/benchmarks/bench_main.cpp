#include <benchmark/benchmark.h>

#include <memory>
#include <random>

#include "spillover/counterfactual.hpp"
#include "spillover/estimator.hpp"
#include "spillover/partition.hpp"
#include "spillover/synth.hpp"

namespace {

using namespace spill;

struct Fixture {
  SyntheticWorld world;
  FilteredDataset filtered;
  ModelParams init;
  std::unique_ptr<TrainingData> training;

  explicit Fixture(int counties) {
    WorldConfig wc;
    wc.n_counties = counties;
    wc.n_weeks = 4;
    wc.seed = 42;
    world = synthesize(wc);
    filtered = filter_dataset(world.data, world.assignments, FilterConfig{});
    init = make_model(world.data, world.schedule.size(), ModelKind::kPairwise);
    fit_standardization(world.data, filtered, init.covariates);
    training = std::make_unique<TrainingData>(TrainingData::build(world.data, filtered, init));
  }

  static const Fixture& get() {
    static const Fixture f(12);
    return f;
  }
};

void BM_CorrectedGradient(benchmark::State& state) {
  const auto& f = Fixture::get();
  const PointTable empty(f.init.covariates.size());
  for (auto _ : state) {
    benchmark::DoNotOptimize(corrected_loss_and_gradient(f.init, f.training->nonzeros(), empty).loss);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.training->nonzeros().size()));
}
BENCHMARK(BM_CorrectedGradient)->Unit(benchmark::kMillisecond);

void BM_NegativeSampling(benchmark::State& state) {
  const auto& f = Fixture::get();
  std::vector<double> distances;
  for (const auto& z : f.training->zeros()) distances.push_back(z.distance_km);
  const auto scheme = sampling_probabilities(distances, 0.02, Weighting::kInverseDistance);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(draw_sample(*f.training, scheme, ++seed).zeros.size());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(distances.size()));
}
BENCHMARK(BM_NegativeSampling)->Unit(benchmark::kMillisecond);

void BM_PrecomputePhi(benchmark::State& state) {
  const auto& f = Fixture::get();
  for (auto _ : state) benchmark::DoNotOptimize(precompute_phi(f.world.planted, f.world.data));
}
BENCHMARK(BM_PrecomputePhi)->Unit(benchmark::kMillisecond);

CountyGraph random_graph(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CountyGraph g(n);
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      if (u(rng) < 6.0 / n) g.set_weight(a, b, u(rng));
    }
  }
  return g;
}

void BM_MinKcut(benchmark::State& state) {
  const auto g = random_graph(static_cast<int>(state.range(0)), 7);
  for (auto _ : state) benchmark::DoNotOptimize(min_kcut(g, 8).cut);
}
BENCHMARK(BM_MinKcut)->Arg(58)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_BruteForceKcut(benchmark::State& state) {
  const auto g = random_graph(static_cast<int>(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(brute_force_kcut(g, 3).cut);
}
BENCHMARK(BM_BruteForceKcut)->Arg(8)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
