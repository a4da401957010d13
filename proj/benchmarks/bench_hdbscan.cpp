#include <benchmark/benchmark.h>

#include "toxtraj/hdbscan.hpp"
#include "toxtraj/rng.hpp"

namespace {

toxtraj::Matrix cloud(std::size_t n, std::size_t dim) {
  toxtraj::Rng rng(42);
  toxtraj::Matrix m(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) m(i, j) = static_cast<double>(i % 7) * 4.0 + rng.normal();
  return m;
}

void BM_Mst(benchmark::State& state, toxtraj::hdbscan::MstAlgorithm algo) {
  const auto pts = cloud(static_cast<std::size_t>(state.range(0)), 5);
  toxtraj::hdbscan::Options o;
  o.mst = algo;
  const auto cores = toxtraj::hdbscan::core_distances(pts, 10, o);
  for (auto _ : state) benchmark::DoNotOptimize(toxtraj::hdbscan::mutual_reachability_mst(pts, cores, o));
  state.SetComplexityN(state.range(0));
}

void BM_RunHdbscan(benchmark::State& state) {
  const auto pts = cloud(static_cast<std::size_t>(state.range(0)), 5);
  for (auto _ : state) benchmark::DoNotOptimize(toxtraj::hdbscan::run_hdbscan(pts, {50, 10}));
}

}  // namespace

BENCHMARK_CAPTURE(BM_Mst, prim, toxtraj::hdbscan::MstAlgorithm::prim)->RangeMultiplier(2)->Range(1 << 10, 1 << 13);
BENCHMARK_CAPTURE(BM_Mst, boruvka, toxtraj::hdbscan::MstAlgorithm::boruvka)->RangeMultiplier(2)->Range(1 << 10, 1 << 15);
BENCHMARK(BM_RunHdbscan)->Arg(5000)->Arg(20000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
