#include <benchmark/benchmark.h>

#include "toxtraj/permanova.hpp"
#include "toxtraj/synth.hpp"

static void BM_Permanova(benchmark::State& state) {
  const auto [a, b] = toxtraj::synth::generate_null_pair(static_cast<std::size_t>(state.range(0)), 27, 5, 1);
  const auto workers = static_cast<unsigned>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(toxtraj::permanova::permanova_test(a, b, 999, 1, workers));
}
BENCHMARK(BM_Permanova)->Args({40, 1})->Args({40, 4})->Args({400, 1})->Args({400, 4})->Unit(benchmark::kMillisecond);
