#include <benchmark/benchmark.h>

#include "toxtraj/assign.hpp"
#include "toxtraj/rng.hpp"

static void BM_PredictAll(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  toxtraj::Rng rng(3);
  toxtraj::Matrix train(m, 5), queries(1000, 5);
  std::vector<int> labels(m);
  for (std::size_t i = 0; i < m; ++i) {
    labels[i] = static_cast<int>(i % 20);
    for (std::size_t j = 0; j < 5; ++j) train(i, j) = rng.normal() + (j == i % 5 ? 3.0 : 0.0);
  }
  for (auto& v : queries.values) v = rng.normal();
  const auto model = toxtraj::assign::fit_knn(train, labels, 15);
  for (auto _ : state) benchmark::DoNotOptimize(toxtraj::assign::predict_all(model, queries, 4));
}
BENCHMARK(BM_PredictAll)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);
