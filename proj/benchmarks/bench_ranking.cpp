// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include <benchmark/benchmark.h>

#include "acp/ranking.hpp"
#include "acp/rerank.hpp"

namespace {

acp::Matrix random_rows(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  acp::Matrix m(rows, cols);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal;
  for (auto& v : m.values()) v = normal(rng);
  return m;
}

void BM_PairwiseDistance(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto metric = state.range(1) == 0 ? acp::ranking::Metric::kEuclidean
                                          : acp::ranking::Metric::kCosine;
  const auto q = random_rows(n, 224, 1);
  const auto g = random_rows(n, 224, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(acp::ranking::pairwise_distance(q, g, metric));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_PairwiseDistance)
    ->ArgsProduct({{256, 1024}, {0, 1}})
    ->ArgNames({"n", "cosine"})
    ->Unit(benchmark::kMillisecond);

void BM_TopK(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const auto dist = acp::ranking::pairwise_distance(
      random_rows(512, 64, 3), random_rows(4096, 64, 4), acp::ranking::Metric::kCosine);
  for (auto _ : state) {
    benchmark::DoNotOptimize(acp::ranking::topk_neighbors(dist, k));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(dist.size()));
}
BENCHMARK(BM_TopK)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_KReciprocal(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = random_rows(n / 5, 64, 5);
  const auto g = random_rows(n - n / 5, 64, 6);
  acp::rerank::KRConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(acp::rerank::k_reciprocal_rerank(q, g, cfg));
  }
}
BENCHMARK(BM_KReciprocal)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_AverageQueryExpansion(benchmark::State& state) {
  const auto q = random_rows(400, 224, 7);
  const auto g = random_rows(1600, 224, 8);
  acp::rerank::QEConfig cfg;
  cfg.k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(acp::rerank::expand_split(q, g, cfg, false));
  }
}
BENCHMARK(BM_AverageQueryExpansion)->Arg(25)->Unit(benchmark::kMillisecond);

}  // namespace
