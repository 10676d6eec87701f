// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include <benchmark/benchmark.h>

#include "acp/acp_model.hpp"
#include "acp/train.hpp"

namespace {

const std::vector<std::uint32_t> kBlocks{32, 64, 128};

acp::model::SequenceBatch random_batch(std::size_t batch, std::size_t length,
                                       std::uint64_t seed) {
  acp::model::SequenceBatch b{batch, length, {}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal;
  for (auto dim : kBlocks) {
    acp::Matrix m(b.rows(), dim);
    for (auto& v : m.values()) v = normal(rng);
    b.blocks.push_back(std::move(m));
  }
  return b;
}

void BM_AcpScore(benchmark::State& state) {
  const auto k1 = static_cast<std::size_t>(state.range(0));
  acp::model::ACPModel<float> model(acp::model::ACPConfig::desk(kBlocks), 1);
  const auto batch = random_batch(64, k1, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.score(batch, 6));
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_AcpScore)->Arg(25)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_AcpTrainStep(benchmark::State& state) {
  acp::model::ACPModel<float> model(acp::model::ACPConfig::desk(kBlocks), 1);
  std::vector<acp::tensor::Parameter<float>*> params;
  for (auto& p : model.parameters()) params.push_back(&p);
  acp::train::Adam<float> adam(std::move(params), {.decay = acp::train::DecayMode::kL2});
  const auto batch = random_batch(16, 33, 3);
  std::vector<std::uint8_t> labels(batch.rows());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 33 < 8;
  acp::tensor::Rng rng(4);
  for (auto _ : state) {
    acp::tensor::Tape<float> tape;
    acp::model::Forward<float> fwd{tape, acp::tensor::Mode::kTrain, &rng};
    const auto loss = acp::train::focal_loss(model.predict(fwd, batch, 6), labels, 1.0);
    model.zero_grad();
    tape.backward(loss);
    adam.step(2e-3, 5e-4);
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_AcpTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
