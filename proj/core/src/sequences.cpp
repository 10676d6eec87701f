// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <numeric>
#include <random>

#include "acp/ranking.hpp"
#include "acp/train.hpp"

namespace acp::train {

SequenceSampler::SequenceSampler(const data::EmbeddingSet& set, std::size_t K,
                                 std::size_t l1, std::size_t threads)
    : K_(K), l1_(l1), identity_(set.identities()) {
  const std::size_t n = set.size();
  if (K >= n) {
    throw ConfigError("K=" + std::to_string(K) + " must be smaller than the " +
                      "training set (" + std::to_string(n) + " items)");
  }
  if (l1 < 1 || l1 > K) {
    throw ConfigError("l1=" + std::to_string(l1) + " must lie in [1, K=" +
                      std::to_string(K) + "]");
  }
  for (const auto& r : set.records) item_.push_back(r.item_id);

  const Matrix x = set.concat_normalized();
  neighbors_.resize(n * K);
  distance_.resize(n * K);
  n_pos_.resize(n);
  // Blocked so the full n x n distance matrix is never resident.
  constexpr std::size_t kBlock = 512;
  for (std::size_t lo = 0; lo < n; lo += kBlock) {
    const std::size_t hi = std::min(n, lo + kBlock);
    Matrix probes(hi - lo, x.cols());
    std::copy(x.values().begin() + lo * x.cols(),
              x.values().begin() + hi * x.cols(), probes.values().begin());
    const auto dist = ranking::pairwise_distance(probes, x,
                                                 ranking::Metric::kCosine,
                                                 threads);
    const auto rank = ranking::topk_neighbors(dist, K + 1, threads);
    for (std::size_t r = 0; r < hi - lo; ++r) {
      const std::size_t p = lo + r;
      std::size_t out = 0;
      for (std::size_t k = 0; k <= K && out < K; ++k) {
        const std::uint32_t j = rank.indices(r)[k];
        if (j == p) continue;
        neighbors_[p * K + out] = j;
        distance_[p * K + out] = rank.distances(r)[k];
        n_pos_[p] += identity_[j] == identity_[p];
        ++out;
      }
    }
  }
}

std::size_t SequenceSampler::positives_in_pool(std::size_t probe) const {
  return n_pos_.at(probe);
}

std::size_t SequenceSampler::pool_size(std::size_t probe) const {
  return n_pos_.at(probe) + std::min(l1_, K_ - n_pos_.at(probe));
}

std::optional<SequenceSample> SequenceSampler::sample(std::size_t probe,
                                                      std::uint64_t seed) const {
  if (n_pos_.at(probe) == 0) return std::nullopt;
  // Pool slots hold offsets into the probe's neighbor row, which is already
  // sorted by distance; sorting sampled offsets restores that order.
  std::vector<std::uint32_t> pool;
  pool.reserve(pool_size(probe));
  std::size_t negatives = 0;
  for (std::uint32_t k = 0; k < K_; ++k) {
    const bool same = identity_[neighbors_[probe * K_ + k]] == identity_[probe];
    if (same) {
      pool.push_back(k);
    } else if (negatives < l1_) {
      pool.push_back(k);
      ++negatives;
    }
  }
  tensor::Rng rng(derive_seed(seed, probe));
  // Partial Fisher-Yates: the first l1 slots become a uniform draw.
  for (std::size_t i = 0; i < l1_; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(l1_);
  std::sort(pool.begin(), pool.end());

  SequenceSample s;
  s.probe_item = item_[probe];
  s.members.reserve(l1_ + 1);
  s.labels.reserve(l1_ + 1);
  s.members.push_back(static_cast<std::uint32_t>(probe));
  s.labels.push_back(1);
  for (std::uint32_t k : pool) {
    const std::uint32_t j = neighbors_[probe * K_ + k];
    s.members.push_back(j);
    s.labels.push_back(identity_[j] == identity_[probe]);
  }
  return s;
}

std::vector<SequenceSample> SequenceSampler::sample_all(
    std::span<const std::size_t> probes, std::uint64_t seed,
    std::size_t* skipped) const {
  std::vector<SequenceSample> out;
  out.reserve(probes.size());
  std::size_t missing = 0;
  for (std::size_t p : probes) {
    if (auto s = sample(p, seed)) {
      out.push_back(std::move(*s));
    } else {
      ++missing;
    }
  }
  if (skipped != nullptr) *skipped = missing;
  return out;
}

std::vector<SequenceSample> build_training_sequences(
    const data::EmbeddingSet& set, std::size_t K, std::size_t l1,
    std::uint64_t seed, std::size_t* skipped) {
  const SequenceSampler sampler(set, K, l1);
  std::vector<std::size_t> probes(set.size());
  std::iota(probes.begin(), probes.end(), std::size_t{0});
  return sampler.sample_all(probes, seed, skipped);
}

model::SequenceBatch gather_batch(const std::vector<Matrix>& blocks,
                                  std::span<const SequenceSample> samples) {
  if (samples.empty()) throw ContractError("gather_batch: empty batch");
  const std::size_t length = samples.front().members.size();
  model::SequenceBatch batch{samples.size(), length, {}};
  for (const auto& src : blocks) {
    Matrix m(batch.rows(), src.cols());
    std::size_t row = 0;
    for (const auto& s : samples) {
      if (s.members.size() != length) {
        throw ContractError("gather_batch: sequences differ in length");
      }
      for (std::uint32_t j : s.members) {
        const auto from = src.row_span(j);
        std::copy(from.begin(), from.end(), m.row_span(row++).begin());
      }
    }
    batch.blocks.push_back(std::move(m));
  }
  return batch;
}

}  // namespace acp::train
