// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "acp/embedding.hpp"

namespace acp::data {

/// Clustered multi-block embeddings in place of a CNN backbone.
///
/// Every identity draws a random unit-norm center per block. An image is
/// center + camera bias + isotropic Gaussian noise. Noise on block b has
/// per-dimension std `sigma * sqrt(d_min / d_b)`, so every block carries the
/// same expected noise energy as the smallest block at std `sigma`. Each
/// camera owns a random bias vector per block with norm 0.5 * sigma.
struct SyntheticConfig {
  std::uint32_t train_ids = 200;
  std::uint32_t test_ids = 100;
  std::uint32_t imgs_per_id = 15;
  std::uint32_t cameras = 4;
  std::vector<std::uint32_t> block_dims{32, 64, 128};
  double sigma = 0.35;
  bool camera_bias = true;
  /// Extra gallery records, as a fraction of the gallery, each of a fresh
  /// identity never seen in train or query.
  double distractor_rate = 0.0;
  std::uint32_t queries_per_id = 2;
  std::uint64_t seed = 0;
};

struct SyntheticSplit {
  EmbeddingSet train;
  EmbeddingSet query;
  EmbeddingSet gallery;
};

/// Deterministic for a fixed config. Guarantees: train identities are
/// disjoint from query/gallery identities, and every query has at least one
/// gallery image of its identity from another camera.
/// Throws ConfigError for train/test ids < 2, imgs_per_id < 2, cameras < 2,
/// sigma < 0, or queries_per_id >= imgs_per_id.
SyntheticSplit generate_synthetic(const SyntheticConfig& cfg);

}  // namespace acp::data
