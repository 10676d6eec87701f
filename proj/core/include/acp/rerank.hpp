// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "acp/ranking.hpp"

namespace acp::rerank {

using ranking::Metric;

struct QEConfig {
  /// Neighbors averaged per embedding, self included.
  std::size_t k = 10;
  /// Similarity exponent for alpha-weighted expansion.
  double alpha = 3.0;
  /// Expand over query and gallery as one pool. When false, gallery items
  /// expand within the gallery and queries draw neighbors from the gallery.
  bool joint_pool = true;
  /// L2-normalize expanded rows.
  bool renormalize = true;
  Metric metric = Metric::kCosine;
  std::size_t threads = 1;

  void validate() const;
};

/// Expanded query and gallery matrices.
struct Expanded {
  Matrix query;
  Matrix gallery;
};

/// Average query expansion over one pool: every row is replaced by the mean of
/// itself and its k-1 nearest other rows. Throws ConfigError unless
/// 1 <= k <= rows.
Matrix aqe(const Matrix& pool, const QEConfig& cfg);

/// Alpha-weighted expansion over one pool. Rows are L2-normalized first; the
/// weight of neighbor j is clamp(cos(i, j), 0, 1)^alpha. Output is
/// renormalized.
Matrix alpha_qe(const Matrix& pool, const QEConfig& cfg);

/// Applies aqe (`weighted == false`) or alpha_qe to a query/gallery split
/// according to `cfg.joint_pool`.
Expanded expand_split(const Matrix& query, const Matrix& gallery,
                      const QEConfig& cfg, bool weighted);

struct KRConfig {
  std::size_t k1 = 20;
  std::size_t k2 = 6;
  double lambda = 0.3;
  /// Upper bound on working memory; exceeded estimates fail before any
  /// allocation.
  std::uint64_t memory_budget_bytes = std::uint64_t{2} << 30;
  /// Original distance: squared L2 for kEuclidean, 1 - cos for kCosine.
  Metric metric = Metric::kEuclidean;
  std::size_t threads = 1;

  void validate() const;
};

struct KRResult {
  /// lambda * scaled + (1 - lambda) * jaccard, [queries x gallery].
  ranking::DistanceMatrix final_distance;
  ranking::DistanceMatrix jaccard;
  /// Original distance min-max scaled per row over the joint pool.
  ranking::DistanceMatrix original_scaled;
};

/// Sparse row: (column, weight) pairs sorted by column.
using SparseRow = std::vector<std::pair<std::uint32_t, double>>;

/// Stage internals exposed for verification.
namespace stages {

/// R(p, k) = {g in top-(k+1)(p) : p in top-(k+1)(g)}; the +1 accounts for
/// the probe ranking itself first. `ranking` must hold at least k + 1
/// columns. Returned sets are sorted ascending.
std::vector<std::vector<std::uint32_t>> reciprocal_sets(
    const ranking::RankingList& ranking, std::size_t k);

/// Half-size neighborhood used by the expansion stage: round(k1 / 2) with
/// ties to even.
std::size_t half_k(std::size_t k1);

/// Stages (1)-(3): expanded reciprocal sets encoded with Gaussian weights
/// exp(-d) normalized to sum 1.
std::vector<SparseRow> encode_sets(const Matrix& dist,
                                   const ranking::RankingList& ranking,
                                   std::size_t k1, std::size_t threads);

/// Stage (4): each encoding replaced by the mean over its k2 nearest rows.
std::vector<SparseRow> local_expansion(const std::vector<SparseRow>& v,
                                       const ranking::RankingList& ranking,
                                       std::size_t k2, std::size_t threads);

/// Stage (5): 1 - sum(min) / (2 - sum(min)) between each of the first
/// `probes` rows and every row.
Matrix jaccard(const std::vector<SparseRow>& v, std::size_t probes,
               std::size_t threads);

}  // namespace stages

/// Bytes the re-ranker will hold for a pool of `queries + gallery` items.
std::uint64_t k_reciprocal_memory_estimate(std::size_t queries,
                                           std::size_t gallery,
                                           const KRConfig& cfg);

/// k-reciprocal re-ranking over the joint query+gallery pool. Throws
/// ConfigError unless 1 <= k2 <= k1 < gallery and lambda in [0, 1];
/// ResourceError when the memory estimate exceeds the budget.
KRResult k_reciprocal_rerank(const Matrix& query, const Matrix& gallery,
                             const KRConfig& cfg);

}  // namespace acp::rerank
