// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "acp/common.hpp"

namespace acp::ranking {

enum class Metric { kEuclidean, kCosine };

Metric parse_metric(const std::string& name);
const char* metric_name(Metric metric);

/// Probe x candidate distances. Finite and nonnegative.
using DistanceMatrix = Matrix;

/// Computes distances in row blocks of fixed height; the partition does not
/// depend on `threads`, so results are bit-identical for any thread count.
/// Cosine distance is 1 - cos on internally normalized rows.
DistanceMatrix pairwise_distance(const Matrix& probes, const Matrix& candidates,
                                 Metric metric, std::size_t threads = 1);

/// Per-probe candidates sorted by ascending distance, ties by ascending
/// candidate index.
class RankingList {
 public:
  RankingList() = default;
  RankingList(std::size_t rows, std::size_t k)
      : rows_(rows), k_(k), index_(rows * k), distance_(rows * k) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t k() const noexcept { return k_; }

  std::span<const std::uint32_t> indices(std::size_t r) const {
    return {index_.data() + r * k_, k_};
  }
  std::span<const float> distances(std::size_t r) const {
    return {distance_.data() + r * k_, k_};
  }
  std::span<std::uint32_t> indices(std::size_t r) {
    return {index_.data() + r * k_, k_};
  }
  std::span<float> distances(std::size_t r) {
    return {distance_.data() + r * k_, k_};
  }

  friend bool operator==(const RankingList&, const RankingList&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t k_ = 0;
  std::vector<std::uint32_t> index_;
  std::vector<float> distance_;
};

/// Top-k by partial sort. Throws ConfigError unless 1 <= k <= cols.
RankingList topk_neighbors(const DistanceMatrix& dist, std::size_t k,
                           std::size_t threads = 1);

/// Complete stable ranking (k == cols).
RankingList full_ranking(const DistanceMatrix& dist, std::size_t threads = 1);

struct Labels {
  std::vector<std::uint32_t> identity;
  std::vector<std::uint32_t> camera;
};

struct EvalReport {
  /// cmc[k-1] = fraction of evaluated queries with a true match in the
  /// filtered top-k.
  std::vector<double> cmc;
  double map = 0.0;
  /// AP of every query in input order; NaN for skipped queries.
  std::vector<double> per_query_ap;
  /// Queries with no valid match after filtering.
  std::size_t skipped_queries = 0;

  double cmc_at(std::size_t k) const { return cmc.at(k - 1); }
  std::string to_json() const;
};

/// Market-1501 style evaluation. Gallery items sharing both identity and
/// camera with the query are dropped before scoring. AP is the mean of
/// precision at each relevant rank. `ranking` must be a full ranking.
EvalReport evaluate(const RankingList& ranking, const Labels& query,
                    const Labels& gallery, std::size_t k_max);

/// Convenience overload ranking `dist` first.
EvalReport evaluate(const DistanceMatrix& dist, const Labels& query,
                    const Labels& gallery, std::size_t k_max,
                    std::size_t threads = 1);

}  // namespace acp::ranking
