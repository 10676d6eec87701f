// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>

#include "acp/rerank.hpp"

namespace acp::rerank {
namespace {

using ranking::RankingList;

/// Sorted-set intersection size.
std::size_t overlap(const std::vector<std::uint32_t>& a,
                    const std::vector<std::uint32_t>& b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

/// Upper bound on non-zeros in one encoded row.
std::uint64_t row_capacity(std::size_t pool, const KRConfig& cfg) {
  const std::uint64_t k = cfg.k1 + 1;
  const std::uint64_t h = stages::half_k(cfg.k1) + 1;
  return std::min<std::uint64_t>(pool, k + k * h);
}

}  // namespace

void KRConfig::validate() const {
  if (k1 < 1) throw ConfigError("k-reciprocal needs k1 >= 1");
  if (k2 < 1 || k2 > k1) {
    throw ConfigError("k-reciprocal needs 1 <= k2 <= k1, got k2=" +
                      std::to_string(k2) + " k1=" + std::to_string(k1));
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("lambda must lie in [0, 1]");
  }
}

namespace stages {

std::size_t half_k(std::size_t k1) {
  const std::size_t m = k1 / 2;
  if (k1 % 2 == 0) return m;
  return m % 2 == 0 ? m : m + 1;
}

std::vector<std::vector<std::uint32_t>> reciprocal_sets(
    const RankingList& ranking, std::size_t k) {
  const std::size_t width = std::min(k + 1, ranking.k());
  std::vector<std::vector<std::uint32_t>> out(ranking.rows());
  for (std::size_t p = 0; p < ranking.rows(); ++p) {
    const auto fwd = ranking.indices(p).first(width);
    for (std::uint32_t g : fwd) {
      const auto back = ranking.indices(g).first(width);
      if (std::find(back.begin(), back.end(), p) != back.end())
        out[p].push_back(g);
    }
    std::sort(out[p].begin(), out[p].end());
  }
  return out;
}

std::vector<SparseRow> encode_sets(const Matrix& dist, const RankingList& ranking,
                                   std::size_t k1, std::size_t threads) {
  const auto full = reciprocal_sets(ranking, k1);
  const auto half = reciprocal_sets(ranking, half_k(k1));
  std::vector<SparseRow> v(ranking.rows());
  parallel_for(ranking.rows(), threads, [&](std::size_t i) {
    std::vector<std::uint32_t> expansion = full[i];
    for (std::uint32_t cand : full[i]) {
      const auto& ck = half[cand];
      // Candidate sets overlapping the probe's set by at least 2/3 join it.
      if (3 * overlap(ck, full[i]) >= 2 * ck.size())
        expansion.insert(expansion.end(), ck.begin(), ck.end());
    }
    std::sort(expansion.begin(), expansion.end());
    expansion.erase(std::unique(expansion.begin(), expansion.end()),
                    expansion.end());
    double total = 0;
    SparseRow row;
    row.reserve(expansion.size());
    for (std::uint32_t j : expansion) {
      const double w = std::exp(-static_cast<double>(dist(i, j)));
      row.emplace_back(j, w);
      total += w;
    }
    for (auto& e : row) e.second /= total;
    v[i] = std::move(row);
  });
  return v;
}

std::vector<SparseRow> local_expansion(const std::vector<SparseRow>& v,
                                       const RankingList& ranking,
                                       std::size_t k2, std::size_t threads) {
  if (k2 <= 1) return v;
  const std::size_t n = v.size();
  std::vector<SparseRow> out(n);
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<double> acc(n, 0.0);
    std::vector<std::uint32_t> touched;
    const auto nbrs = ranking.indices(i).first(std::min(k2, ranking.k()));
    for (std::uint32_t j : nbrs) {
      for (const auto& [c, w] : v[j]) {
        if (acc[c] == 0.0) touched.push_back(c);
        acc[c] += w;
      }
    }
    std::sort(touched.begin(), touched.end());
    const double inv = 1.0 / static_cast<double>(nbrs.size());
    SparseRow row;
    row.reserve(touched.size());
    for (std::uint32_t c : touched) row.emplace_back(c, acc[c] * inv);
    out[i] = std::move(row);
  });
  return out;
}

Matrix jaccard(const std::vector<SparseRow>& v, std::size_t probes,
               std::size_t threads) {
  const std::size_t n = v.size();
  std::vector<std::vector<std::pair<std::uint32_t, double>>> inverted(n);
  for (std::uint32_t r = 0; r < n; ++r)
    for (const auto& [c, w] : v[r]) inverted[c].emplace_back(r, w);
  Matrix out(probes, n);
  parallel_for(probes, threads, [&](std::size_t i) {
    std::vector<double> shared(n, 0.0);
    for (const auto& [c, w] : v[i])
      for (const auto& [r, wr] : inverted[c]) shared[r] += std::min(w, wr);
    auto row = out.row_span(i);
    for (std::size_t j = 0; j < n; ++j)
      row[j] = static_cast<float>(1.0 - shared[j] / (2.0 - shared[j]));
  });
  return out;
}

}  // namespace stages

std::uint64_t k_reciprocal_memory_estimate(std::size_t queries,
                                           std::size_t gallery,
                                           const KRConfig& cfg) {
  const std::uint64_t n = queries + gallery;
  const std::uint64_t cap = row_capacity(n, cfg);
  const std::uint64_t entry = sizeof(std::pair<std::uint32_t, double>);
  const std::uint64_t dense = n * n * sizeof(float);
  const std::uint64_t ranks = n * (cfg.k1 + 1) * (sizeof(std::uint32_t) +
                                                  sizeof(float));
  const std::uint64_t encoded = n * cap * entry;
  const std::uint64_t expanded =
      n * std::min<std::uint64_t>(n, cap * cfg.k2) * entry * 2;
  const std::uint64_t outputs = 3 * queries * gallery * sizeof(float) +
                                queries * n * sizeof(float);
  const std::uint64_t scratch = (cfg.threads + 1) * n * sizeof(double) * 2;
  return dense + ranks + encoded + expanded + outputs + scratch;
}

KRResult k_reciprocal_rerank(const Matrix& query, const Matrix& gallery,
                             const KRConfig& cfg) {
  cfg.validate();
  if (query.cols() != gallery.cols()) {
    throw DimensionError("query and gallery dimensions differ");
  }
  if (cfg.k1 >= gallery.rows()) {
    throw ConfigError("k1=" + std::to_string(cfg.k1) +
                      " must be smaller than the gallery (" +
                      std::to_string(gallery.rows()) + ")");
  }
  const std::uint64_t need =
      k_reciprocal_memory_estimate(query.rows(), gallery.rows(), cfg);
  if (need > cfg.memory_budget_bytes) {
    throw ResourceError("k-reciprocal re-ranking of " +
                            std::to_string(query.rows() + gallery.rows()) +
                            " items exceeds the memory budget",
                        need, cfg.memory_budget_bytes);
  }

  const std::size_t nq = query.rows();
  const std::size_t n = nq + gallery.rows();
  Matrix pool(n, query.cols());
  std::copy(query.values().begin(), query.values().end(), pool.values().begin());
  std::copy(gallery.values().begin(), gallery.values().end(),
            pool.values().begin() + static_cast<std::ptrdiff_t>(query.size()));

  Matrix dist = ranking::pairwise_distance(pool, pool, cfg.metric, cfg.threads);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    auto row = dist.row_span(i);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::vector<double> d(row.begin(), row.end());
    if (cfg.metric == ranking::Metric::kEuclidean)
      for (auto& x : d) x *= x;
    for (double x : d) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    const double range = hi - lo;
    for (std::size_t j = 0; j < n; ++j)
      row[j] = range > 0 ? static_cast<float>((d[j] - lo) / range) : 0.0f;
  });

  const auto rank = ranking::topk_neighbors(
      dist, std::min(n, std::max(cfg.k1 + 1, cfg.k2)), cfg.threads);
  auto v = stages::encode_sets(dist, rank, cfg.k1, cfg.threads);
  v = stages::local_expansion(v, rank, cfg.k2, cfg.threads);
  const Matrix jac = stages::jaccard(v, nq, cfg.threads);

  KRResult out{Matrix(nq, gallery.rows()), Matrix(nq, gallery.rows()),
               Matrix(nq, gallery.rows())};
  const double lambda = cfg.lambda;
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < gallery.rows(); ++j) {
      const float s = dist(i, nq + j);
      const float jd = jac(i, nq + j);
      out.original_scaled(i, j) = s;
      out.jaccard(i, j) = jd;
      out.final_distance(i, j) = static_cast<float>(lambda * s + (1.0 - lambda) * jd);
    }
  }
  return out;
}

}  // namespace acp::rerank
