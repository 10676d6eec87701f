// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "acp/rerank.hpp"

namespace acp::rerank {
namespace {

std::vector<double> normalized(std::span<const float> row) {
  double ss = 0;
  for (float v : row) ss += double(v) * v;
  const double n = std::sqrt(ss);
  std::vector<double> out(row.begin(), row.end());
  if (n > 1e-12)
    for (auto& v : out) v /= n;
  else
    std::fill(out.begin(), out.end(), 0.0);
  return out;
}

/// The `count` nearest candidates of a distance row, skipping `skip`, in
/// ascending distance with ties by index.
std::vector<std::uint32_t> nearest(std::span<const float> d, std::size_t count,
                                   std::size_t skip) {
  std::vector<std::uint32_t> idx;
  idx.reserve(d.size());
  for (std::uint32_t j = 0; j < d.size(); ++j)
    if (j != skip) idx.push_back(j);
  const auto less = [&](std::uint32_t a, std::uint32_t b) {
    return d[a] < d[b] || (d[a] == d[b] && a < b);
  };
  count = std::min(count, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count),
                    idx.end(), less);
  idx.resize(count);
  return idx;
}

/// Expands every probe row with itself plus its k-1 nearest candidates.
/// `same_pool` marks probes that are the candidates themselves.
Matrix expand(const Matrix& probes, const Matrix& candidates, bool same_pool,
              const QEConfig& cfg, bool weighted) {
  const auto dist =
      ranking::pairwise_distance(probes, candidates, cfg.metric, cfg.threads);
  const std::size_t dim = probes.cols();
  Matrix out(probes.rows(), dim);
  const std::size_t skip_none = candidates.rows();
  parallel_for(probes.rows(), cfg.threads, [&](std::size_t i) {
    const auto nbrs =
        nearest(dist.row_span(i), cfg.k - 1, same_pool ? i : skip_none);
    std::vector<double> acc(dim, 0.0);
    const auto self = normalized(probes.row_span(i));
    const auto add = [&](std::span<const float> row) {
      if (!weighted) {
        for (std::size_t c = 0; c < dim; ++c) acc[c] += row[c];
        return;
      }
      const auto x = normalized(row);
      double cos = 0;
      for (std::size_t c = 0; c < dim; ++c) cos += self[c] * x[c];
      const double w = std::pow(std::clamp(cos, 0.0, 1.0), cfg.alpha);
      for (std::size_t c = 0; c < dim; ++c) acc[c] += w * x[c];
    };
    add(probes.row_span(i));
    for (auto j : nbrs) add(candidates.row_span(j));
    if (!weighted) {
      const double inv = 1.0 / static_cast<double>(nbrs.size() + 1);
      for (auto& v : acc) v *= inv;
    }
    if (weighted || cfg.renormalize) {
      double ss = 0;
      for (double v : acc) ss += v * v;
      const double n = std::sqrt(ss);
      if (n > 1e-12)
        for (auto& v : acc) v /= n;
    }
    auto row = out.row_span(i);
    for (std::size_t c = 0; c < dim; ++c) row[c] = static_cast<float>(acc[c]);
  });
  return out;
}

}  // namespace

void QEConfig::validate() const {
  if (k < 1) throw ConfigError("query expansion needs k >= 1");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
}

Matrix aqe(const Matrix& pool, const QEConfig& cfg) {
  cfg.validate();
  if (cfg.k > pool.rows()) {
    throw ConfigError("aqe: k=" + std::to_string(cfg.k) + " exceeds pool size " +
                      std::to_string(pool.rows()));
  }
  return expand(pool, pool, true, cfg, false);
}

Matrix alpha_qe(const Matrix& pool, const QEConfig& cfg) {
  cfg.validate();
  if (cfg.k > pool.rows()) {
    throw ConfigError("alpha_qe: k=" + std::to_string(cfg.k) +
                      " exceeds pool size " + std::to_string(pool.rows()));
  }
  return expand(pool, pool, true, cfg, true);
}

Expanded expand_split(const Matrix& query, const Matrix& gallery,
                      const QEConfig& cfg, bool weighted) {
  cfg.validate();
  if (query.cols() != gallery.cols()) {
    throw DimensionError("query and gallery dimensions differ");
  }
  if (cfg.joint_pool) {
    Matrix pool(query.rows() + gallery.rows(), query.cols());
    std::copy(query.values().begin(), query.values().end(), pool.values().begin());
    std::copy(gallery.values().begin(), gallery.values().end(),
              pool.values().begin() + static_cast<std::ptrdiff_t>(query.size()));
    const Matrix all = weighted ? alpha_qe(pool, cfg) : aqe(pool, cfg);
    Expanded out{Matrix(query.rows(), query.cols()),
                 Matrix(gallery.rows(), gallery.cols())};
    std::copy(all.values().begin(),
              all.values().begin() + static_cast<std::ptrdiff_t>(query.size()),
              out.query.values().begin());
    std::copy(all.values().begin() + static_cast<std::ptrdiff_t>(query.size()),
              all.values().end(), out.gallery.values().begin());
    return out;
  }
  if (cfg.k > gallery.rows()) {
    throw ConfigError("query expansion: k=" + std::to_string(cfg.k) +
                      " exceeds gallery size " + std::to_string(gallery.rows()));
  }
  return {expand(query, gallery, false, cfg, weighted),
          expand(gallery, gallery, true, cfg, weighted)};
}

}  // namespace acp::rerank
