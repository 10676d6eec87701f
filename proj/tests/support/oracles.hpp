// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Independent brute-force references. They share no code with the library
// beyond the Matrix container.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "acp/common.hpp"

namespace acp::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols,
                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = g(rng);
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return INFINITY;
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

inline Matrix normalize_rows(const Matrix& x) {
  Matrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double ss = 0;
    for (float v : x.row_span(r)) ss += double(v) * v;
    const double n = std::sqrt(ss);
    for (auto& v : out.row_span(r)) v = static_cast<float>(v / n);
  }
  return out;
}

inline double cosine(const Matrix& x, std::size_t i, std::size_t j) {
  double dot = 0, ni = 0, nj = 0;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    dot += double(x(i, c)) * x(j, c);
    ni += double(x(i, c)) * x(i, c);
    nj += double(x(j, c)) * x(j, c);
  }
  return dot / std::sqrt(ni * nj);
}

/// Self followed by the k-1 most cosine-similar other rows.
inline std::vector<std::size_t> cosine_neighbors(const Matrix& x, std::size_t i,
                                                 std::size_t k) {
  std::vector<std::size_t> others;
  for (std::size_t j = 0; j < x.rows(); ++j)
    if (j != i) others.push_back(j);
  std::stable_sort(others.begin(), others.end(), [&](auto a, auto b) {
    return cosine(x, i, a) > cosine(x, i, b);
  });
  std::vector<std::size_t> out{i};
  out.insert(out.end(), others.begin(), others.begin() + (k - 1));
  return out;
}

inline std::vector<double> alpha_weights(const Matrix& x, std::size_t i,
                                         std::size_t k, double alpha) {
  std::vector<double> w;
  for (auto j : cosine_neighbors(x, i, k))
    w.push_back(std::pow(std::clamp(cosine(x, i, j), 0.0, 1.0), alpha));
  return w;
}

/// Query expansion by direct enumeration. `weighted` selects alpha weights
/// on normalized rows; otherwise raw rows are averaged.
inline Matrix naive_qe(const Matrix& x, std::size_t k, double alpha,
                       bool weighted, bool renormalize) {
  const Matrix xn = normalize_rows(x);
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto nb = cosine_neighbors(x, i, k);
    std::vector<double> acc(x.cols(), 0.0);
    for (std::size_t n = 0; n < nb.size(); ++n) {
      const std::size_t j = nb[n];
      const double w =
          weighted ? std::pow(std::clamp(cosine(x, i, j), 0.0, 1.0), alpha)
                   : 1.0 / static_cast<double>(k);
      const Matrix& src = weighted ? xn : x;
      for (std::size_t c = 0; c < x.cols(); ++c) acc[c] += w * src(j, c);
    }
    double ss = 0;
    for (double v : acc) ss += v * v;
    const double scale = renormalize ? 1.0 / std::sqrt(ss) : 1.0;
    for (std::size_t c = 0; c < x.cols(); ++c)
      out(i, c) = static_cast<float>(acc[c] * scale);
  }
  return out;
}

/// Reciprocal-set Jaccard distance written from the published algorithm with
/// dense matrices and std::set, [queries x gallery].
inline Matrix brute_force_jaccard(const Matrix& query, const Matrix& gallery,
                                  std::size_t k1, std::size_t k2) {
  const std::size_t nq = query.rows();
  const std::size_t n = nq + gallery.rows();
  const auto row = [&](std::size_t i, std::size_t c) -> double {
    return i < nq ? query(i, c) : gallery(i - nq, c);
  };
  std::vector<std::vector<double>> d(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < query.cols(); ++c) {
        const double t = row(i, c) - row(j, c);
        s += t * t;
      }
      d[i][j] = s;
    }
  }
  for (auto& r : d) {
    const double lo = *std::min_element(r.begin(), r.end());
    const double hi = *std::max_element(r.begin(), r.end());
    for (auto& v : r) v = (v - lo) / (hi - lo);
  }
  std::vector<std::vector<std::size_t>> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    rank[i].resize(n);
    std::iota(rank[i].begin(), rank[i].end(), 0);
    std::stable_sort(rank[i].begin(), rank[i].end(),
                     [&](auto a, auto b) { return d[i][a] < d[i][b]; });
  }
  const auto recip = [&](std::size_t p, std::size_t k) {
    std::set<std::size_t> out;
    for (std::size_t a = 0; a <= k; ++a) {
      const std::size_t g = rank[p][a];
      for (std::size_t b = 0; b <= k; ++b)
        if (rank[g][b] == p) out.insert(g);
    }
    return out;
  };
  const auto half = static_cast<std::size_t>(std::nearbyint(k1 / 2.0));
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const auto base = recip(i, k1);
    std::set<std::size_t> expansion = base;
    for (auto c : base) {
      const auto cand = recip(c, half);
      std::size_t common = 0;
      for (auto e : cand) common += base.count(e);
      if (static_cast<double>(common) >= 2.0 / 3.0 * cand.size())
        expansion.insert(cand.begin(), cand.end());
    }
    double total = 0;
    for (auto j : expansion) total += std::exp(-d[i][j]);
    for (auto j : expansion) v[i][j] = std::exp(-d[i][j]) / total;
  }
  std::vector<std::vector<double>> vq(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < k2; ++a)
      for (std::size_t c = 0; c < n; ++c) vq[i][c] += v[rank[i][a]][c] / k2;
  Matrix out(nq, gallery.rows());
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < gallery.rows(); ++j) {
      double s = 0;
      for (std::size_t c = 0; c < n; ++c) s += std::min(vq[i][c], vq[nq + j][c]);
      out(i, j) = static_cast<float>(1.0 - s / (2.0 - s));
    }
  }
  return out;
}

}  // namespace acp::testing
