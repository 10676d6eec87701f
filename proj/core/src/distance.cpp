// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "acp/ranking.hpp"
#include "eigen_map.hpp"

namespace acp::ranking {
namespace {

using DMatrix = tensor::detail::RowMatrix<double>;

constexpr std::size_t kRowBlock = 256;

DMatrix to_double(const Matrix& m, bool normalize) {
  DMatrix out = tensor::detail::as_matrix(m).cast<double>();
  if (normalize) {
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const double n = out.row(r).norm();
      if (n > 1e-12) out.row(r) /= n;
    }
  }
  return out;
}

}  // namespace

Metric parse_metric(const std::string& name) {
  if (name == "euclidean") return Metric::kEuclidean;
  if (name == "cosine") return Metric::kCosine;
  throw ConfigError("unknown metric '" + name + "' (euclidean|cosine)");
}

const char* metric_name(Metric metric) {
  return metric == Metric::kEuclidean ? "euclidean" : "cosine";
}

DistanceMatrix pairwise_distance(const Matrix& probes, const Matrix& candidates,
                                 Metric metric, std::size_t threads) {
  if (probes.cols() != candidates.cols()) {
    throw DimensionError("pairwise_distance: probe dimension " +
                         std::to_string(probes.cols()) +
                         " != candidate dimension " +
                         std::to_string(candidates.cols()));
  }
  const bool cosine = metric == Metric::kCosine;
  const DMatrix P = to_double(probes, cosine);
  const DMatrix C = to_double(candidates, cosine);
  const Eigen::VectorXd cn = C.rowwise().squaredNorm();
  DistanceMatrix out(probes.rows(), candidates.rows());
  const std::size_t blocks = (probes.rows() + kRowBlock - 1) / kRowBlock;
  parallel_for(blocks, threads, [&](std::size_t b) {
    const std::size_t r0 = b * kRowBlock;
    const std::size_t nr = std::min(kRowBlock, probes.rows() - r0);
    const auto Pb = P.middleRows(static_cast<Eigen::Index>(r0),
                                 static_cast<Eigen::Index>(nr));
    const DMatrix dots = Pb * C.transpose();
    for (std::size_t i = 0; i < nr; ++i) {
      const double pn = Pb.row(static_cast<Eigen::Index>(i)).squaredNorm();
      auto row = out.row_span(r0 + i);
      for (std::size_t j = 0; j < candidates.rows(); ++j) {
        const auto ej = static_cast<Eigen::Index>(j);
        const double dot = dots(static_cast<Eigen::Index>(i), ej);
        double v;
        if (cosine) {
          v = 1.0 - dot;
          // Rounding residue of identical directions.
          if (v < 1e-12) v = 0.0;
        } else {
          double sq = pn + cn(ej) - 2.0 * dot;
          if (sq <= 1e-12 * (pn + cn(ej))) sq = 0.0;
          v = std::sqrt(sq);
        }
        row[j] = static_cast<float>(v);
      }
    }
  });
  return out;
}

RankingList topk_neighbors(const DistanceMatrix& dist, std::size_t k,
                           std::size_t threads) {
  if (k < 1 || k > dist.cols()) {
    throw ConfigError("topk_neighbors: k=" + std::to_string(k) +
                      " outside [1, " + std::to_string(dist.cols()) + "]");
  }
  RankingList out(dist.rows(), k);
  parallel_for(dist.rows(), threads, [&](std::size_t r) {
    const auto d = dist.row_span(r);
    std::vector<std::uint32_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), 0u);
    const auto less = [&](std::uint32_t a, std::uint32_t b) {
      return d[a] < d[b] || (d[a] == d[b] && a < b);
    };
    if (k < idx.size()) {
      std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                       idx.end(), less);
    }
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), less);
    auto oi = out.indices(r);
    auto od = out.distances(r);
    for (std::size_t i = 0; i < k; ++i) {
      oi[i] = idx[i];
      od[i] = d[idx[i]];
    }
  });
  return out;
}

RankingList full_ranking(const DistanceMatrix& dist, std::size_t threads) {
  return topk_neighbors(dist, dist.cols(), threads);
}

}  // namespace acp::ranking
