// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include <json.hpp>

#include "acp/ranking.hpp"

namespace acp::ranking {
namespace {

struct QueryResult {
  bool valid = false;
  double ap = 0.0;
  /// Filtered rank (0-based) of the first true match.
  std::size_t first_hit = 0;
};

QueryResult score_query(std::span<const std::uint32_t> order, std::uint32_t qid,
                        std::uint32_t qcam, const Labels& gallery) {
  QueryResult out;
  std::size_t rank = 0;
  std::size_t hits = 0;
  double precision_sum = 0.0;
  for (std::uint32_t g : order) {
    const bool same_id = gallery.identity[g] == qid;
    if (same_id && gallery.camera[g] == qcam) continue;
    if (same_id) {
      if (hits == 0) out.first_hit = rank;
      ++hits;
      precision_sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
    ++rank;
  }
  if (hits > 0) {
    out.valid = true;
    out.ap = precision_sum / static_cast<double>(hits);
  }
  return out;
}

void check_labels(const Labels& l, std::size_t n, const char* what) {
  if (l.identity.size() != n || l.camera.size() != n) {
    throw DimensionError(std::string("evaluate: ") + what + " labels cover " +
                         std::to_string(l.identity.size()) + " items, expected " +
                         std::to_string(n));
  }
}

}  // namespace

EvalReport evaluate(const RankingList& ranking, const Labels& query,
                    const Labels& gallery, std::size_t k_max) {
  check_labels(query, ranking.rows(), "query");
  check_labels(gallery, ranking.k(), "gallery");
  if (k_max < 1) throw ConfigError("evaluate: k_max must be >= 1");

  EvalReport report;
  report.cmc.assign(k_max, 0.0);
  report.per_query_ap.assign(ranking.rows(),
                             std::numeric_limits<double>::quiet_NaN());
  std::vector<std::size_t> first_hit_count(k_max, 0);
  std::size_t valid = 0;
  double ap_sum = 0.0;
  for (std::size_t q = 0; q < ranking.rows(); ++q) {
    const auto r = score_query(ranking.indices(q), query.identity[q],
                               query.camera[q], gallery);
    if (!r.valid) {
      ++report.skipped_queries;
      continue;
    }
    ++valid;
    ap_sum += r.ap;
    report.per_query_ap[q] = r.ap;
    if (r.first_hit < k_max) ++first_hit_count[r.first_hit];
  }
  if (valid == 0) return report;
  report.map = ap_sum / static_cast<double>(valid);
  std::size_t cumulative = 0;
  for (std::size_t k = 0; k < k_max; ++k) {
    cumulative += first_hit_count[k];
    report.cmc[k] = static_cast<double>(cumulative) / static_cast<double>(valid);
  }
  return report;
}

EvalReport evaluate(const DistanceMatrix& dist, const Labels& query,
                    const Labels& gallery, std::size_t k_max,
                    std::size_t threads) {
  return evaluate(full_ranking(dist, threads), query, gallery, k_max);
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["map"] = map;
  j["cmc"] = cmc;
  nlohmann::json aps = nlohmann::json::array();
  for (double ap : per_query_ap) {
    if (std::isnan(ap)) {
      aps.push_back(nullptr);
    } else {
      aps.push_back(ap);
    }
  }
  j["per_query_ap"] = std::move(aps);
  j["skipped_queries"] = skipped_queries;
  return j.dump();
}

}  // namespace acp::ranking
