// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "acp/pipeline.hpp"

namespace acp::pipeline {
namespace {

ranking::Labels labels_of(const data::EmbeddingSet& set) {
  return {set.identities(), set.cameras()};
}

nlohmann::json summary(const ranking::EvalReport& r) {
  nlohmann::json j{{"map", r.map}, {"skipped_queries", r.skipped_queries}};
  for (std::size_t k : {1, 5, 10}) {
    if (k <= r.cmc.size()) j["cmc" + std::to_string(k)] = r.cmc_at(k);
  }
  return j;
}

nlohmann::json params_json(const MethodParams& p) {
  return {{"k1", p.k1},
          {"k2", p.k2},
          {"alpha", p.alpha},
          {"lambda", p.lambda},
          {"metric", ranking::metric_name(p.metric)},
          {"renormalize", p.renormalize},
          {"space", space_name(p.space)},
          {"threads", p.threads},
          {"memory_budget_bytes", p.memory_budget_bytes}};
}

nlohmann::json result_object(const MethodResult& r, bool per_query) {
  nlohmann::json j{{"method", method_name(r.method)},
                   {"seconds", r.seconds},
                   {"peak_rss_bytes", r.peak_rss_bytes},
                   {"peak_scope", r.peak_is_per_method ? "method" : "process"},
                   {"before", summary(r.before)},
                   {"after", summary(r.after)}};
  if (per_query) {
    j["before"] = nlohmann::json::parse(r.before.to_json());
    j["after"] = nlohmann::json::parse(r.after.to_json());
  }
  return j;
}

}  // namespace

Method parse_method(const std::string& name) {
  for (Method m : all_methods()) {
    if (name == method_name(m)) return m;
  }
  throw ConfigError("unknown method '" + name +
                    "' (expected baseline, aqe, alphaqe, kreciprocal or acp)");
}

const char* method_name(Method method) {
  switch (method) {
    case Method::kBaseline: return "baseline";
    case Method::kAqe: return "aqe";
    case Method::kAlphaQe: return "alphaqe";
    case Method::kKReciprocal: return "kreciprocal";
    case Method::kAcp: return "acp";
  }
  return "?";
}

std::vector<Method> all_methods() {
  return {Method::kBaseline, Method::kAqe, Method::kAlphaQe,
          Method::kKReciprocal, Method::kAcp};
}

MethodResult run_method(Method method, const data::EmbeddingSet& query,
                        const data::EmbeddingSet& gallery,
                        const MethodParams& params) {
  if (query.block_dims != gallery.block_dims) {
    throw DimensionError("query and gallery block layouts differ");
  }
  rerank::KRConfig kr;
  kr.k1 = params.k1;
  kr.k2 = params.k2;
  kr.lambda = params.lambda;
  kr.memory_budget_bytes = params.memory_budget_bytes;
  kr.threads = params.threads;
  if (method == Method::kKReciprocal) {
    // Budget check before any matrix of this run exists.
    kr.validate();
    const auto need = rerank::k_reciprocal_memory_estimate(query.size(),
                                                           gallery.size(), kr);
    if (need > kr.memory_budget_bytes) {
      throw ResourceError("k-reciprocal re-ranking of " +
                              std::to_string(query.size() + gallery.size()) +
                              " items exceeds the memory budget",
                          need, kr.memory_budget_bytes);
    }
  }
  if (method == Method::kAcp && params.model == nullptr) {
    throw ConfigError("the acp method needs a trained checkpoint");
  }

  MethodResult res;
  res.method = method;
  const auto ql = labels_of(query);
  const auto gl = labels_of(gallery);
  const Matrix bq = query.concat_normalized();
  const Matrix bg = gallery.concat_normalized();
  auto base = ranking::pairwise_distance(bq, bg, params.metric, params.threads);
  res.before = ranking::evaluate(base, ql, gl, params.cmc_depth);

  res.peak_is_per_method = reset_peak_rss();
  const auto t0 = std::chrono::steady_clock::now();
  rerank::QEConfig qe;
  qe.k = params.k1;
  qe.alpha = params.alpha;
  qe.renormalize = params.renormalize;
  qe.metric = params.metric;
  qe.threads = params.threads;
  switch (method) {
    case Method::kBaseline:
      res.distance = std::move(base);
      break;
    case Method::kAqe:
    case Method::kAlphaQe: {
      const auto ex = rerank::expand_split(bq, bg, qe, method == Method::kAlphaQe);
      res.distance = ranking::pairwise_distance(ex.query, ex.gallery, params.metric,
                                                params.threads);
      break;
    }
    case Method::kKReciprocal:
      res.distance = rerank::k_reciprocal_rerank(bq, bg, kr).final_distance;
      break;
    case Method::kAcp: {
      ModelScorer scorer(*params.model);
      ExpansionConfig ec;
      ec.k1 = params.k1;
      ec.k2 = std::min(params.k2, params.k1);
      ec.renormalize = params.renormalize;
      ec.space = params.space;
      ec.threads = params.threads;
      const auto ex = expand_features(query, gallery, scorer, ec);
      res.distance = ranking::pairwise_distance(ex.query, ex.gallery, params.metric,
                                                params.threads);
      break;
    }
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.peak_rss_bytes = peak_rss_bytes();
  res.after = ranking::evaluate(res.distance, ql, gl, params.cmc_depth);
  return res;
}

std::string result_json(const MethodResult& r, const MethodParams& params,
                        bool per_query) {
  auto j = result_object(r, per_query);
  j["params"] = params_json(params);
  return j.dump(2);
}

void write_ranking(const MethodResult& r, const data::EmbeddingSet& query,
                   const data::EmbeddingSet& gallery, std::size_t depth,
                   const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const auto top = ranking::topk_neighbors(
      r.distance, std::min(depth, static_cast<std::size_t>(r.distance.cols())));
  for (std::size_t q = 0; q < top.rows(); ++q) {
    nlohmann::json items = nlohmann::json::array();
    nlohmann::json dists = nlohmann::json::array();
    for (std::size_t k = 0; k < top.k(); ++k) {
      items.push_back(gallery.records[top.indices(q)[k]].item_id);
      dists.push_back(top.distances(q)[k]);
    }
    out << nlohmann::json{{"query", query.records[q].item_id},
                          {"gallery", std::move(items)},
                          {"distance", std::move(dists)}}
               .dump()
        << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

SweepParameter parse_sweep_parameter(const std::string& name) {
  if (name == "k1") return SweepParameter::kK1;
  if (name == "k2") return SweepParameter::kK2;
  throw ConfigError("sweep parameter must be k1 or k2, got '" + name + "'");
}

std::vector<SweepRow> sweep(SweepParameter parameter,
                            const std::vector<std::size_t>& values,
                            Method method, const data::EmbeddingSet& query,
                            const data::EmbeddingSet& gallery,
                            const MethodParams& params) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (std::size_t v : values) {
    MethodParams p = params;
    (parameter == SweepParameter::kK1 ? p.k1 : p.k2) = v;
    rows.push_back({v, run_method(method, query, gallery, p)});
    rows.back().result.distance = Matrix();
  }
  return rows;
}

std::string sweep_csv(SweepParameter parameter, const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "parameter,value,method,map,cmc1,cmc5,cmc10,seconds\n";
  char buf[160];
  for (const auto& row : rows) {
    const auto& a = row.result.after;
    const auto cmc = [&](std::size_t k) {
      return k <= a.cmc.size() ? a.cmc_at(k) : std::nan("");
    };
    std::snprintf(buf, sizeof buf, "%s,%zu,%s,%.6f,%.6f,%.6f,%.6f,%.4f\n",
                  parameter == SweepParameter::kK1 ? "k1" : "k2", row.value,
                  method_name(row.result.method), a.map, cmc(1), cmc(5), cmc(10),
                  row.result.seconds);
    out << buf;
  }
  return out.str();
}

std::string bench_json(const std::vector<MethodResult>& results,
                       const MethodParams& params) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& r : results) methods.push_back(result_object(r, false));
  return nlohmann::json{{"params", params_json(params)},
                        {"methods", std::move(methods)}}
      .dump(2);
}

}  // namespace acp::pipeline
