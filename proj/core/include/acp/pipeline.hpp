// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "acp/acp_model.hpp"
#include "acp/embedding.hpp"
#include "acp/ranking.hpp"
#include "acp/rerank.hpp"

namespace acp::pipeline {

/// Vectors combined by the expansion.
enum class ExpansionSpace {
  /// Concatenated normalized blocks, the space baseline distances use.
  kBaseline,
  /// Output of the model's fusion stage.
  kFused,
};

ExpansionSpace parse_space(const std::string& name);
const char* space_name(ExpansionSpace space);

struct ExpansionConfig {
  /// Sequence length including the item itself.
  std::size_t k1 = 25;
  std::size_t k2 = 6;
  bool renormalize = true;
  ExpansionSpace space = ExpansionSpace::kBaseline;
  std::size_t threads = 1;
  /// Sequences scored per model call. Fixed so results do not depend on the
  /// thread count.
  std::size_t chunk = 64;

  /// Throws ConfigError unless 1 <= k2 <= k1.
  void validate() const;
};

/// Produces one score per sequence element.
class CorrelationScorer {
 public:
  virtual ~CorrelationScorer() = default;
  /// Scores for `batch`, row-major [batch * length].
  virtual std::vector<float> score(const model::SequenceBatch& batch,
                                   std::size_t k2) = 0;
  /// Independent copy for another worker thread.
  virtual std::unique_ptr<CorrelationScorer> clone() const = 0;
  /// Model behind the scorer, if any; needed for fused-space expansion.
  virtual model::ACPModel<float>* model() { return nullptr; }
};

/// Scores with a trained model. Throws ConfigError for an untrained model.
class ModelScorer : public CorrelationScorer {
 public:
  explicit ModelScorer(const model::ACPModel<float>& model);
  std::vector<float> score(const model::SequenceBatch& batch,
                           std::size_t k2) override;
  std::unique_ptr<CorrelationScorer> clone() const override;
  model::ACPModel<float>* model() override { return &model_; }

 private:
  model::ACPModel<float> model_;
};

/// Equal weight 1/length for every element; reduces expansion to AQE.
class UniformScorer : public CorrelationScorer {
 public:
  std::vector<float> score(const model::SequenceBatch& batch,
                           std::size_t k2) override;
  std::unique_ptr<CorrelationScorer> clone() const override;
};

/// Row i: item i followed by its k - 1 nearest other items of `x` by cosine
/// distance, ties broken by index. Computed in blocks of rows.
std::vector<std::uint32_t> neighbors_self_first(const Matrix& x, std::size_t k,
                                                std::size_t threads = 1);

/// Expands every item of the joint query+gallery pool as the score-weighted
/// sum of its neighbors' vectors. All expansions read the original vectors.
rerank::Expanded expand_features(const data::EmbeddingSet& query,
                                 const data::EmbeddingSet& gallery,
                                 CorrelationScorer& scorer,
                                 const ExpansionConfig& cfg);

// --- methods -------------------------------------------------------------

enum class Method { kBaseline, kAqe, kAlphaQe, kKReciprocal, kAcp };

Method parse_method(const std::string& name);
const char* method_name(Method method);
std::vector<Method> all_methods();

struct MethodParams {
  /// Neighborhood size of every method (k for the QE baselines).
  std::size_t k1 = 25;
  std::size_t k2 = 6;
  double alpha = 3.0;
  double lambda = 0.3;
  ranking::Metric metric = ranking::Metric::kCosine;
  bool renormalize = true;
  ExpansionSpace space = ExpansionSpace::kBaseline;
  std::size_t threads = 1;
  std::uint64_t memory_budget_bytes = 2ull << 30;
  /// CMC depth of the reports.
  std::size_t cmc_depth = 20;
  /// Required for the ACP method.
  const model::ACPModel<float>* model = nullptr;
};

struct MethodResult {
  Method method = Method::kBaseline;
  ranking::EvalReport before;
  ranking::EvalReport after;
  /// Final [queries x gallery] distances.
  ranking::DistanceMatrix distance;
  /// Wall time of the re-ranking stage alone.
  double seconds = 0;
  /// Peak resident set size while the method ran, or of the whole process
  /// when the kernel cannot reset the high-water mark.
  std::uint64_t peak_rss_bytes = 0;
  bool peak_is_per_method = false;
};

/// Runs one method under the shared evaluation protocol. Inputs are not
/// modified.
MethodResult run_method(Method method, const data::EmbeddingSet& query,
                        const data::EmbeddingSet& gallery,
                        const MethodParams& params);

/// JSON object: method, params, timing, memory, before/after metrics.
std::string result_json(const MethodResult& r, const MethodParams& params,
                        bool per_query = false);

/// JSON lines, one object per query: item id and the top `depth` gallery
/// item ids with their distances.
void write_ranking(const MethodResult& r, const data::EmbeddingSet& query,
                   const data::EmbeddingSet& gallery, std::size_t depth,
                   const std::filesystem::path& path);

enum class SweepParameter { kK1, kK2 };
SweepParameter parse_sweep_parameter(const std::string& name);

struct SweepRow {
  std::size_t value = 0;
  MethodResult result;
};

/// One run per value of the swept parameter.
std::vector<SweepRow> sweep(SweepParameter parameter,
                            const std::vector<std::size_t>& values,
                            Method method, const data::EmbeddingSet& query,
                            const data::EmbeddingSet& gallery,
                            const MethodParams& params);

/// Header `parameter,value,method,map,cmc1,cmc5,cmc10,seconds`.
std::string sweep_csv(SweepParameter parameter, const std::vector<SweepRow>& rows);

/// Every method in turn, as a JSON document with a `methods` array.
std::string bench_json(const std::vector<MethodResult>& results,
                       const MethodParams& params);

// --- resources -----------------------------------------------------------

/// Resets the kernel's resident-set high-water mark for this process.
/// Returns false where unsupported.
bool reset_peak_rss();
/// Peak resident set size (VmHWM) in bytes, 0 if unavailable.
std::uint64_t peak_rss_bytes();

}  // namespace acp::pipeline
