// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "acp/pipeline.hpp"

namespace acp::pipeline {
namespace {

Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.values().begin(), top.values().end(), out.values().begin());
  std::copy(bottom.values().begin(), bottom.values().end(),
            out.values().begin() + static_cast<std::ptrdiff_t>(top.size()));
  return out;
}

Matrix take_rows(const Matrix& x, std::size_t lo, std::size_t hi) {
  Matrix out(hi - lo, x.cols());
  std::copy(x.values().begin() + static_cast<std::ptrdiff_t>(lo * x.cols()),
            x.values().begin() + static_cast<std::ptrdiff_t>(hi * x.cols()),
            out.values().begin());
  return out;
}

}  // namespace

ExpansionSpace parse_space(const std::string& name) {
  if (name == "baseline") return ExpansionSpace::kBaseline;
  if (name == "fused") return ExpansionSpace::kFused;
  throw ConfigError("unknown expansion space '" + name +
                    "' (expected baseline or fused)");
}

const char* space_name(ExpansionSpace space) {
  return space == ExpansionSpace::kBaseline ? "baseline" : "fused";
}

void ExpansionConfig::validate() const {
  if (k1 < 1) throw ConfigError("expansion needs k1 >= 1");
  if (k2 < 1 || k2 > k1) {
    throw ConfigError("expansion needs 1 <= k2 <= k1, got k2=" +
                      std::to_string(k2) + " k1=" + std::to_string(k1));
  }
  if (threads < 1 || chunk < 1) {
    throw ConfigError("expansion threads and chunk must be >= 1");
  }
}

ModelScorer::ModelScorer(const model::ACPModel<float>& model) : model_(model) {
  if (model_.steps() == 0) {
    throw ConfigError("refusing to expand with an untrained model (0 steps)");
  }
}

std::vector<float> ModelScorer::score(const model::SequenceBatch& batch,
                                      std::size_t k2) {
  return model_.score(batch, std::min(k2, batch.length));
}

std::unique_ptr<CorrelationScorer> ModelScorer::clone() const {
  return std::make_unique<ModelScorer>(model_);
}

std::vector<float> UniformScorer::score(const model::SequenceBatch& batch,
                                        std::size_t) {
  return std::vector<float>(batch.rows(),
                            1.0f / static_cast<float>(batch.length));
}

std::unique_ptr<CorrelationScorer> UniformScorer::clone() const {
  return std::make_unique<UniformScorer>();
}

std::vector<std::uint32_t> neighbors_self_first(const Matrix& x, std::size_t k,
                                                std::size_t threads) {
  const std::size_t n = x.rows();
  if (k < 1 || k > n) {
    throw ConfigError("neighborhood of " + std::to_string(k) +
                      " exceeds the pool of " + std::to_string(n));
  }
  std::vector<std::uint32_t> out(n * k);
  const std::size_t want = std::min(n, k + 1);
  constexpr std::size_t kBlock = 512;
  for (std::size_t lo = 0; lo < n; lo += kBlock) {
    const std::size_t hi = std::min(n, lo + kBlock);
    const auto dist = ranking::pairwise_distance(take_rows(x, lo, hi), x,
                                                 ranking::Metric::kCosine, threads);
    const auto rank = ranking::topk_neighbors(dist, want, threads);
    for (std::size_t r = 0; r < hi - lo; ++r) {
      const std::size_t i = lo + r;
      std::uint32_t* row = out.data() + i * k;
      row[0] = static_cast<std::uint32_t>(i);
      std::size_t filled = 1;
      for (std::uint32_t j : rank.indices(r)) {
        if (filled == k) break;
        if (j != i) row[filled++] = j;
      }
    }
  }
  return out;
}

rerank::Expanded expand_features(const data::EmbeddingSet& query,
                                 const data::EmbeddingSet& gallery,
                                 CorrelationScorer& scorer,
                                 const ExpansionConfig& cfg) {
  cfg.validate();
  if (query.block_dims != gallery.block_dims) {
    throw DimensionError("query and gallery block layouts differ");
  }
  const std::size_t nq = query.size();
  const std::size_t n = nq + gallery.size();
  if (cfg.k1 > n) {
    throw ConfigError("k1=" + std::to_string(cfg.k1) + " exceeds the pool of " +
                      std::to_string(n) + " items");
  }

  const Matrix base = stack_rows(query.concat_normalized(), gallery.concat_normalized());
  std::vector<Matrix> blocks;
  for (std::size_t b = 0; b < query.block_count(); ++b)
    blocks.push_back(stack_rows(query.block_matrix(b), gallery.block_matrix(b)));
  const auto nbrs = neighbors_self_first(base, cfg.k1, cfg.threads);

  Matrix vectors;
  if (cfg.space == ExpansionSpace::kBaseline) {
    vectors = base;
  } else {
    auto* m = scorer.model();
    if (m == nullptr) {
      throw ConfigError("fused-space expansion needs a model-backed scorer");
    }
    vectors = m->embed(blocks);
  }

  const std::size_t k1 = cfg.k1;
  const std::size_t dim = vectors.cols();
  const std::size_t chunks = (n + cfg.chunk - 1) / cfg.chunk;
  const std::size_t workers = std::min(cfg.threads, chunks);
  std::vector<std::unique_ptr<CorrelationScorer>> clones;
  for (std::size_t w = 1; w < workers; ++w) clones.push_back(scorer.clone());

  Matrix out(n, dim);
  // Static chunk-to-worker assignment; each chunk is scored identically
  // whatever the worker count.
  parallel_for(workers, workers, [&](std::size_t w) {
    CorrelationScorer& sc = w == 0 ? scorer : *clones[w - 1];
    std::vector<double> acc(dim);
    for (std::size_t c = w; c < chunks; c += workers) {
      const std::size_t lo = c * cfg.chunk;
      const std::size_t hi = std::min(n, lo + cfg.chunk);
      model::SequenceBatch batch{hi - lo, k1, {}};
      for (const auto& src : blocks) {
        Matrix m(batch.rows(), src.cols());
        for (std::size_t r = 0; r < batch.rows(); ++r) {
          const auto from = src.row_span(nbrs[lo * k1 + r]);
          std::copy(from.begin(), from.end(), m.row_span(r).begin());
        }
        batch.blocks.push_back(std::move(m));
      }
      const auto s = sc.score(batch, cfg.k2);
      for (std::size_t i = lo; i < hi; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < k1; ++j) {
          const double w_ij = s[(i - lo) * k1 + j];
          const auto v = vectors.row_span(nbrs[i * k1 + j]);
          for (std::size_t d = 0; d < dim; ++d) acc[d] += w_ij * v[d];
        }
        double scale = 1.0;
        if (cfg.renormalize) {
          double ss = 0;
          for (double a : acc) ss += a * a;
          scale = ss > 0 ? 1.0 / std::sqrt(ss) : 1.0;
        }
        auto row = out.row_span(i);
        for (std::size_t d = 0; d < dim; ++d)
          row[d] = static_cast<float>(acc[d] * scale);
      }
    }
  });
  return {take_rows(out, 0, nq), take_rows(out, nq, n)};
}

}  // namespace acp::pipeline
