// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include "acp/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace acp::data {
namespace {

using Rng = std::mt19937_64;

std::vector<float> random_direction(std::size_t dim, double norm, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dim);
  double ss = 0;
  for (auto& x : v) {
    x = gauss(rng);
    ss += x * x;
  }
  const double f = norm / std::sqrt(ss);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] * f);
  return out;
}

using BlockVectors = std::vector<std::vector<float>>;

class Generator {
 public:
  explicit Generator(const SyntheticConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    d_min_ = *std::min_element(cfg.block_dims.begin(), cfg.block_dims.end());
    for (std::uint32_t c = 0; c < cfg.cameras; ++c) {
      BlockVectors bias;
      for (auto d : cfg.block_dims) {
        bias.push_back(cfg.camera_bias ? random_direction(d, 0.5 * cfg.sigma, rng_)
                                       : std::vector<float>(d, 0.0f));
      }
      camera_bias_.push_back(std::move(bias));
    }
  }

  BlockVectors center() {
    BlockVectors c;
    for (auto d : cfg_.block_dims) c.push_back(random_direction(d, 1.0, rng_));
    return c;
  }

  std::uint32_t camera() {
    return static_cast<std::uint32_t>(
        std::uniform_int_distribution<std::uint32_t>(0, cfg_.cameras - 1)(rng_));
  }

  EmbeddingRecord image(const BlockVectors& center, std::uint32_t identity,
                        std::uint32_t camera) {
    EmbeddingRecord r;
    r.item_id = next_item_++;
    r.identity = identity;
    r.camera = camera;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t b = 0; b < cfg_.block_dims.size(); ++b) {
      const std::size_t d = cfg_.block_dims[b];
      const double std_dev =
          cfg_.sigma * std::sqrt(static_cast<double>(d_min_) / static_cast<double>(d));
      std::vector<float> v(d);
      for (std::size_t i = 0; i < d; ++i) {
        v[i] = static_cast<float>(center[b][i] + camera_bias_[camera][b][i] +
                                  std_dev * gauss(rng_));
      }
      r.blocks.push_back(std::move(v));
    }
    return r;
  }

 private:
  const SyntheticConfig& cfg_;
  Rng rng_;
  std::uint32_t d_min_ = 1;
  std::vector<BlockVectors> camera_bias_;
  std::uint64_t next_item_ = 0;
};

}  // namespace

SyntheticSplit generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.train_ids < 2 || cfg.test_ids < 2) {
    throw ConfigError("synthetic data needs at least 2 train and 2 test ids");
  }
  if (cfg.imgs_per_id < 2) throw ConfigError("imgs_per_id must be >= 2");
  if (cfg.cameras < 2) {
    throw ConfigError(
        "cross-camera matching needs at least 2 cameras, got " +
        std::to_string(cfg.cameras));
  }
  if (!(cfg.sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
  if (cfg.block_dims.empty() ||
      std::find(cfg.block_dims.begin(), cfg.block_dims.end(), 0u) !=
          cfg.block_dims.end()) {
    throw ConfigError("block dimensions must be positive");
  }
  if (cfg.queries_per_id == 0 || cfg.queries_per_id >= cfg.imgs_per_id) {
    throw ConfigError("queries_per_id must lie in [1, imgs_per_id)");
  }
  if (!(cfg.distractor_rate >= 0.0)) {
    throw ConfigError("distractor_rate must be >= 0");
  }

  Generator gen(cfg);
  SyntheticSplit out;
  out.train.role = Role::kTrain;
  out.query.role = Role::kQuery;
  out.gallery.role = Role::kGallery;
  out.train.block_dims = out.query.block_dims = out.gallery.block_dims =
      cfg.block_dims;

  std::uint32_t identity = 0;
  for (std::uint32_t i = 0; i < cfg.train_ids; ++i, ++identity) {
    const auto c = gen.center();
    for (std::uint32_t k = 0; k < cfg.imgs_per_id; ++k) {
      out.train.records.push_back(gen.image(c, identity, gen.camera()));
    }
  }

  for (std::uint32_t i = 0; i < cfg.test_ids; ++i, ++identity) {
    const auto c = gen.center();
    std::vector<std::uint32_t> cams(cfg.imgs_per_id);
    for (auto& cam : cams) cam = gen.camera();

    // Queries prefer distinct cameras; the rest go to the gallery.
    std::vector<std::size_t> query_slots;
    std::vector<bool> taken(cams.size(), false);
    for (std::size_t k = 0;
         k < cams.size() && query_slots.size() < cfg.queries_per_id; ++k) {
      const bool fresh = std::none_of(
          query_slots.begin(), query_slots.end(),
          [&](std::size_t q) { return cams[q] == cams[k]; });
      if (fresh) {
        query_slots.push_back(k);
        taken[k] = true;
      }
    }
    for (std::size_t k = 0;
         k < cams.size() && query_slots.size() < cfg.queries_per_id; ++k) {
      if (!taken[k]) {
        query_slots.push_back(k);
        taken[k] = true;
      }
    }
    std::vector<std::size_t> gallery_slots;
    for (std::size_t k = 0; k < cams.size(); ++k)
      if (!taken[k]) gallery_slots.push_back(k);

    // Every query needs a gallery match seen by a different camera.
    for (std::size_t q : query_slots) {
      const bool ok = std::any_of(
          gallery_slots.begin(), gallery_slots.end(),
          [&](std::size_t g) { return cams[g] != cams[q]; });
      if (!ok) cams[gallery_slots.front()] = (cams[q] + 1) % cfg.cameras;
    }

    for (std::size_t q : query_slots)
      out.query.records.push_back(gen.image(c, identity, cams[q]));
    for (std::size_t g : gallery_slots)
      out.gallery.records.push_back(gen.image(c, identity, cams[g]));
  }

  const auto distractors = static_cast<std::size_t>(
      std::llround(cfg.distractor_rate *
                   static_cast<double>(out.gallery.records.size())));
  for (std::size_t i = 0; i < distractors; ++i, ++identity) {
    const auto c = gen.center();
    out.gallery.records.push_back(gen.image(c, identity, gen.camera()));
  }
  return out;
}

}  // namespace acp::data
