// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "acp/pipeline.hpp"
#include "acp/synthetic.hpp"
#include "acp/train.hpp"
#include "support/oracles.hpp"

namespace p = acp::pipeline;
namespace r = acp::ranking;
using acp::Matrix;

namespace {

const acp::data::SyntheticSplit& split() {
  static const auto s = [] {
    acp::data::SyntheticConfig cfg;
    cfg.train_ids = 30;
    cfg.test_ids = 12;
    cfg.imgs_per_id = 10;
    cfg.seed = 21;
    return acp::data::generate_synthetic(cfg);
  }();
  return s;
}

const acp::model::ACPModel<float>& trained() {
  static const auto m = [] {
    acp::model::ACPModel<float> model(
        acp::model::ACPConfig::desk(split().train.block_dims), 3);
    auto cfg = acp::train::TrainConfig::desk();
    cfg.K = 100;
    cfg.l1 = 16;
    cfg.l2 = 4;
    cfg.epochs = 4;
    cfg.probes_per_epoch = 160;
    acp::train::train(model, split().train, cfg);
    return model;
  }();
  return m;
}

std::vector<std::vector<std::uint32_t>> rankings(const Matrix& q, const Matrix& g) {
  const auto full = r::full_ranking(r::pairwise_distance(q, g, r::Metric::kCosine));
  std::vector<std::vector<std::uint32_t>> out;
  for (std::size_t i = 0; i < full.rows(); ++i)
    out.emplace_back(full.indices(i).begin(), full.indices(i).end());
  return out;
}

/// Multiplies every score of sequence i by 1 + (i mod 3).
class ScaledScorer : public p::CorrelationScorer {
 public:
  explicit ScaledScorer(const acp::model::ACPModel<float>& m) : inner_(m) {}
  std::vector<float> score(const acp::model::SequenceBatch& b, std::size_t k2) override {
    auto s = inner_.score(b, k2);
    for (std::size_t i = 0; i < s.size(); ++i)
      s[i] *= static_cast<float>(1 + (i / b.length) % 3);
    return s;
  }
  std::unique_ptr<p::CorrelationScorer> clone() const override {
    return std::make_unique<ScaledScorer>(*this);
  }

 private:
  p::ModelScorer inner_;
};

}  // namespace

TEST_SUITE("rerank-pipeline") {
  TEST_CASE("neighbors start with the item itself") {
    const auto x = acp::testing::random_matrix(50, 6, 1);
    const auto nb = p::neighbors_self_first(x, 5);
    for (std::uint32_t i = 0; i < 50; ++i) {
      CHECK(nb[i * 5] == i);
      const auto want = acp::testing::cosine_neighbors(x, i, 5);
      for (std::size_t k = 0; k < 5; ++k) CHECK(nb[i * 5 + k] == want[k]);
    }
    Matrix dup(3, 2, {1, 0, 1, 0, 0, 1});
    const auto nd = p::neighbors_self_first(dup, 2);
    CHECK(nd[2] == 1);
    CHECK(nd[3] == 0);
  }

  TEST_CASE("untrained models are refused") {
    acp::model::ACPModel<float> raw(acp::model::ACPConfig::desk({32, 64, 128}), 1);
    CHECK_THROWS_AS(p::ModelScorer{raw}, acp::ConfigError);
  }

  TEST_CASE("uniform scores reproduce average query expansion") {
    const auto& s = split();
    p::UniformScorer uniform;
    p::ExpansionConfig cfg;
    cfg.k1 = 7;
    const auto ex = p::expand_features(s.query, s.gallery, uniform, cfg);
    acp::rerank::QEConfig qe;
    qe.k = 7;
    const auto aq = acp::rerank::expand_split(s.query.concat_normalized(),
                                              s.gallery.concat_normalized(), qe, false);
    CHECK(acp::testing::max_abs_diff(ex.query, aq.query) < 1e-6);
    CHECK(acp::testing::max_abs_diff(ex.gallery, aq.gallery) < 1e-6);
  }

  TEST_CASE("k1 = 1 leaves the baseline ranking unchanged") {
    const auto& s = split();
    p::ModelScorer scorer(trained());
    p::ExpansionConfig cfg;
    cfg.k1 = 1;
    cfg.k2 = 1;
    const auto ex = p::expand_features(s.query, s.gallery, scorer, cfg);
    CHECK(rankings(ex.query, ex.gallery) ==
          rankings(s.query.concat_normalized(), s.gallery.concat_normalized()));
  }

  TEST_CASE("per-probe score scaling does not change the ranking") {
    const auto& s = split();
    p::ModelScorer plain(trained());
    ScaledScorer scaled(trained());
    p::ExpansionConfig cfg;
    cfg.k1 = 10;
    cfg.k2 = 4;
    const auto a = p::expand_features(s.query, s.gallery, plain, cfg);
    const auto b = p::expand_features(s.query, s.gallery, scaled, cfg);
    CHECK(acp::testing::max_abs_diff(a.query, b.query) < 1e-6);
    CHECK(acp::testing::max_abs_diff(a.gallery, b.gallery) < 1e-6);
  }

  TEST_CASE("expansion is single pass and thread invariant") {
    const auto& s = split();
    p::ModelScorer scorer(trained());
    p::ExpansionConfig cfg;
    cfg.k1 = 10;
    cfg.k2 = 4;
    const auto one = p::expand_features(s.query, s.gallery, scorer, cfg);
    cfg.threads = 3;
    const auto three = p::expand_features(s.query, s.gallery, scorer, cfg);
    CHECK(one.query == three.query);
    CHECK(one.gallery == three.gallery);
    // Different chunking visits items in another grouping and order.
    cfg.chunk = 7;
    const auto regrouped = p::expand_features(s.query, s.gallery, scorer, cfg);
    CHECK(acp::testing::max_abs_diff(one.gallery, regrouped.gallery) < 1e-5);

    cfg.space = p::ExpansionSpace::kFused;
    const auto fused = p::expand_features(s.query, s.gallery, scorer, cfg);
    CHECK(fused.query.cols() == trained().config().d);
    p::UniformScorer uniform;
    CHECK_THROWS_AS(p::expand_features(s.query, s.gallery, uniform, cfg),
                    acp::ConfigError);
    cfg.space = p::ExpansionSpace::kBaseline;
    cfg.k2 = 11;
    CHECK_THROWS_AS(p::expand_features(s.query, s.gallery, scorer, cfg),
                    acp::ConfigError);
  }

  TEST_CASE("methods share one protocol and leave inputs untouched") {
    const auto& s = split();
    const auto q0 = s.query;
    const auto g0 = s.gallery;
    p::MethodParams params;
    params.k1 = 10;
    params.k2 = 4;
    params.model = &trained();
    const auto base = p::run_method(p::Method::kBaseline, s.query, s.gallery, params);
    CHECK(base.after.map == base.before.map);
    CHECK(base.after.cmc == base.before.cmc);
    for (auto m : p::all_methods()) {
      const auto a = p::run_method(m, s.query, s.gallery, params);
      const auto b = p::run_method(m, s.query, s.gallery, params);
      MESSAGE(std::string(p::method_name(m)) << " mAP " << a.before.map << " -> " << a.after.map);
      CHECK(a.before.map == base.before.map);
      CHECK(a.after.per_query_ap.size() == b.after.per_query_ap.size());
      CHECK(a.distance == b.distance);
      CHECK(a.peak_rss_bytes > 0);
      CHECK(a.seconds >= 0);
      const auto json = p::result_json(a, params);
      CHECK(json.find("\"peak_rss_bytes\"") != std::string::npos);
    }
    CHECK(s.query == q0);
    CHECK(s.gallery == g0);

    params.model = nullptr;
    CHECK_THROWS_AS(p::run_method(p::Method::kAcp, s.query, s.gallery, params),
                    acp::ConfigError);
    params.memory_budget_bytes = 1024;
    CHECK_THROWS_AS(p::run_method(p::Method::kKReciprocal, s.query, s.gallery, params),
                    acp::ResourceError);
    CHECK_THROWS_AS(p::parse_method("bogus"), acp::ConfigError);
  }

  TEST_CASE("sweep rows match single runs") {
    const auto& s = split();
    p::MethodParams params;
    const auto rows = p::sweep(p::SweepParameter::kK1, {6}, p::Method::kAqe,
                               s.query, s.gallery, params);
    params.k1 = 6;
    const auto single = p::run_method(p::Method::kAqe, s.query, s.gallery, params);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].result.after.map == single.after.map);
    const auto csv = p::sweep_csv(p::SweepParameter::kK1, rows);
    CHECK(csv.rfind("parameter,value,method,map,cmc1,cmc5,cmc10,seconds\nk1,6,aqe,", 0) == 0);
    CHECK_THROWS_AS(p::sweep(p::SweepParameter::kK1, {}, p::Method::kAqe, s.query,
                             s.gallery, params),
                    acp::ConfigError);
  }
}
