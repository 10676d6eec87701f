// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "acp/rerank.hpp"
#include "support/oracles.hpp"

namespace q = acp::rerank;
namespace r = acp::ranking;
using acp::Matrix;
using acp::testing::random_matrix;

TEST_SUITE("classic-rerank") {
  TEST_CASE("aqe examples and naive oracle") {
    q::QEConfig cfg;
    cfg.renormalize = false;
    cfg.k = 1;
    const auto x = random_matrix(10, 6, 1);
    CHECK(q::aqe(x, cfg) == x);

    cfg.k = 2;
    Matrix twins(2, 3, {1, 2, 3, 1, 2, 3});
    CHECK(q::aqe(twins, cfg) == twins);

    cfg.k = 3;
    const auto got = q::aqe(x, cfg);
    const auto want = acp::testing::naive_qe(x, 3, 0.0, false, false);
    CHECK(acp::testing::max_abs_diff(got, want) < 1e-6);

    cfg.renormalize = true;
    const auto want_n = acp::testing::naive_qe(x, 3, 0.0, false, true);
    CHECK(acp::testing::max_abs_diff(q::aqe(x, cfg), want_n) < 1e-6);
    cfg.k = 11;
    CHECK_THROWS_AS(q::aqe(x, cfg), acp::ConfigError);
  }

  TEST_CASE("alpha qe oracle, limits and weight ordering") {
    const auto x = random_matrix(20, 8, 2);
    q::QEConfig cfg;
    cfg.k = 5;
    cfg.alpha = 3.0;
    const auto got = q::alpha_qe(x, cfg);
    CHECK(acp::testing::max_abs_diff(got, acp::testing::naive_qe(x, 5, 3.0, true, true)) <
          1e-6);

    // alpha = 0 gives uniform weights on normalized rows; the ranking matches
    // AQE over the same normalized rows.
    cfg.alpha = 0.0;
    const auto a0 = q::alpha_qe(x, cfg);
    const auto xn = acp::testing::normalize_rows(x);
    const auto aq = q::aqe(xn, cfg);
    const auto ra = r::full_ranking(r::pairwise_distance(a0, a0, r::Metric::kCosine));
    const auto rb = r::full_ranking(r::pairwise_distance(aq, aq, r::Metric::kCosine));
    for (std::size_t i = 0; i < 20; ++i)
      CHECK(std::equal(ra.indices(i).begin(), ra.indices(i).end(),
                       rb.indices(i).begin()));

    // Large alpha: the self term (similarity 1) dominates.
    cfg.alpha = 64.0;
    const auto big = q::alpha_qe(x, cfg);
    for (std::size_t i = 0; i < 20; ++i) {
      double cos = 0;
      for (std::size_t c = 0; c < 8; ++c) cos += double(big(i, c)) * xn(i, c);
      CHECK(cos > 0.999);
    }

    // Weights never increase with rank for distinct similarities.
    for (std::size_t i = 0; i < 20; ++i) {
      const auto w = acp::testing::alpha_weights(xn, i, 5, 3.0);
      for (std::size_t k = 1; k < w.size(); ++k) CHECK(w[k] <= w[k - 1]);
    }
  }

  TEST_CASE("expansion is permutation equivariant") {
    const auto x = random_matrix(15, 5, 3);
    std::vector<std::size_t> perm(15);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
    Matrix xp(15, 5);
    for (std::size_t i = 0; i < 15; ++i)
      for (std::size_t c = 0; c < 5; ++c) xp(i, c) = x(perm[i], c);
    q::QEConfig cfg;
    cfg.k = 4;
    for (bool weighted : {false, true}) {
      const auto a = weighted ? q::alpha_qe(x, cfg) : q::aqe(x, cfg);
      const auto b = weighted ? q::alpha_qe(xp, cfg) : q::aqe(xp, cfg);
      for (std::size_t i = 0; i < 15; ++i)
        for (std::size_t c = 0; c < 5; ++c) CHECK(b(i, c) == a(perm[i], c));
    }
  }

  TEST_CASE("split expansion over the joint pool") {
    const auto qm = random_matrix(4, 6, 5);
    const auto gm = random_matrix(12, 6, 6);
    q::QEConfig cfg;
    cfg.k = 3;
    const auto joint = q::expand_split(qm, gm, cfg, false);
    Matrix pool(16, 6);
    std::copy(qm.values().begin(), qm.values().end(), pool.values().begin());
    std::copy(gm.values().begin(), gm.values().end(), pool.values().begin() + 24);
    const auto all = q::aqe(pool, cfg);
    for (std::size_t c = 0; c < 6; ++c) {
      CHECK(joint.query(1, c) == all(1, c));
      CHECK(joint.gallery(2, c) == all(6, c));
    }
    cfg.joint_pool = false;
    const auto split = q::expand_split(qm, gm, cfg, false);
    CHECK(split.gallery == q::aqe(gm, cfg));
  }

  TEST_CASE("half-size neighborhood rounds half to even") {
    for (std::size_t k1 = 1; k1 < 40; ++k1) {
      CHECK(q::stages::half_k(k1) ==
            static_cast<std::size_t>(std::nearbyint(k1 / 2.0)));
    }
  }

  TEST_CASE("reciprocal sets are symmetric") {
    const auto x = random_matrix(40, 5, 7);
    const auto rank = r::topk_neighbors(
        r::pairwise_distance(x, x, r::Metric::kEuclidean), 7);
    const auto sets = q::stages::reciprocal_sets(rank, 6);
    for (std::uint32_t p = 0; p < 40; ++p) {
      CHECK(std::binary_search(sets[p].begin(), sets[p].end(), p));
      for (std::uint32_t g : sets[p])
        CHECK(std::binary_search(sets[g].begin(), sets[g].end(), p));
    }
  }

  TEST_CASE("jaccard distance matches a brute-force implementation") {
    for (std::uint64_t seed : {8u, 9u, 10u}) {
      const auto qm = random_matrix(3, 4, seed);
      const auto gm = random_matrix(5, 4, seed + 100);
      q::KRConfig cfg;
      cfg.k1 = 3;
      cfg.k2 = 2;
      const auto got = q::k_reciprocal_rerank(qm, gm, cfg);
      const auto want = acp::testing::brute_force_jaccard(qm, gm, 3, 2);
      CHECK(acp::testing::max_abs_diff(got.jaccard, want) < 1e-6);
    }
    const auto qm = random_matrix(6, 5, 11);
    const auto gm = random_matrix(14, 5, 12);
    q::KRConfig cfg;
    cfg.k1 = 6;
    cfg.k2 = 3;
    CHECK(acp::testing::max_abs_diff(q::k_reciprocal_rerank(qm, gm, cfg).jaccard,
                                     acp::testing::brute_force_jaccard(qm, gm, 6, 3)) <
          1e-6);
  }

  TEST_CASE("lambda = 1 keeps the original ranking") {
    const auto qm = random_matrix(10, 6, 13);
    const auto gm = random_matrix(40, 6, 14);
    q::KRConfig cfg;
    cfg.k1 = 8;
    cfg.k2 = 3;
    cfg.lambda = 1.0;
    const auto res = q::k_reciprocal_rerank(qm, gm, cfg);
    const auto a = r::full_ranking(res.final_distance);
    const auto b = r::full_ranking(r::pairwise_distance(qm, gm, r::Metric::kEuclidean));
    CHECK(a.rows() == b.rows());
    for (std::size_t i = 0; i < 10; ++i)
      CHECK(std::equal(a.indices(i).begin(), a.indices(i).end(), b.indices(i).begin()));
  }

  TEST_CASE("separated clusters stay separated") {
    std::mt19937_64 rng(15);
    std::normal_distribution<float> g(0.f, 0.05f);
    Matrix gm(20, 3);
    for (std::size_t i = 0; i < 20; ++i) {
      const float base = i < 10 ? 0.f : 10.f;
      for (std::size_t c = 0; c < 3; ++c) gm(i, c) = base + g(rng);
    }
    Matrix qm(1, 3, {0.02f, -0.01f, 0.03f});
    q::KRConfig cfg;
    cfg.k1 = 6;
    cfg.k2 = 3;
    const auto res = q::k_reciprocal_rerank(qm, gm, cfg);
    const auto rank = r::full_ranking(res.final_distance);
    for (std::size_t k = 0; k < 10; ++k) CHECK(rank.indices(0)[k] < 10);
  }

  TEST_CASE("config and budget errors") {
    const auto qm = random_matrix(2, 3, 16);
    const auto gm = random_matrix(5, 3, 17);
    q::KRConfig cfg;
    cfg.k1 = 5;
    cfg.k2 = 2;
    CHECK_THROWS_AS(q::k_reciprocal_rerank(qm, gm, cfg), acp::ConfigError);
    cfg.k1 = 3;
    cfg.k2 = 4;
    CHECK_THROWS_AS(q::k_reciprocal_rerank(qm, gm, cfg), acp::ConfigError);
    cfg.k2 = 2;
    cfg.memory_budget_bytes = 64;
    try {
      q::k_reciprocal_rerank(qm, gm, cfg);
      FAIL("expected a resource error");
    } catch (const acp::ResourceError& e) {
      CHECK(e.required_bytes() > 64);
      CHECK(e.exit_code() == acp::ExitCode::kResource);
    }
  }
}
