// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "acp/acp_model.hpp"
#include "support/gradcheck.hpp"

namespace m = acp::model;
namespace t = acp::tensor;

namespace {

m::ACPConfig small_config() {
  m::ACPConfig c;
  c.block_dims = {5, 7, 6};
  c.d = 16;
  c.heads = 2;
  c.n_layers = 2;
  c.n_mem = 2;
  c.d_m = 8;
  return c;
}

m::SequenceBatch random_batch(const std::vector<std::uint32_t>& dims,
                              std::size_t batch, std::size_t length,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.f, 1.f);
  m::SequenceBatch s{batch, length, {}};
  for (auto d : dims) {
    acp::Matrix x(batch * length, d);
    for (auto& v : x.values()) v = g(rng);
    s.blocks.push_back(std::move(x));
  }
  return s;
}

/// Reorders the rows of every sequence by `perm` (a permutation of
/// 0..length-1).
m::SequenceBatch permute(const m::SequenceBatch& s,
                         const std::vector<std::size_t>& perm) {
  m::SequenceBatch out = s;
  for (std::size_t b = 0; b < s.blocks.size(); ++b) {
    for (std::size_t q = 0; q < s.batch; ++q) {
      for (std::size_t j = 0; j < s.length; ++j) {
        const auto src = s.blocks[b].row_span(q * s.length + perm[j]);
        std::copy(src.begin(), src.end(),
                  out.blocks[b].row_span(q * s.length + j).begin());
      }
    }
  }
  return out;
}

template <typename T>
t::Tensor<T> constant_rows(std::size_t rows, std::size_t cols,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<T> row(cols);
  for (auto& v : row) v = static_cast<T>(g(rng));
  t::Tensor<T> out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(row.begin(), row.end(), out.row_span(r).begin());
  return out;
}

bool row_stochastic(const t::AttentionTrace<float>& trace, double tol) {
  for (const auto& w : trace.weights) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double total = 0;
      for (float v : w.row_span(r)) total += v;
      if (std::abs(total - 1.0) > tol) return false;
    }
  }
  return true;
}

}  // namespace

TEST_SUITE("acp-model") {
  TEST_CASE("config validation") {
    auto c = small_config();
    CHECK_NOTHROW(c.validate());
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), acp::ConfigError);
    c = small_config();
    c.d_m = 16;
    CHECK_THROWS_AS(c.validate(), acp::ConfigError);
    c = small_config();
    c.n_mem = 0;
    CHECK_THROWS_AS(c.validate(), acp::ConfigError);
  }

  TEST_CASE("parameter count is an exact function of the config") {
    const m::ACPModel<float> desk(m::ACPConfig::desk({32, 64, 128}));
    CHECK(desk.parameter_count() == 46025);
    auto c = m::ACPConfig::desk({32, 64, 128});
    c.refine = false;
    CHECK(m::ACPModel<float>(c).parameter_count() == 46025 - 4288);
    c = m::ACPConfig::desk({32, 64, 128});
    c.share_kv = true;
    CHECK(m::ACPModel<float>(c).parameter_count() == 46025 - 2 * 32 * 7 * 16);
  }

  TEST_CASE("full pipeline gradient matches finite differences in 64-bit") {
    auto cfg = small_config();
    cfg.block_dims = {6, 5, 7};
    m::ACPModel<double> model(cfg, 3);
    const auto seq = random_batch(cfg.block_dims, 2, 8, 4);
    std::vector<t::Parameter<double>*> params;
    for (auto& p : model.parameters()) params.push_back(&p);
    const auto r = acp::testing::gradcheck(params, [&](t::Tape<double>& tape) {
      t::Rng rng(11);
      m::Forward<double> fwd{tape, t::Mode::kTrain, &rng, nullptr};
      const auto s = model.predict(fwd, seq, 3);
      return t::mean(t::mul(s, tape.constant(
                                   t::Tensor<double>(s.rows(), 1, 0.37))));
    });
    CHECK(r.checked > 1000);
    CHECK_MESSAGE(r.max_rel_error < 1e-3, r.worst);
  }

  TEST_CASE("fusion: duplicates agree and block scale is absorbed") {
    m::ACPModel<float> model(small_config(), 1);
    auto seq = random_batch(small_config().block_dims, 1, 4, 2);
    for (auto& b : seq.blocks) {
      const auto r0 = b.row_span(0);
      std::copy(r0.begin(), r0.end(), b.row_span(2).begin());
    }
    t::Tape<float> tape;
    m::Forward<float> fwd{tape, t::Mode::kEval};
    model.bind(fwd);
    const auto x = model.fuse(fwd, seq);
    for (std::size_t c = 0; c < x.cols(); ++c)
      CHECK(x.value()(0, c) == x.value()(2, c));

    auto scaled = seq;
    for (auto& v : scaled.blocks[1].values()) v *= 10.f;
    const auto y = model.fuse(fwd, scaled);
    for (std::size_t i = 0; i < x.value().size(); ++i)
      CHECK(std::abs(x.value()[i] - y.value()[i]) < 1e-5);

    t::Rng rng(1);
    m::Forward<float> train{tape, t::Mode::kTrain, &rng};
    CHECK_THROWS_AS(model.fuse(train, random_batch(small_config().block_dims, 3,
                                                   1, 5)),
                    acp::DegenerateBatchError);
  }

  TEST_CASE("encoder: fixed point, stochastic attention, equivariance") {
    m::ACPModel<float> model(small_config(), 2);
    t::Tape<float> tape;
    m::ACPTrace<float> trace;
    m::Forward<float> fwd{tape, t::Mode::kEval, nullptr, &trace};
    model.bind(fwd);
    const auto same = model.encode(fwd, tape.constant(constant_rows<float>(6, 16, 3)), 6);
    for (std::size_t r = 1; r < 6; ++r)
      for (std::size_t c = 0; c < 16; ++c)
        CHECK(same.value()(r, c) == doctest::Approx(same.value()(0, c)).epsilon(1e-5));
    REQUIRE(trace.encoder.size() == 2);
    for (const auto& tr : trace.encoder) CHECK(row_stochastic(tr, 1e-6));

    std::mt19937_64 rng(4);
    std::normal_distribution<float> g;
    t::Tensor<float> x(7, 16);
    for (auto& v : x.values()) v = g(rng);
    const std::vector<std::size_t> perm{0, 3, 1, 6, 2, 5, 4};
    t::Tensor<float> xp(7, 16);
    for (std::size_t r = 0; r < 7; ++r)
      for (std::size_t c = 0; c < 16; ++c) xp(r, c) = x(perm[r], c);
    const auto z = model.encode(fwd, tape.constant(x), 7);
    const auto zp = model.encode(fwd, tape.constant(xp), 7);
    for (std::size_t r = 0; r < 7; ++r)
      for (std::size_t c = 0; c < 16; ++c)
        CHECK(std::abs(zp.value()(r, c) - z.value()(perm[r], c)) < 1e-5);
  }

  TEST_CASE("memory initialization over identical neighbors is uniform") {
    m::ACPModel<float> model(small_config(), 3);
    t::Tape<float> tape;
    m::ACPTrace<float> trace;
    m::Forward<float> fwd{tape, t::Mode::kEval, nullptr, &trace};
    model.bind(fwd);
    const auto z = tape.constant(constant_rows<float>(5, 16, 6));
    const auto mem = model.init_memory(fwd, z, 5);
    CHECK(mem.rows() == 2);
    CHECK(mem.cols() == 16);
    REQUIRE(trace.memory.weights.size() == 2);
    for (const auto& w : trace.memory.weights)
      for (float v : w.values()) CHECK(v == doctest::Approx(0.2f).epsilon(1e-6));

    // Identical keys make M'_i = z_1 W^v_i regardless of the query.
    const auto& wv = model.parameter("mem.wv").value;
    t::Tape<float> tp;
    const auto q = tp.constant(t::Tensor<float>(1, 16, 0.3f));
    const auto expected = t::matmul(tp.constant(z.value()), tp.constant(wv));
    const auto got = t::attention(q, tp.constant(t::Tensor<float>(5, 16, 0.f)),
                                  expected, t::AttentionLayout{2, 1, 5}, 1.f);
    for (std::size_t c = 0; c < 16; ++c)
      CHECK(got.value()(0, c) == doctest::Approx(expected.value()(0, c)));
  }

  TEST_CASE("refinement: k2 = 1 and identical keys") {
    m::ACPModel<float> model(small_config(), 4);
    t::Tape<float> tape;
    m::ACPTrace<float> trace;
    m::Forward<float> fwd{tape, t::Mode::kEval, nullptr, &trace};
    model.bind(fwd);
    std::mt19937_64 rng(5);
    std::normal_distribution<float> g;
    t::Tensor<float> mem(2, 16);
    for (auto& v : mem.values()) v = g(rng);
    auto zt = constant_rows<float>(8, 16, 7);
    const auto mv = tape.constant(mem);
    model.refine_memory(fwd, mv, tape.constant(zt), 8, 1);
    for (const auto& w : trace.refine.weights)
      for (float v : w.values()) CHECK(v == 1.0f);

    const auto r2 = model.refine_memory(fwd, mv, tape.constant(zt), 8, 2);
    for (std::size_t k2 : {4u, 8u}) {
      const auto rk = model.refine_memory(fwd, mv, tape.constant(zt), 8, k2);
      CHECK(row_stochastic(trace.refine, 1e-6));
      for (std::size_t i = 0; i < rk.value().size(); ++i)
        CHECK(std::abs(rk.value()[i] - r2.value()[i]) < 1e-5);
    }
    CHECK_THROWS_AS(model.refine_memory(fwd, mv, tape.constant(zt), 8, 0),
                    acp::ConfigError);
  }

  TEST_CASE("reconstruction: duplicate rows, zero memory, span") {
    m::ACPModel<float> model(small_config(), 5);
    t::Tape<float> tape;
    m::Forward<float> fwd{tape, t::Mode::kEval};
    model.bind(fwd);
    auto z = constant_rows<float>(4, 16, 8);
    z(3, 0) += 1.f;
    const auto mem = tape.constant(t::Tensor<float>(2, 16, 0.f));
    const auto out = model.reconstruct(fwd, tape.constant(z), mem, 4);
    // With M* = 0 every value row equals the value bias, so the output is
    // b_v W_o + b_o for every neighbor.
    t::Tape<float> tp;
    const auto expect = t::add(
        t::matmul(tp.constant(model.parameter("rcs.mha.v.b").value),
                  tp.constant(model.parameter("rcs.mha.o.w").value)),
        tp.constant(model.parameter("rcs.mha.o.b").value));
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 16; ++c)
        CHECK(out.value()(r, c) == doctest::Approx(expect.value()[c]).epsilon(1e-5));

    std::mt19937_64 rng(9);
    std::normal_distribution<float> g;
    t::Tensor<float> mv(2, 16);
    for (auto& v : mv.values()) v = g(rng);
    const auto out2 = model.reconstruct(fwd, tape.constant(z), tape.constant(mv), 4);
    for (std::size_t c = 0; c < 16; ++c)
      CHECK(out2.value()(0, c) == out2.value()(1, c));
  }

  TEST_CASE("prediction range, determinism and permutation equivariance") {
    m::ACPModel<float> model(small_config(), 6);
    const auto seq = random_batch(small_config().block_dims, 3, 8, 10);
    const auto s1 = model.score(seq, 3);
    const auto s2 = model.score(seq, 3);
    CHECK(s1 == s2);
    for (float v : s1) {
      CHECK(v > 0.f);
      CHECK(v < 1.f);
    }
    // Probe fixed; permutation within the top-k2 and within the remainder.
    const std::vector<std::size_t> perm{0, 2, 1, 6, 3, 7, 5, 4};
    const auto sp = model.score(permute(seq, perm), 3);
    for (std::size_t q = 0; q < 3; ++q)
      for (std::size_t j = 0; j < 8; ++j)
        CHECK(std::abs(sp[q * 8 + j] - s1[q * 8 + perm[j]]) < 1e-5);

    m::ACPTrace<float> trace;
    model.score(seq, 3, &trace);
    CHECK(row_stochastic(trace.memory, 1e-6));
    CHECK(row_stochastic(trace.refine, 1e-6));
    CHECK(row_stochastic(trace.reconstruct, 1e-6));
  }

  TEST_CASE("temperature clamp and snapshot restore") {
    m::ACPModel<float> model(small_config(), 7);
    auto& mu = model.parameter("mem.mu");
    CHECK(mu.value[0] == doctest::Approx(std::sqrt(8.0)));
    mu.value[1] = -2.f;
    CHECK(model.clamp_temperatures() == 1);
    CHECK(mu.value[1] == m::ACPModel<float>::kMinTemperature);

    const auto snap = model.snapshot();
    const auto before = model.score(random_batch(small_config().block_dims, 1, 6, 1), 2);
    model.parameter("cls.w").value[0] += 1.f;
    model.restore(snap);
    CHECK(model.score(random_batch(small_config().block_dims, 1, 6, 1), 2) == before);
  }

  TEST_CASE("checkpoint roundtrip and rejection") {
    const auto dir = std::filesystem::temp_directory_path() / "acp_ckpt_test";
    std::filesystem::create_directories(dir);
    m::ACPModel<float> model(small_config(), 8);
    model.fusion_bn().running_mean[0] = 0.25f;
    model.set_steps(17);
    const auto path = dir / "model.acpm";
    m::save_checkpoint(model, path);
    const auto loaded = m::load_checkpoint(path);
    CHECK(loaded.config() == model.config());
    CHECK(loaded.steps() == 17);
    CHECK(loaded.snapshot() == model.snapshot());

    auto other_cfg = small_config();
    other_cfg.n_mem = 3;
    m::ACPModel<float> other(other_cfg);
    CHECK_THROWS_AS(m::load_checkpoint_into(other, path), acp::ConfigError);
    m::ACPModel<float> same(small_config(), 99);
    m::load_checkpoint_into(same, path);
    CHECK(same.snapshot() == model.snapshot());

    {
      std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
      f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(m::load_checkpoint(path), acp::FormatError);
    std::filesystem::resize_file(path, 40);
    CHECK_THROWS_AS(m::load_checkpoint(path), acp::FormatError);
    std::filesystem::remove_all(dir);
  }
}
