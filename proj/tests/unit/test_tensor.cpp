// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "acp/attention.hpp"
#include "acp/ops.hpp"
#include "support/gradcheck.hpp"

namespace t = acp::tensor;
using acp::testing::gradcheck;
using DParam = t::Parameter<double>;
using DTape = t::Tape<double>;
using DVar = t::Var<double>;
using DTensor = t::Tensor<double>;

namespace {

constexpr double kOpTol = 1e-4;

DTensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed,
                      double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  DTensor out(r, c);
  for (auto& x : out.values()) x = u(rng);
  return out;
}

/// Fixed random projection to a scalar so every output element matters.
DVar project(DTape& tape, const DVar& y, std::uint64_t seed = 99) {
  return t::sum(t::mul(y, tape.constant(random_tensor(y.rows(), y.cols(), seed))));
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("matmul examples and shape errors") {
    DTape tape;
    const auto eye = tape.constant(DTensor(2, 2, {1, 0, 0, 1}));
    const auto m = tape.constant(DTensor(2, 2, {1, 2, 3, 4}));
    CHECK(t::matmul(eye, m).value() == m.value());
    const auto a = tape.constant(DTensor(1, 2, {1, 0}));
    const auto b = tape.constant(DTensor(2, 1, {0, 5}));
    CHECK(t::matmul(a, b).value()[0] == 0.0);
    CHECK_THROWS_AS(t::matmul(a, a), acp::DimensionError);
  }

  TEST_CASE("matmul gradient matches finite differences") {
    DParam a("a", random_tensor(4, 3, 1));
    DParam b("b", random_tensor(3, 2, 2));
    const auto r = gradcheck({&a, &b}, [&](DTape& tape) {
      return project(tape, t::matmul(tape.param(a), tape.param(b)));
    });
    CHECK_MESSAGE(r.max_rel_error < kOpTol, r.worst);
  }

  TEST_CASE("softmax rows are stochastic and stable") {
    DTape tape;
    const auto s = t::softmax_last(tape.constant(DTensor(1, 2, {0, 0})), 1.0);
    CHECK(s.value()[0] == doctest::Approx(0.5));
    const auto big = t::softmax_last(tape.constant(DTensor(1, 2, {1000, 0})), 1.0);
    CHECK(std::abs(big.value()[0] - 1.0) < 1e-6);
    CHECK(std::abs(big.value()[1]) < 1e-6);
    // Direct evaluation in long double.
    const auto s3 = t::softmax_last(tape.constant(DTensor(1, 3, {1, 2, 3})), 1.0);
    const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(s3.value()[i] - static_cast<double>(std::exp(1.0L + i) / z)) <
            1e-12);
    }
    CHECK_THROWS_AS(t::softmax_last(s3, 0.0), acp::DomainError);
    CHECK_THROWS_AS(t::softmax_last(s3, -1.0), acp::DomainError);

    t::Tape<float> ft;
    const auto huge = t::softmax_last(
        ft.constant(t::Tensor<float>(3, 4, {1e4f, -1e4f, 0, 5e3f, -1e4f, -1e4f,
                                            -1e4f, -1e4f, 1, 2, 3, 4})),
        1.0f);
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0;
      for (float v : huge.value().row_span(r)) total += v;
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }

  TEST_CASE("softmax gradient") {
    DParam x("x", random_tensor(3, 5, 3, -3, 3));
    const auto r = gradcheck({&x}, [&](DTape& tape) {
      return project(tape, t::softmax_last(tape.param(x), 1.7));
    });
    CHECK_MESSAGE(r.max_rel_error < kOpTol, r.worst);
  }

  TEST_CASE("layer norm examples and gradient") {
    DTape tape;
    const auto g = tape.constant(DTensor(1, 4, 1.0));
    const auto b = tape.constant(DTensor(1, 4, 0.0));
    const auto y = t::layer_norm(tape.constant(DTensor(1, 4, 5.0)), g, b);
    for (double v : y.value().values()) CHECK(v == 0.0);
    const auto y2 = t::layer_norm(tape.constant(DTensor(1, 2, {1, -1})),
                                  tape.constant(DTensor(1, 2, 1.0)),
                                  tape.constant(DTensor(1, 2, 0.0)));
    CHECK(y2.value()[0] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(y2.value()[1] == doctest::Approx(-1.0).epsilon(1e-4));

    const auto y3 = t::layer_norm(tape.constant(random_tensor(5, 6, 4, -4, 9)),
                                  tape.constant(DTensor(1, 6, 1.0)),
                                  tape.constant(DTensor(1, 6, 0.0)));
    for (std::size_t r = 0; r < 5; ++r) {
      double m = 0, v = 0;
      for (double x : y3.value().row_span(r)) m += x / 6;
      for (double x : y3.value().row_span(r)) v += (x - m) * (x - m) / 6;
      CHECK(std::abs(m) < 1e-5);
      CHECK(std::abs(v - 1.0) < 1e-4);
    }

    DParam x("x", random_tensor(4, 5, 5));
    DParam gain("gain", random_tensor(1, 5, 6, 0.5, 1.5));
    DParam bias("bias", random_tensor(1, 5, 7));
    const auto r = gradcheck({&x, &gain, &bias}, [&](DTape& tp) {
      return project(tp, t::layer_norm(tp.param(x), tp.param(gain), tp.param(bias)));
    });
    CHECK_MESSAGE(r.max_rel_error < kOpTol, r.worst);
  }

  TEST_CASE("batch norm modes, statistics and gradient") {
    DTape tape;
    t::BatchNormState<double> state(3);
    const auto x = tape.constant(random_tensor(4, 3, 8));
    const auto one = tape.constant(DTensor(1, 3, 1.0));
    const auto zero = tape.constant(DTensor(1, 3, 0.0));
    const auto ev = t::batch_norm(x, one, zero, state, t::Mode::kEval);
    for (std::size_t i = 0; i < x.value().size(); ++i)
      CHECK(std::abs(ev.value()[i] - x.value()[i]) < 1e-5);

    const auto tr = t::batch_norm(tape.constant(random_tensor(50, 3, 9, -2, 5)),
                                  one, zero, state, t::Mode::kTrain);
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0, v = 0;
      for (std::size_t r = 0; r < 50; ++r) m += tr.value()(r, c) / 50;
      for (std::size_t r = 0; r < 50; ++r)
        v += (tr.value()(r, c) - m) * (tr.value()(r, c) - m) / 50;
      CHECK(std::abs(m) < 1e-4);
      CHECK(std::abs(v - 1.0) < 1e-4);
    }
    // Momentum 0.1 moves the running mean a tenth of the way.
    CHECK(state.running_mean[0] != 0.0);
    CHECK_THROWS_AS(t::batch_norm(tape.constant(DTensor(1, 3, 1.0)), one, zero,
                                  state, t::Mode::kTrain),
                    acp::DegenerateBatchError);

    DParam in("x", random_tensor(6, 4, 10));
    DParam gain("gain", random_tensor(1, 4, 11, 0.5, 1.5));
    DParam bias("bias", random_tensor(1, 4, 12));
    t::BatchNormState<double> st(4);
    const auto r = gradcheck({&in, &gain, &bias}, [&](DTape& tp) {
      return project(tp, t::batch_norm(tp.param(in), tp.param(gain),
                                       tp.param(bias), st, t::Mode::kTrain));
    });
    CHECK_MESSAGE(r.max_rel_error < kOpTol, r.worst);
  }

  TEST_CASE("l2 normalize examples, degenerate rows and gradient") {
    DTape tape;
    std::vector<std::size_t> degenerate;
    const auto y = t::l2_normalize(tape.constant(DTensor(2, 2, {3, 4, 0, 0})),
                                   &degenerate);
    CHECK(y.value()[0] == doctest::Approx(0.6));
    CHECK(y.value()[1] == doctest::Approx(0.8));
    CHECK(y.value()[2] == 0.0);
    CHECK(y.value()[3] == 0.0);
    REQUIRE(degenerate.size() == 1);
    CHECK(degenerate[0] == 1);

    t::Tape<float> ft;
    const auto z = t::l2_normalize(ft.constant(random_tensor(20, 7, 13, -5, 5)
                                                   .cast<float>()));
    for (std::size_t r = 0; r < 20; ++r) {
      double n = 0;
      for (float v : z.value().row_span(r)) n += double(v) * v;
      CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
    }

    DParam x("x", random_tensor(3, 4, 14));
    const auto r = gradcheck({&x}, [&](DTape& tp) {
      return project(tp, t::l2_normalize(tp.param(x)));
    });
    CHECK_MESSAGE(r.max_rel_error < kOpTol, r.worst);
  }

  TEST_CASE("elementwise suite") {
    DTape tape;
    CHECK(t::sigmoid(tape.constant(DTensor(1, 1, 0.0))).value()[0] == 0.5);
    const auto x = tape.constant(random_tensor(3, 3, 15));
    for (auto mode : {t::Mode::kTrain, t::Mode::kEval}) {
      CHECK(t::dropout(x, 0.0, std::uint64_t{1}, mode).value() == x.value());
    }
    CHECK(t::dropout(x, 0.7, std::uint64_t{1}, t::Mode::kEval).value() ==
          x.value());
    CHECK_THROWS_AS(t::dropout(x, 1.0, std::uint64_t{1}, t::Mode::kTrain),
                    acp::DomainError);
    CHECK_THROWS_AS(t::dropout(x, -0.1, std::uint64_t{1}, t::Mode::kTrain),
                    acp::DomainError);

    const auto ones = tape.constant(DTensor(1, 100000, 1.0));
    const auto d1 = t::dropout(ones, 0.5, std::uint64_t{42}, t::Mode::kTrain);
    const auto d2 = t::dropout(ones, 0.5, std::uint64_t{42}, t::Mode::kTrain);
    CHECK(d1.value() == d2.value());
    std::size_t survivors = 0;
    for (double v : d1.value().values()) {
      if (v != 0.0) {
        ++survivors;
        CHECK(v == 2.0);
      }
    }
    CHECK(std::abs(survivors / 1e5 - 0.5) < 0.01);

    DParam a("a", random_tensor(3, 4, 16));
    DParam b("b", random_tensor(3, 4, 17));
    DParam c("c", random_tensor(3, 2, 18));
    const auto r = gradcheck({&a, &b, &c}, [&](DTape& tp) {
      const auto pa = tp.param(a), pb = tp.param(b), pc = tp.param(c);
      std::vector<DVar> parts{t::sigmoid(t::mul(pa, pb)), t::add(pa, pb), pc};
      // relu on a shifted input keeps every element away from the kink.
      const auto cat = t::concat_last<double>(parts);
      return project(tp, t::relu(t::add_row(cat, tp.constant(DTensor(1, 10, 2.0)))));
    });
    CHECK_MESSAGE(r.max_rel_error < kOpTol, r.worst);
  }

  TEST_CASE("attention gradient including learnable temperature") {
    DParam q("q", random_tensor(6, 4, 19));
    DParam k("k", random_tensor(8, 4, 20));
    DParam v("v", random_tensor(8, 6, 21));
    DParam temp("temp", DTensor(1, 2, {0.8, 1.6}));
    const t::AttentionLayout layout{2, 3, 4};
    const auto r = gradcheck({&q, &k, &v, &temp}, [&](DTape& tp) {
      return project(tp, t::attention(tp.param(q), tp.param(k), tp.param(v),
                                      layout, tp.param(temp)));
    });
    CHECK_MESSAGE(r.max_rel_error < kOpTol, r.worst);

    t::AttentionTrace<double> trace;
    DTape tp;
    t::attention(tp.param(q), tp.param(k), tp.param(v), layout, 1.0, &trace);
    REQUIRE(trace.weights.size() == 4);
    for (const auto& w : trace.weights) {
      for (std::size_t row = 0; row < w.rows(); ++row) {
        double total = 0;
        for (double x : w.row_span(row)) total += x;
        CHECK(std::abs(total - 1.0) < 1e-6);
      }
    }
  }

  TEST_CASE("structural ops gradient") {
    DParam x("x", random_tensor(6, 4, 22));
    const std::vector<std::size_t> rows{0, 3, 3, 5};
    const auto r = gradcheck({&x}, [&](DTape& tp) {
      const auto px = tp.param(x);
      const auto g = t::gather_rows(px, std::span<const std::size_t>(rows));
      const auto s = t::slice_cols(t::slice_rows(px, 1, 4), 1, 3);
      const auto re = t::reshape(g, 2, 8);
      return t::add(t::add(project(tp, re, 3), project(tp, s, 4)),
                    t::mean(t::scale(px, 3.0)));
    });
    CHECK_MESSAGE(r.max_rel_error < kOpTol, r.worst);
  }

  TEST_CASE("backward contract") {
    DParam w("w", DTensor(1, 3, {1, 2, 3}));
    DParam unused("unused", DTensor(1, 2, {1, 1}));
    DTape tape;
    const auto x = tape.constant(DTensor(1, 3, {4, 5, 6}));
    const auto loss = t::sum(t::mul(tape.param(w), x));
    tape.param(unused);
    tape.backward(loss);
    CHECK(w.grad == x.value());
    CHECK(unused.grad == DTensor(1, 2, 0.0));
    CHECK_THROWS_AS(tape.backward(loss), acp::ContractError);

    DTape tape2;
    const auto y = t::mul(tape2.param(w), tape2.constant(DTensor(1, 3, 1.0)));
    CHECK_THROWS_AS(tape2.backward(y), acp::ContractError);

    w.zero_grad();
    CHECK(w.grad == DTensor(1, 3, 0.0));
  }
}
