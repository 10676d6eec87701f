// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include "acp/attention.hpp"

#include <cmath>
#include <string>

#include "eigen_map.hpp"

namespace acp::tensor {
namespace {

using detail::block;
using detail::RowMatrix;

struct Geometry {
  std::size_t segments, heads, ql, kl, dq, dv;
};

template <typename T>
Geometry check_layout(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                      const AttentionLayout& layout) {
  if (q.tape() != k.tape() || q.tape() != v.tape()) {
    throw ContractError("attention: operands on different tapes");
  }
  const auto fail = [](const std::string& msg) {
    throw DimensionError("attention: " + msg);
  };
  if (layout.heads == 0 || layout.query_len == 0 || layout.key_len == 0) {
    fail("heads and segment lengths must be positive");
  }
  if (q.rows() % layout.query_len != 0) {
    fail(std::to_string(q.rows()) + " query rows not divisible by segment " +
         std::to_string(layout.query_len));
  }
  const std::size_t segments = q.rows() / layout.query_len;
  if (k.rows() != segments * layout.key_len || v.rows() != k.rows()) {
    fail("key/value rows " + std::to_string(k.rows()) + "/" +
         std::to_string(v.rows()) + " do not match " +
         std::to_string(segments) + " segments of " +
         std::to_string(layout.key_len));
  }
  if (q.cols() != k.cols()) fail("query and key widths differ");
  if (q.cols() % layout.heads != 0 || v.cols() % layout.heads != 0) {
    fail("widths not divisible by " + std::to_string(layout.heads) + " heads");
  }
  return {segments,         layout.heads,           layout.query_len,
          layout.key_len,   q.cols() / layout.heads, v.cols() / layout.heads};
}

template <typename T>
Var<T> attention_impl(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                      const AttentionLayout& layout, std::vector<T> temps,
                      const Var<T>* temp_var, AttentionTrace<T>* trace) {
  const Geometry g = check_layout(q, k, v, layout);
  for (T t : temps) {
    if (!(t > T(0))) {
      throw DomainError("attention: temperature must be positive, got " +
                        std::to_string(static_cast<double>(t)));
    }
  }
  const Tensor<T>& qv = q.value();
  const Tensor<T>& kv = k.value();
  const Tensor<T>& vv = v.value();
  Tensor<T> out(q.rows(), v.cols());
  std::vector<Tensor<T>> probs;
  probs.reserve(g.segments * g.heads);
  RowMatrix<T> logits;
  for (std::size_t s = 0; s < g.segments; ++s) {
    for (std::size_t h = 0; h < g.heads; ++h) {
      const auto Q = block(qv, s * g.ql, g.ql, h * g.dq, g.dq);
      const auto K = block(kv, s * g.kl, g.kl, h * g.dq, g.dq);
      const auto V = block(vv, s * g.kl, g.kl, h * g.dv, g.dv);
      logits.noalias() = Q * K.transpose();
      logits /= temps[h];
      Tensor<T> p(g.ql, g.kl);
      for (std::size_t r = 0; r < g.ql; ++r) {
        const auto row = logits.row(static_cast<Eigen::Index>(r));
        const T mx = row.maxCoeff();
        T total = 0;
        for (std::size_t c = 0; c < g.kl; ++c) {
          const T e = std::exp(row(static_cast<Eigen::Index>(c)) - mx);
          p(r, c) = e;
          total += e;
        }
        for (std::size_t c = 0; c < g.kl; ++c) p(r, c) /= total;
      }
      block(out, s * g.ql, g.ql, h * g.dv, g.dv).noalias() =
          detail::as_matrix(p) * V;
      if (trace != nullptr) trace->weights.push_back(p);
      probs.push_back(std::move(p));
    }
  }

  std::vector<Var<T>> inputs{q, k, v};
  std::size_t it = 0;
  if (temp_var != nullptr) {
    inputs.push_back(*temp_var);
    it = temp_var->id();
  }
  const bool learn_temp = temp_var != nullptr;
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape()->record(
      std::move(out), inputs,
      [=, probs = std::move(probs), temps = std::move(temps)](
          Tape<T>& t, const Tensor<T>& grad) {
        const bool gq = t.requires_grad(iq), gk = t.requires_grad(ik),
                   gv = t.requires_grad(iv);
        const bool gt = learn_temp && t.requires_grad(it);
        const Tensor<T>& qv2 = t.value(iq);
        const Tensor<T>& kv2 = t.value(ik);
        const Tensor<T>& vv2 = t.value(iv);
        Tensor<T>* dq = gq ? &t.grad(iq) : nullptr;
        Tensor<T>* dk = gk ? &t.grad(ik) : nullptr;
        Tensor<T>* dv = gv ? &t.grad(iv) : nullptr;
        Tensor<T>* dt = gt ? &t.grad(it) : nullptr;
        RowMatrix<T> dp, dl;
        for (std::size_t s = 0; s < g.segments; ++s) {
          for (std::size_t h = 0; h < g.heads; ++h) {
            const auto P = detail::as_matrix(probs[s * g.heads + h]);
            const auto dO = block(grad, s * g.ql, g.ql, h * g.dv, g.dv);
            const auto V = block(vv2, s * g.kl, g.kl, h * g.dv, g.dv);
            if (dv != nullptr) {
              block(*dv, s * g.kl, g.kl, h * g.dv, g.dv).noalias() +=
                  P.transpose() * dO;
            }
            if (dq == nullptr && dk == nullptr && dt == nullptr) continue;
            dp.noalias() = dO * V.transpose();
            const Eigen::Array<T, Eigen::Dynamic, 1> rowdot =
                (dp.array() * P.array()).rowwise().sum();
            dl = (P.array() * (dp.array().colwise() - rowdot)).matrix();
            const auto Q = block(qv2, s * g.ql, g.ql, h * g.dq, g.dq);
            const auto K = block(kv2, s * g.kl, g.kl, h * g.dq, g.dq);
            const T inv = T(1) / temps[h];
            if (dq != nullptr) {
              block(*dq, s * g.ql, g.ql, h * g.dq, g.dq).noalias() +=
                  inv * (dl * K);
            }
            if (dk != nullptr) {
              block(*dk, s * g.kl, g.kl, h * g.dq, g.dq).noalias() +=
                  inv * (dl.transpose() * Q);
            }
            if (dt != nullptr) {
              const RowMatrix<T> raw = Q * K.transpose();
              (*dt)[h] -= (dl.array() * raw.array()).sum() * inv * inv;
            }
          }
        }
      });
}

}  // namespace

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const AttentionLayout& layout, T temperature,
                 AttentionTrace<T>* trace) {
  return attention_impl(q, k, v, layout,
                        std::vector<T>(layout.heads, temperature),
                        static_cast<const Var<T>*>(nullptr),
                        trace);
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const AttentionLayout& layout, const Var<T>& temperatures,
                 AttentionTrace<T>* trace) {
  if (temperatures.rows() != 1 || temperatures.cols() != layout.heads) {
    throw DimensionError("attention: expected 1x" +
                         std::to_string(layout.heads) + " temperatures");
  }
  const auto tv = temperatures.value().values();
  return attention_impl(q, k, v, layout, std::vector<T>(tv.begin(), tv.end()),
                        &temperatures, trace);
}

template Var<float> attention(const Var<float>&, const Var<float>&,
                              const Var<float>&, const AttentionLayout&, float,
                              AttentionTrace<float>*);
template Var<double> attention(const Var<double>&, const Var<double>&,
                               const Var<double>&, const AttentionLayout&,
                               double, AttentionTrace<double>*);
template Var<float> attention(const Var<float>&, const Var<float>&,
                              const Var<float>&, const AttentionLayout&,
                              const Var<float>&, AttentionTrace<float>*);
template Var<double> attention(const Var<double>&, const Var<double>&,
                               const Var<double>&, const AttentionLayout&,
                               const Var<double>&, AttentionTrace<double>*);

}  // namespace acp::tensor
