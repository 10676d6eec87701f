// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "acp/tensor.hpp"

// Differentiable operations over rank-2 tensors. Each op records itself on
// the tape of its inputs; all inputs must share one tape.
namespace acp::tensor {

/// [m x k] * [k x n].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// [m x k] * [n x k]^T.
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);

/// Elementwise product of equally shaped tensors.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

/// Adds a [1 x n] row to every row of `x`.
template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& row);

/// Multiplies every row of `x` elementwise by a [1 x n] row.
template <typename T>
Var<T> mul_row(const Var<T>& x, const Var<T>& row);

/// Multiplies every row of `x` by the matching entry of a [rows x 1] column.
template <typename T>
Var<T> mul_col(const Var<T>& x, const Var<T>& col);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

/// Row-wise softmax of x / scale, shifted by the row maximum.
/// Throws DomainError unless scale > 0.
template <typename T>
Var<T> softmax_last(const Var<T>& x, T scale);

/// Row-wise layer normalization with affine [1 x d] gain and bias.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  T eps = T(1e-5));

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t dim)
      : running_mean(1, dim, T(0)), running_var(1, dim, T(1)) {}
};

/// Normalizes every column over the row axis. Train mode uses batch
/// statistics and updates `state` with its momentum (unbiased variance);
/// eval mode reads `state` only.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  BatchNormState<T>& state, Mode mode);

/// Scales each row to unit L2 norm. Rows with norm below 1e-12 become zero;
/// their indices are reported through `degenerate_rows` when given.
template <typename T>
Var<T> l2_normalize(const Var<T>& x,
                    std::vector<std::size_t>* degenerate_rows = nullptr);

/// Inverted dropout. Train mode zeroes each element with probability p and
/// scales survivors by 1/(1-p); eval mode is the identity.
template <typename T>
Var<T> dropout(const Var<T>& x, T p, Rng& rng, Mode mode);

template <typename T>
Var<T> dropout(const Var<T>& x, T p, std::uint64_t seed, Mode mode);

/// Concatenates along columns; all parts share a row count.
template <typename T>
Var<T> concat_last(std::span<const Var<T>> parts);

/// Concatenates along rows; all parts share a column count.
template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts);

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end);

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end);

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows);

/// Row-major reinterpretation with the same element count.
template <typename T>
Var<T> reshape(const Var<T>& x, std::size_t rows, std::size_t cols);

template <typename T>
Var<T> sum(const Var<T>& x);

template <typename T>
Var<T> mean(const Var<T>& x);

/// Elementwise maximum with a constant (gradient passes where x > floor).
template <typename T>
Var<T> clamp_min(const Var<T>& x, T floor);

/// Uniform draw in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace acp::tensor
