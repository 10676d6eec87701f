// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "acp/tensor.hpp"

namespace acp::tensor {

/// Rows of Q are split into consecutive segments of `query_len` rows and rows
/// of K/V into segments of `key_len` rows; segment s of Q attends only to
/// segment s of K/V. Columns are split evenly into `heads` groups.
struct AttentionLayout {
  std::size_t heads = 1;
  std::size_t query_len = 1;
  std::size_t key_len = 1;
};

/// Softmax weight matrices captured during a forward pass, one
/// [query_len x key_len] matrix per (segment, head), segment-major.
template <typename T>
struct AttentionTrace {
  std::vector<Tensor<T>> weights;
};

/// Scaled dot-product attention softmax(Q K^T / temperature) V with a fixed
/// temperature shared by all heads.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const AttentionLayout& layout, T temperature,
                 AttentionTrace<T>* trace = nullptr);

/// Same, with a learnable [1 x heads] temperature per head.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const AttentionLayout& layout, const Var<T>& temperatures,
                 AttentionTrace<T>* trace = nullptr);

}  // namespace acp::tensor
