// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include "acp/tensor.hpp"

namespace acp::tensor::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

using Stride = Eigen::OuterStride<>;

template <typename T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, Stride>;

template <typename T>
using ConstStridedMap = Eigen::Map<const RowMatrix<T>, 0, Stride>;

template <typename T>
MatMap<T> as_matrix(Tensor<T>& t) {
  return MatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

/// View of rows [r0, r0+nr) and columns [c0, c0+nc) of a row-major tensor.
template <typename T>
StridedMap<T> block(Tensor<T>& t, std::size_t r0, std::size_t nr,
                    std::size_t c0, std::size_t nc) {
  return StridedMap<T>(t.data() + r0 * t.cols() + c0,
                       static_cast<Eigen::Index>(nr),
                       static_cast<Eigen::Index>(nc),
                       Stride(static_cast<Eigen::Index>(t.cols())));
}

template <typename T>
ConstStridedMap<T> block(const Tensor<T>& t, std::size_t r0, std::size_t nr,
                         std::size_t c0, std::size_t nc) {
  return ConstStridedMap<T>(t.data() + r0 * t.cols() + c0,
                            static_cast<Eigen::Index>(nr),
                            static_cast<Eigen::Index>(nc),
                            Stride(static_cast<Eigen::Index>(t.cols())));
}

}  // namespace acp::tensor::detail
