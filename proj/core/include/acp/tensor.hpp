// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "acp/errors.hpp"

namespace acp::tensor {

enum class Mode { kTrain, kEval };

using Rng = std::mt19937_64;

/// Dense row-major matrix. Every activation in the model is rank 2: a batch of
/// sequences is stacked along the row axis.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, T fill = T(0));
  Tensor(std::size_t rows, std::size_t cols, std::vector<T> data);

  static Tensor row(std::vector<T> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::array<std::size_t, 2> shape() const noexcept { return {rows_, cols_}; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept {
    return data_[r * cols_ + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols_ + c];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::span<T> row_span(std::size_t r) noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const T> row_span(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  void fill(T v);
  bool all_finite() const noexcept;
  bool same_shape(const Tensor& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// Learnable value plus its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  /// Decoupled weight decay applies (affine weights only).
  bool decay = false;
  /// Value must stay strictly positive (softmax temperatures).
  bool positive = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool decays = false)
      : name(std::move(n)), value(std::move(v)),
        grad(value.rows(), value.cols()), decay(decays) {}

  void zero_grad() { grad = Tensor<T>(value.rows(), value.cols()); }
};

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run record of differentiable operations. A fresh tape is used
/// for every forward pass; backward consumes it.
template <typename T>
class Tape {
 public:
  /// Propagates the node's output gradient into its inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> param(Parameter<T>& p);

  /// Appends an operation node. `inputs` decide whether the node needs a
  /// gradient; `fn` is dropped when none of them does.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn fn);
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs,
                BackwardFn fn);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, allocated on first access.
  Tensor<T>& grad(std::size_t id);
  const Tensor<T>& grad_or_empty(std::size_t id) const {
    return nodes_[id].grad;
  }

  /// Reverse sweep from a scalar loss. Accumulates into every reachable
  /// trainable Parameter's `grad`. A tape can be swept once.
  void backward(const Var<T>& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn fn;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  void check_owner(const Var<T>& v) const;

  // Deque keeps value references stable while new nodes are appended.
  std::deque<Node> nodes_;
  bool consumed_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace acp::tensor
