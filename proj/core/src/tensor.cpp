// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include "acp/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace acp::tensor {

template <typename T>
Tensor<T>::Tensor(std::size_t rows, std::size_t cols, T fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

template <typename T>
Tensor<T>::Tensor(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
}

template <typename T>
Tensor<T> Tensor<T>::row(std::vector<T> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
void Tape<T>::check_owner(const Var<T>& v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw ContractError("variable does not belong to this tape");
  }
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  nodes_.push_back(Node{p.value, {}, {}, &p, p.trainable});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                       BackwardFn fn) {
  bool needs = false;
  for (const auto& in : inputs) {
    check_owner(in);
    needs = needs || nodes_[in.id()].requires_grad;
  }
  if (consumed_) throw ContractError("cannot record onto a consumed tape");
  nodes_.push_back(
      Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, nullptr,
           needs});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs,
                       BackwardFn fn) {
  bool needs = false;
  for (const auto& in : inputs) {
    check_owner(in);
    needs = needs || nodes_[in.id()].requires_grad;
  }
  if (consumed_) throw ContractError("cannot record onto a consumed tape");
  nodes_.push_back(
      Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, nullptr,
           needs});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) {
    n.grad = Tensor<T>(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  check_owner(loss);
  if (consumed_) {
    throw ContractError(
        "backward already ran on this tape; record a new forward pass");
  }
  const Tensor<T>& lv = nodes_[loss.id()].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        std::to_string(lv.rows()) + "x" +
                        std::to_string(lv.cols()));
  }
  consumed_ = true;
  grad(loss.id())[0] = T(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param != nullptr) {
      Parameter<T>& p = *n.param;
      if (p.grad.size() != p.value.size()) p.zero_grad();
      for (std::size_t k = 0; k < n.grad.size(); ++k) p.grad[k] += n.grad[k];
    } else if (n.fn) {
      n.fn(*this, n.grad);
    }
    // Activations' gradients are dead once propagated.
    n.grad = Tensor<T>();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace acp::tensor
