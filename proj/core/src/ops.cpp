// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include "acp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eigen_map.hpp"

namespace acp::tensor {
namespace {

using detail::as_matrix;

std::string shape_of(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename T>
std::string shape_of(const Var<T>& v) {
  return shape_of(v.rows(), v.cols());
}

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape() != b.tape()) {
    throw ContractError("operands were recorded on different tapes");
  }
}

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_of(a) +
                         " vs " + shape_of(b));
  }
}

template <typename T>
void require_row(const char* op, const Var<T>& x, const Var<T>& row) {
  require_same_tape(x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw DimensionError(std::string(op) + ": expected 1x" +
                         std::to_string(x.cols()) + " row, got " +
                         shape_of(row));
  }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_of(a) +
                         " * " + shape_of(b));
  }
  Tensor<T> out(a.rows(), b.cols());
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(
      std::move(out), {a, b}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
        const auto G = as_matrix(g);
        if (t.requires_grad(ia)) {
          as_matrix(t.grad(ia)).noalias() +=
              G * as_matrix(t.value(ib)).transpose();
        }
        if (t.requires_grad(ib)) {
          as_matrix(t.grad(ib)).noalias() +=
              as_matrix(t.value(ia)).transpose() * G;
        }
      });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b);
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions disagree, " +
                         shape_of(a) + " * (" + shape_of(b) + ")^T");
  }
  Tensor<T> out(a.rows(), b.rows());
  as_matrix(out).noalias() =
      as_matrix(a.value()) * as_matrix(b.value()).transpose();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(
      std::move(out), {a, b}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
        const auto G = as_matrix(g);
        if (t.requires_grad(ia)) {
          as_matrix(t.grad(ia)).noalias() += G * as_matrix(t.value(ib));
        }
        if (t.requires_grad(ib)) {
          as_matrix(t.grad(ib)).noalias() +=
              G.transpose() * as_matrix(t.value(ia));
        }
      });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  accumulate(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b},
                          [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                            if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
                            if (t.requires_grad(ib)) accumulate(t.grad(ib), g);
                          });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b},
                          [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                            if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
                            if (t.requires_grad(ib)) {
                              Tensor<T>& gb = t.grad(ib);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                gb[i] -= g[i];
                            }
                          });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(
      std::move(out), {a, b}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
        if (t.requires_grad(ia)) {
          Tensor<T>& ga = t.grad(ia);
          const Tensor<T>& vb = t.value(ib);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
        }
        if (t.requires_grad(ib)) {
          Tensor<T>& gb = t.grad(ib);
          const Tensor<T>& va = t.value(ia);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
        }
      });
}

template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& row) {
  require_row("add_row", x, row);
  Tensor<T> out = x.value();
  as_matrix(out).rowwise() += as_matrix(row.value()).row(0);
  const std::size_t ix = x.id(), ir = row.id();
  return x.tape()->record(
      std::move(out), {x, row}, [ix, ir](Tape<T>& t, const Tensor<T>& g) {
        if (t.requires_grad(ix)) accumulate(t.grad(ix), g);
        if (t.requires_grad(ir)) {
          as_matrix(t.grad(ir)).row(0) += as_matrix(g).colwise().sum();
        }
      });
}

template <typename T>
Var<T> mul_row(const Var<T>& x, const Var<T>& row) {
  require_row("mul_row", x, row);
  Tensor<T> out = x.value();
  as_matrix(out).array().rowwise() *= as_matrix(row.value()).row(0).array();
  const std::size_t ix = x.id(), ir = row.id();
  return x.tape()->record(
      std::move(out), {x, row}, [ix, ir](Tape<T>& t, const Tensor<T>& g) {
        const auto G = as_matrix(g).array();
        if (t.requires_grad(ix)) {
          as_matrix(t.grad(ix)).array() +=
              G.rowwise() * as_matrix(t.value(ir)).row(0).array();
        }
        if (t.requires_grad(ir)) {
          as_matrix(t.grad(ir)).row(0).array() +=
              (G * as_matrix(t.value(ix)).array()).colwise().sum();
        }
      });
}

template <typename T>
Var<T> mul_col(const Var<T>& x, const Var<T>& col) {
  require_same_tape(x, col);
  if (col.cols() != 1 || col.rows() != x.rows()) {
    throw DimensionError("mul_col: expected " + std::to_string(x.rows()) +
                         "x1 column, got " + shape_of(col));
  }
  Tensor<T> out = x.value();
  as_matrix(out).array().colwise() *= as_matrix(col.value()).col(0).array();
  const std::size_t ix = x.id(), ic = col.id();
  return x.tape()->record(
      std::move(out), {x, col}, [ix, ic](Tape<T>& t, const Tensor<T>& g) {
        const auto G = as_matrix(g).array();
        if (t.requires_grad(ix)) {
          as_matrix(t.grad(ix)).array() +=
              G.colwise() * as_matrix(t.value(ic)).col(0).array();
        }
        if (t.requires_grad(ic)) {
          as_matrix(t.grad(ic)).col(0).array() +=
              (G * as_matrix(t.value(ix)).array()).rowwise().sum();
        }
      });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= factor;
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x},
                          [ix, factor](Tape<T>& t, const Tensor<T>& g) {
                            Tensor<T>& gx = t.grad(ix);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gx[i] += factor * g[i];
                          });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x},
                          [ix](Tape<T>& t, const Tensor<T>& g) {
                            const Tensor<T>& xv = t.value(ix);
                            Tensor<T>& gx = t.grad(ix);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              if (xv[i] > T(0)) gx[i] += g[i];
                          });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) {
    if (v >= T(0)) {
      v = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T(1) + e);
    }
  }
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape()->size();
  return x.tape()->record(std::move(out), {x},
                          [ix, iy](Tape<T>& t, const Tensor<T>& g) {
                            const Tensor<T>& y = t.value(iy);
                            Tensor<T>& gx = t.grad(ix);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gx[i] += g[i] * y[i] * (T(1) - y[i]);
                          });
}

template <typename T>
Var<T> softmax_last(const Var<T>& x, T scale_by) {
  if (!(scale_by > T(0))) {
    throw DomainError("softmax_last: scale must be positive, got " +
                      std::to_string(static_cast<double>(scale_by)));
  }
  Tensor<T> out = x.value();
  const T inv = T(1) / scale_by;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row_span(r);
    const T mx = *std::max_element(row.begin(), row.end());
    T total = 0;
    for (auto& v : row) {
      v = std::exp((v - mx) * inv);
      total += v;
    }
    for (auto& v : row) v /= total;
  }
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape()->size();
  return x.tape()->record(
      std::move(out), {x}, [ix, iy, inv](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& y = t.value(iy);
        Tensor<T>& gx = t.grad(ix);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const auto yr = y.row_span(r);
          const auto gr = g.row_span(r);
          T dot = 0;
          for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
          auto out_row = gx.row_span(r);
          for (std::size_t c = 0; c < yr.size(); ++c)
            out_row[c] += inv * yr[c] * (gr[c] - dot);
        }
      });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  T eps) {
  require_row("layer_norm", x, gain);
  require_row("layer_norm", x, bias);
  const std::size_t d = x.cols();
  if (d < 2) throw DimensionError("layer_norm: need at least 2 features");
  const Tensor<T>& xv = x.value();
  Tensor<T> xhat(xv.rows(), d);
  Tensor<T> inv_std(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const auto row = xv.row_span(r);
    T m = 0;
    for (T v : row) m += v;
    m /= T(d);
    T var = 0;
    for (T v : row) var += (v - m) * (v - m);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) xhat(r, c) = (row[c] - m) * is;
  }
  Tensor<T> out = xhat;
  as_matrix(out).array().rowwise() *= as_matrix(gain.value()).row(0).array();
  as_matrix(out).rowwise() += as_matrix(bias.value()).row(0);
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape()->record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& t, const Tensor<T>& g) {
        const std::size_t n = g.rows(), dd = g.cols();
        if (t.requires_grad(ig)) {
          as_matrix(t.grad(ig)).row(0).array() +=
              (as_matrix(g).array() * as_matrix(xhat).array()).colwise().sum();
        }
        if (t.requires_grad(ib)) {
          as_matrix(t.grad(ib)).row(0) += as_matrix(g).colwise().sum();
        }
        if (!t.requires_grad(ix)) return;
        const Tensor<T>& gv = t.value(ig);
        Tensor<T>& gx = t.grad(ix);
        std::vector<T> dxhat(dd);
        for (std::size_t r = 0; r < n; ++r) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t c = 0; c < dd; ++c) {
            dxhat[c] = g(r, c) * gv[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat(r, c);
          }
          mean_d /= T(dd);
          mean_dx /= T(dd);
          for (std::size_t c = 0; c < dd; ++c) {
            gx(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
          }
        }
      });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  BatchNormState<T>& state, Mode mode) {
  require_row("batch_norm", x, gain);
  require_row("batch_norm", x, bias);
  const std::size_t n = x.rows(), d = x.cols();
  if (state.running_mean.cols() != d || state.running_var.cols() != d) {
    throw DimensionError("batch_norm: running statistics have width " +
                         std::to_string(state.running_mean.cols()) +
                         ", input has " + std::to_string(d));
  }
  const Tensor<T>& xv = x.value();
  Tensor<T> xhat(n, d);
  Tensor<T> inv_std(1, d);
  if (mode == Mode::kTrain) {
    if (n < 2) {
      throw DegenerateBatchError(
          "batch_norm: train mode needs at least 2 rows, got " +
          std::to_string(n));
    }
    const auto X = as_matrix(xv);
    for (std::size_t c = 0; c < d; ++c) {
      const T m = X.col(static_cast<Eigen::Index>(c)).mean();
      T var = 0;
      for (std::size_t r = 0; r < n; ++r) var += (xv(r, c) - m) * (xv(r, c) - m);
      var /= T(n);
      const T is = T(1) / std::sqrt(var + state.eps);
      inv_std[c] = is;
      for (std::size_t r = 0; r < n; ++r) xhat(r, c) = (xv(r, c) - m) * is;
      state.running_mean[c] =
          (T(1) - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] =
          (T(1) - state.momentum) * state.running_var[c] +
          state.momentum * var * T(n) / T(n - 1);
    }
  } else {
    for (std::size_t c = 0; c < d; ++c) {
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + state.eps);
    }
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c)
        xhat(r, c) = (xv(r, c) - state.running_mean[c]) * inv_std[c];
  }
  Tensor<T> out = xhat;
  as_matrix(out).array().rowwise() *= as_matrix(gain.value()).row(0).array();
  as_matrix(out).rowwise() += as_matrix(bias.value()).row(0);
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  const bool train = mode == Mode::kTrain;
  return x.tape()->record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, train, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape<T>& t, const Tensor<T>& g) {
        const std::size_t rows = g.rows(), dd = g.cols();
        if (t.requires_grad(ig)) {
          as_matrix(t.grad(ig)).row(0).array() +=
              (as_matrix(g).array() * as_matrix(xhat).array()).colwise().sum();
        }
        if (t.requires_grad(ib)) {
          as_matrix(t.grad(ib)).row(0) += as_matrix(g).colwise().sum();
        }
        if (!t.requires_grad(ix)) return;
        const Tensor<T>& gv = t.value(ig);
        Tensor<T>& gx = t.grad(ix);
        for (std::size_t c = 0; c < dd; ++c) {
          if (!train) {
            for (std::size_t r = 0; r < rows; ++r)
              gx(r, c) += g(r, c) * gv[c] * inv_std[c];
            continue;
          }
          T mean_d = 0, mean_dx = 0;
          for (std::size_t r = 0; r < rows; ++r) {
            const T dxh = g(r, c) * gv[c];
            mean_d += dxh;
            mean_dx += dxh * xhat(r, c);
          }
          mean_d /= T(rows);
          mean_dx /= T(rows);
          for (std::size_t r = 0; r < rows; ++r) {
            const T dxh = g(r, c) * gv[c];
            gx(r, c) += inv_std[c] * (dxh - mean_d - xhat(r, c) * mean_dx);
          }
        }
      });
}

template <typename T>
Var<T> l2_normalize(const Var<T>& x,
                    std::vector<std::size_t>* degenerate_rows) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.rows(), xv.cols());
  Tensor<T> norms(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    T ss = 0;
    for (T v : xv.row_span(r)) ss += v * v;
    const T nrm = std::sqrt(ss);
    norms[r] = nrm;
    if (nrm < T(1e-12)) {
      if (degenerate_rows != nullptr) degenerate_rows->push_back(r);
      continue;
    }
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) / nrm;
  }
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape()->size();
  return x.tape()->record(
      std::move(out), {x},
      [ix, iy, norms = std::move(norms)](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& y = t.value(iy);
        Tensor<T>& gx = t.grad(ix);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          if (norms[r] < T(1e-12)) continue;
          const auto yr = y.row_span(r);
          const auto gr = g.row_span(r);
          T dot = 0;
          for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
          for (std::size_t c = 0; c < yr.size(); ++c)
            gx(r, c) += (gr[c] - yr[c] * dot) / norms[r];
        }
      });
}

template <typename T>
Var<T> dropout(const Var<T>& x, T p, Rng& rng, Mode mode) {
  if (!(p >= T(0) && p < T(1))) {
    throw DomainError("dropout: rate must lie in [0, 1), got " +
                      std::to_string(static_cast<double>(p)));
  }
  if (mode == Mode::kEval || p == T(0)) {
    const std::size_t ix = x.id();
    return x.tape()->record(Tensor<T>(x.value()), {x},
                            [ix](Tape<T>& t, const Tensor<T>& g) {
                              accumulate(t.grad(ix), g);
                            });
  }
  const T keep_scale = T(1) / (T(1) - p);
  Tensor<T> mask(x.rows(), x.cols());
  for (auto& m : mask.values()) {
    m = uniform01(rng) < static_cast<double>(p) ? T(0) : keep_scale;
  }
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ix = x.id();
  return x.tape()->record(
      std::move(out), {x},
      [ix, mask = std::move(mask)](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
      });
}

template <typename T>
Var<T> dropout(const Var<T>& x, T p, std::uint64_t seed, Mode mode) {
  Rng rng(seed);
  return dropout(x, p, rng, mode);
}

template <typename T>
Var<T> concat_last(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_last: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p);
    if (p.rows() != rows) {
      throw DimensionError("concat_last: row counts differ (" +
                           std::to_string(rows) + " vs " +
                           std::to_string(p.rows()) + ")");
    }
    cols += p.cols();
  }
  Tensor<T> out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    detail::block(out, 0, rows, off, p.cols()) = as_matrix(p.value());
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.cols();
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return parts[0].tape()->record(
      std::move(out), inputs,
      [ids, offsets](Tape<T>& t, const Tensor<T>& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Tensor<T>& gp = t.grad(ids[k]);
          as_matrix(gp) += detail::block(g, 0, g.rows(), offsets[k], gp.cols());
        }
      });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p);
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column counts differ (" +
                           std::to_string(cols) + " vs " +
                           std::to_string(p.cols()) + ")");
    }
    rows += p.rows();
  }
  std::vector<T> data;
  data.reserve(rows * cols);
  std::vector<std::size_t> ids, offsets;
  for (const auto& p : parts) {
    offsets.push_back(data.size());
    ids.push_back(p.id());
    data.insert(data.end(), p.value().values().begin(),
                p.value().values().end());
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return parts[0].tape()->record(
      Tensor<T>(rows, cols, std::move(data)), inputs,
      [ids, offsets](Tape<T>& t, const Tensor<T>& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Tensor<T>& gp = t.grad(ids[k]);
          for (std::size_t i = 0; i < gp.size(); ++i)
            gp[i] += g[offsets[k] + i];
        }
      });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_of(x));
  }
  Tensor<T> out(x.rows(), end - begin);
  as_matrix(out) = detail::block(x.value(), 0, x.rows(), begin, end - begin);
  const std::size_t ix = x.id();
  return x.tape()->record(
      std::move(out), {x}, [ix, begin](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& gx = t.grad(ix);
        detail::block(gx, 0, gx.rows(), begin, g.cols()) += as_matrix(g);
      });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_of(x));
  }
  const std::size_t cols = x.cols();
  const auto src = x.value().values();
  Tensor<T> out(end - begin, cols,
                std::vector<T>(src.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                               src.begin() + static_cast<std::ptrdiff_t>(end * cols)));
  const std::size_t ix = x.id();
  return x.tape()->record(
      std::move(out), {x}, [ix, begin](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& gx = t.grad(ix);
        const std::size_t off = begin * gx.cols();
        for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
      });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows) {
  const std::size_t cols = x.cols();
  Tensor<T> out(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) +
                           " outside " + shape_of(x));
    }
    std::copy_n(x.value().data() + rows[i] * cols, cols, out.data() + i * cols);
  }
  const std::size_t ix = x.id();
  return x.tape()->record(
      std::move(out), {x},
      [ix, idx = std::vector<std::size_t>(rows.begin(), rows.end())](
          Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& gx = t.grad(ix);
        const std::size_t c = gx.cols();
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t k = 0; k < c; ++k) gx(idx[i], k) += g(i, k);
      });
}

template <typename T>
Var<T> reshape(const Var<T>& x, std::size_t rows, std::size_t cols) {
  if (rows * cols != x.value().size()) {
    throw DimensionError("reshape: cannot view " + shape_of(x) + " as " +
                         shape_of(rows, cols));
  }
  const auto src = x.value().values();
  const std::size_t ix = x.id();
  return x.tape()->record(
      Tensor<T>(rows, cols, std::vector<T>(src.begin(), src.end())), {x},
      [ix](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (T v : x.value().values()) total += v;
  const std::size_t ix = x.id();
  return x.tape()->record(Tensor<T>(1, 1, total), {x},
                          [ix](Tape<T>& t, const Tensor<T>& g) {
                            Tensor<T>& gx = t.grad(ix);
                            for (auto& v : gx.values()) v += g[0];
                          });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), T(1) / T(n));
}

template <typename T>
Var<T> clamp_min(const Var<T>& x, T floor) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = std::max(v, floor);
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x},
                          [ix, floor](Tape<T>& t, const Tensor<T>& g) {
                            const Tensor<T>& xv = t.value(ix);
                            Tensor<T>& gx = t.grad(ix);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              if (xv[i] > floor) gx[i] += g[i];
                          });
}

#define ACP_INSTANTIATE_OPS(T)                                                 \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                        \
  template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                     \
  template Var<T> add(const Var<T>&, const Var<T>&);                           \
  template Var<T> sub(const Var<T>&, const Var<T>&);                           \
  template Var<T> mul(const Var<T>&, const Var<T>&);                           \
  template Var<T> add_row(const Var<T>&, const Var<T>&);                       \
  template Var<T> mul_row(const Var<T>&, const Var<T>&);                       \
  template Var<T> mul_col(const Var<T>&, const Var<T>&);                       \
  template Var<T> scale(const Var<T>&, T);                                     \
  template Var<T> relu(const Var<T>&);                                         \
  template Var<T> sigmoid(const Var<T>&);                                      \
  template Var<T> softmax_last(const Var<T>&, T);                              \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);  \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&,      \
                             BatchNormState<T>&, Mode);                        \
  template Var<T> l2_normalize(const Var<T>&, std::vector<std::size_t>*);      \
  template Var<T> dropout(const Var<T>&, T, Rng&, Mode);                       \
  template Var<T> dropout(const Var<T>&, T, std::uint64_t, Mode);              \
  template Var<T> concat_last(std::span<const Var<T>>);                        \
  template Var<T> concat_rows(std::span<const Var<T>>);                        \
  template Var<T> slice_cols(const Var<T>&, std::size_t, std::size_t);         \
  template Var<T> slice_rows(const Var<T>&, std::size_t, std::size_t);         \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::size_t>);    \
  template Var<T> reshape(const Var<T>&, std::size_t, std::size_t);            \
  template Var<T> sum(const Var<T>&);                                          \
  template Var<T> mean(const Var<T>&);                                         \
  template Var<T> clamp_min(const Var<T>&, T);

ACP_INSTANTIATE_OPS(float)
ACP_INSTANTIATE_OPS(double)

#undef ACP_INSTANTIATE_OPS

}  // namespace acp::tensor
