// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include "acp/acp_model.hpp"

#include <cmath>
#include <numeric>

namespace acp::model {

using tensor::AttentionLayout;

std::size_t ACPConfig::concat_dim() const noexcept {
  return std::accumulate(block_dims.begin(), block_dims.end(), std::size_t{0});
}

void ACPConfig::validate() const {
  if (block_dims.empty()) throw ConfigError("model needs at least one block");
  for (auto b : block_dims) {
    if (b == 0) throw ConfigError("block dimensions must be positive");
  }
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw ConfigError("d=" + std::to_string(d) + " must be a positive multiple "
                      "of heads=" + std::to_string(heads));
  }
  if (d_m == 0 || d_m >= d) {
    throw ConfigError("d_m=" + std::to_string(d_m) + " must lie in [1, d=" +
                      std::to_string(d) + ")");
  }
  if (n_mem == 0) throw ConfigError("n_mem must be >= 1");
  if (!(p_d >= 0.0 && p_d < 1.0) || !(p_attn >= 0.0 && p_attn < 1.0)) {
    throw ConfigError("dropout rates must lie in [0, 1)");
  }
}

ACPConfig ACPConfig::desk(std::vector<std::uint32_t> block_dims) {
  ACPConfig c;
  c.block_dims = std::move(block_dims);
  c.d = 32;
  c.heads = 4;
  c.n_layers = 2;
  c.d_ffn = 64;
  c.n_mem = 8;
  c.d_m = 16;
  return c;
}

template <typename T>
ACPModel<T>::ACPModel(ACPConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  tensor::Rng rng(seed);
  const std::size_t d = cfg_.d;
  for (std::size_t b = 0; b < cfg_.block_dims.size(); ++b) {
    gamma_.push_back(add_param("fuse.gamma" + std::to_string(b),
                               Tensor<T>(1, cfg_.block_dims[b], T(1)), false));
  }
  fuse_ = add_linear("fuse.fc", cfg_.concat_dim(), d, rng);
  fuse_norm_ = add_norm("fuse.bn", d);
  fuse_bn_ = BatchNormState<T>(d);

  const auto add_mha = [&](const std::string& name) {
    MhaParams m;
    m.q = add_linear(name + ".q", d, d, rng);
    m.k = add_linear(name + ".k", d, d, rng);
    m.v = add_linear(name + ".v", d, d, rng);
    m.o = add_linear(name + ".o", d, d, rng);
    return m;
  };
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string name = "enc" + std::to_string(l);
    EncoderLayer layer;
    layer.mha = add_mha(name + ".mha");
    layer.ln1 = add_norm(name + ".ln1", d);
    layer.ffn1 = add_linear(name + ".ffn1", d, cfg_.ffn_width(), rng);
    layer.ffn2 = add_linear(name + ".ffn2", cfg_.ffn_width(), d, rng);
    layer.ln2 = add_norm(name + ".ln2", d);
    layers_.push_back(layer);
  }

  // Slot i owns columns [i * d_m, (i + 1) * d_m) of the stacked projections.
  const std::size_t nm = cfg_.n_mem * cfg_.d_m;
  const std::size_t kv = cfg_.share_kv ? cfg_.d_m : nm;
  const auto uniform = [&](std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Tensor<T> t(in, out);
    for (auto& x : t.values())
      x = static_cast<T>((2.0 * tensor::uniform01(rng) - 1.0) * bound);
    return t;
  };
  mem_q_ = add_param("mem.wq", uniform(d, nm), true);
  mem_k_ = add_param("mem.wk", uniform(d, kv), true);
  mem_v_ = add_param("mem.wv", uniform(d, kv), true);
  mem_mu_ = add_param("mem.mu",
                      Tensor<T>(1, cfg_.n_mem,
                                static_cast<T>(std::sqrt(double(cfg_.d_m)))),
                      false);
  params_[mem_mu_].positive = true;
  mem_fc_ = add_linear("mem.fc", cfg_.d_m, d, rng);
  mem_norm_ = add_norm("mem.bn", d);
  mem_bn_ = BatchNormState<T>(d);

  if (cfg_.refine) {
    refine_mha_ = add_mha("refine.mha");
    refine_ln_ = add_norm("refine.ln", d);
  }
  rcs_mha_ = add_mha("rcs.mha");
  cls_ = add_linear("cls", d, 1, rng);
}

template <typename T>
std::size_t ACPModel<T>::add_param(const std::string& name, Tensor<T> value,
                                   bool decay) {
  params_.emplace_back(name, std::move(value), decay);
  return params_.size() - 1;
}

template <typename T>
typename ACPModel<T>::Linear ACPModel<T>::add_linear(const std::string& name,
                                                     std::size_t in,
                                                     std::size_t out,
                                                     tensor::Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  const auto draw = [&] {
    return static_cast<T>((2.0 * tensor::uniform01(rng) - 1.0) * bound);
  };
  Tensor<T> w(in, out);
  for (auto& x : w.values()) x = draw();
  Tensor<T> b(1, out);
  for (auto& x : b.values()) x = draw();
  Linear l;
  l.w = add_param(name + ".w", std::move(w), true);
  l.b = add_param(name + ".b", std::move(b), false);
  return l;
}

template <typename T>
typename ACPModel<T>::Norm ACPModel<T>::add_norm(const std::string& name,
                                                 std::size_t dim) {
  Norm n;
  n.gain = add_param(name + ".gain", Tensor<T>(1, dim, T(1)), false);
  n.bias = add_param(name + ".bias", Tensor<T>(1, dim, T(0)), false);
  return n;
}

template <typename T>
Parameter<T>& ACPModel<T>::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ConfigError("no parameter named '" + name + "'");
}

template <typename T>
std::size_t ACPModel<T>::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ACPModel<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void ACPModel<T>::bind(Forward<T>& fwd) {
  bound_.clear();
  bound_.reserve(params_.size());
  for (auto& p : params_) bound_.push_back(fwd.tape.param(p));
}

template <typename T>
Var<T> ACPModel<T>::linear(const Var<T>& x, const Linear& l) const {
  return tensor::add_row(tensor::matmul(x, p(l.w)), p(l.b));
}

template <typename T>
Var<T> ACPModel<T>::maybe_dropout(Forward<T>& fwd, const Var<T>& x,
                                  double rate) const {
  if (fwd.mode == Mode::kEval || rate == 0.0) return x;
  if (fwd.rng == nullptr) throw ContractError("train mode needs a dropout rng");
  return tensor::dropout(x, static_cast<T>(rate), *fwd.rng, fwd.mode);
}

template <typename T>
Var<T> ACPModel<T>::mha(Forward<T>&, const MhaParams& mp, const Var<T>& queries,
                        const Var<T>& keys, const AttentionLayout& layout,
                        AttentionTrace<T>* trace) const {
  const T temp = static_cast<T>(
      std::sqrt(static_cast<double>(cfg_.d / cfg_.heads)));
  const auto q = linear(queries, mp.q);
  const auto k = linear(keys, mp.k);
  const auto v = linear(keys, mp.v);
  return linear(tensor::attention(q, k, v, layout, temp, trace), mp.o);
}

template <typename T>
Var<T> ACPModel<T>::fuse(Forward<T>& fwd, const SequenceBatch& seq) {
  if (seq.blocks.size() != cfg_.block_dims.size()) {
    throw DimensionError("sequence carries " + std::to_string(seq.blocks.size()) +
                         " blocks, model expects " +
                         std::to_string(cfg_.block_dims.size()));
  }
  if (fwd.mode == Mode::kTrain && seq.length < 2) {
    throw DegenerateBatchError(
        "train-mode fusion needs sequences of at least 2 elements");
  }
  std::vector<Var<T>> parts;
  for (std::size_t b = 0; b < seq.blocks.size(); ++b) {
    const Matrix& m = seq.blocks[b];
    if (m.cols() != cfg_.block_dims[b] || m.rows() != seq.rows()) {
      throw DimensionError("block " + std::to_string(b) + " is " +
                           std::to_string(m.rows()) + "x" +
                           std::to_string(m.cols()) + ", expected " +
                           std::to_string(seq.rows()) + "x" +
                           std::to_string(cfg_.block_dims[b]));
    }
    Var<T> x;
    if constexpr (std::is_same_v<T, float>) {
      x = fwd.tape.constant(m);
    } else {
      x = fwd.tape.constant(m.template cast<T>());
    }
    parts.push_back(tensor::mul_row(tensor::l2_normalize(x), p(gamma_[b])));
  }
  auto xc = parts.size() == 1
                ? parts[0]
                : tensor::concat_last<T>(std::span<const Var<T>>(parts));
  xc = maybe_dropout(fwd, xc, cfg_.p_d);
  return tensor::batch_norm(linear(xc, fuse_), p(fuse_norm_.gain),
                            p(fuse_norm_.bias), fuse_bn_, fwd.mode);
}

template <typename T>
Var<T> ACPModel<T>::encode(Forward<T>& fwd, const Var<T>& x,
                           std::size_t length) {
  const AttentionLayout layout{cfg_.heads, length, length};
  if (fwd.trace != nullptr) fwd.trace->encoder.assign(layers_.size(), {});
  Var<T> h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    auto* trace = fwd.trace != nullptr ? &fwd.trace->encoder[l] : nullptr;
    auto att = mha(fwd, layer.mha, h, h, layout, trace);
    auto y = tensor::layer_norm(tensor::add(h, maybe_dropout(fwd, att, cfg_.p_attn)),
                                p(layer.ln1.gain), p(layer.ln1.bias));
    auto ffn = linear(tensor::relu(linear(y, layer.ffn1)), layer.ffn2);
    h = tensor::layer_norm(tensor::add(y, maybe_dropout(fwd, ffn, cfg_.p_attn)),
                           p(layer.ln2.gain), p(layer.ln2.bias));
  }
  return h;
}

template <typename T>
Var<T> ACPModel<T>::init_memory(Forward<T>& fwd, const Var<T>& z,
                                std::size_t length) {
  if (length == 0 || z.rows() % length != 0) {
    throw DimensionError("init_memory: rows not a multiple of sequence length");
  }
  const std::size_t batch = z.rows() / length;
  std::vector<std::size_t> probes(batch);
  for (std::size_t s = 0; s < batch; ++s) probes[s] = s * length;
  const auto z1 = tensor::gather_rows(z, std::span<const std::size_t>(probes));
  const auto q = tensor::matmul(z1, p(mem_q_));
  auto k = tensor::matmul(z, p(mem_k_));
  auto v = tensor::matmul(z, p(mem_v_));
  if (cfg_.share_kv && cfg_.n_mem > 1) {
    std::vector<Var<T>> ks(cfg_.n_mem, k), vs(cfg_.n_mem, v);
    k = tensor::concat_last<T>(std::span<const Var<T>>(ks));
    v = tensor::concat_last<T>(std::span<const Var<T>>(vs));
  }
  // Floor applied in the graph too, so a temperature driven below it between
  // clamps never reaches the softmax.
  const auto mu = tensor::clamp_min(p(mem_mu_), kMinTemperature);
  const AttentionLayout layout{cfg_.n_mem, 1, length};
  auto* trace = fwd.trace != nullptr ? &fwd.trace->memory : nullptr;
  const auto mp = tensor::attention(q, k, v, layout, mu, trace);
  // [batch x n_mem * d_m] -> [batch * n_mem x d_m]: one row per slot.
  const auto slots = tensor::reshape(mp, batch * cfg_.n_mem, cfg_.d_m);
  const auto proj = linear(slots, mem_fc_);
  return tensor::relu(tensor::batch_norm(proj, p(mem_norm_.gain),
                                         p(mem_norm_.bias), mem_bn_, fwd.mode));
}

template <typename T>
Var<T> ACPModel<T>::refine_memory(Forward<T>& fwd, const Var<T>& m,
                                  const Var<T>& z, std::size_t length,
                                  std::size_t k2) {
  if (k2 < 1) throw ConfigError("k2 must be >= 1");
  if (k2 > length) {
    throw ConfigError("k2=" + std::to_string(k2) + " exceeds sequence length " +
                      std::to_string(length));
  }
  if (!cfg_.refine) return m;
  const std::size_t batch = z.rows() / length;
  std::vector<std::size_t> rows;
  rows.reserve(batch * k2);
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t j = 0; j < k2; ++j) rows.push_back(s * length + j);
  const auto r = tensor::gather_rows(z, std::span<const std::size_t>(rows));
  auto* trace = fwd.trace != nullptr ? &fwd.trace->refine : nullptr;
  const auto att =
      mha(fwd, refine_mha_, m, r, AttentionLayout{cfg_.heads, cfg_.n_mem, k2},
          trace);
  return tensor::layer_norm(tensor::add(m, att), p(refine_ln_.gain),
                            p(refine_ln_.bias));
}

template <typename T>
Var<T> ACPModel<T>::reconstruct(Forward<T>& fwd, const Var<T>& z,
                                const Var<T>& m, std::size_t length) {
  auto* trace = fwd.trace != nullptr ? &fwd.trace->reconstruct : nullptr;
  return mha(fwd, rcs_mha_, z, m, AttentionLayout{cfg_.heads, length, cfg_.n_mem},
             trace);
}

template <typename T>
Var<T> ACPModel<T>::classify(Forward<T>&, const Var<T>& z_rcs) {
  return tensor::sigmoid(linear(z_rcs, cls_));
}

template <typename T>
Var<T> ACPModel<T>::predict(Forward<T>& fwd, const SequenceBatch& seq,
                            std::size_t k2) {
  if (seq.batch == 0 || seq.length == 0) {
    throw ConfigError("empty sequence batch");
  }
  bind(fwd);
  const auto x = fuse(fwd, seq);
  const auto z = encode(fwd, x, seq.length);
  const auto m = init_memory(fwd, z, seq.length);
  const auto ms = refine_memory(fwd, m, z, seq.length, k2);
  const auto zr = reconstruct(fwd, z, ms, seq.length);
  return classify(fwd, zr);
}

template <typename T>
std::vector<T> ACPModel<T>::score(const SequenceBatch& seq, std::size_t k2,
                                  ACPTrace<T>* trace) {
  const ScopedFlushDenormals ftz;
  Tape<T> tape;
  Forward<T> fwd{tape, Mode::kEval, nullptr, trace};
  const auto s = predict(fwd, seq, k2);
  const auto v = s.value().values();
  return {v.begin(), v.end()};
}

template <typename T>
Tensor<T> ACPModel<T>::embed(const std::vector<Matrix>& blocks) {
  if (blocks.empty()) throw DimensionError("embed: no blocks");
  const ScopedFlushDenormals ftz;
  Tape<T> tape;
  Forward<T> fwd{tape, Mode::kEval};
  bind(fwd);
  return fuse(fwd, SequenceBatch{blocks.front().rows(), 1, blocks}).value();
}

template <typename T>
std::size_t ACPModel<T>::clamp_temperatures() {
  std::size_t clamped = 0;
  for (auto& p : params_) {
    if (!p.positive) continue;
    for (auto& x : p.value.values()) {
      if (!(x >= kMinTemperature)) {
        x = kMinTemperature;
        ++clamped;
      }
    }
  }
  return clamped;
}

template <typename T>
std::vector<Tensor<T>> ACPModel<T>::snapshot() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size() + 4);
  for (const auto& p : params_) out.push_back(p.value);
  out.push_back(fuse_bn_.running_mean);
  out.push_back(fuse_bn_.running_var);
  out.push_back(mem_bn_.running_mean);
  out.push_back(mem_bn_.running_var);
  return out;
}

template <typename T>
void ACPModel<T>::restore(const std::vector<Tensor<T>>& values) {
  if (values.size() != params_.size() + 4) {
    throw ContractError("snapshot does not match model");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!values[i].same_shape(params_[i].value)) {
      throw ContractError("snapshot shape mismatch at " + params_[i].name);
    }
    params_[i].value = values[i];
  }
  const std::size_t n = params_.size();
  fuse_bn_.running_mean = values[n];
  fuse_bn_.running_var = values[n + 1];
  mem_bn_.running_mean = values[n + 2];
  mem_bn_.running_var = values[n + 3];
}

template class ACPModel<float>;
template class ACPModel<double>;

}  // namespace acp::model
