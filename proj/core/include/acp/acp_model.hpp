// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <string>
#include <vector>

#include "acp/attention.hpp"
#include "acp/common.hpp"
#include "acp/ops.hpp"

namespace acp::model {

using tensor::AttentionTrace;
using tensor::BatchNormState;
using tensor::Mode;
using tensor::Parameter;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

struct ACPConfig {
  std::vector<std::uint32_t> block_dims{32, 64, 128};
  /// Fused embedding width.
  std::size_t d = 256;
  std::size_t n_layers = 2;
  std::size_t heads = 16;
  /// Feed-forward width; 0 selects 2 * d.
  std::size_t d_ffn = 0;
  std::size_t n_mem = 8;
  /// Memory sub-feature width, smaller than d.
  std::size_t d_m = 128;
  /// Dropout after block concatenation.
  double p_d = 0.1;
  /// Dropout after every encoder MHA and FFN.
  double p_attn = 0.1;
  /// One key/value projection pair shared by every memory slot.
  bool share_kv = false;
  /// Memory refinement against the top-k2 neighbors.
  bool refine = true;

  std::size_t ffn_width() const noexcept { return d_ffn == 0 ? 2 * d : d_ffn; }
  std::size_t concat_dim() const noexcept;

  /// Throws ConfigError unless d % heads == 0, d_m < d, n_mem >= 1, blocks
  /// are non-empty and dropout rates lie in [0, 1).
  void validate() const;

  /// Small preset that trains in under a minute on one core.
  static ACPConfig desk(std::vector<std::uint32_t> block_dims);

  friend bool operator==(const ACPConfig&, const ACPConfig&) = default;
};

/// `batch` neighbor sequences of equal `length` stacked along rows: row
/// s * length + j holds neighbor j of sequence s, and row s * length is the
/// probe itself.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  /// One [batch * length x block_dims[b]] matrix per block.
  std::vector<Matrix> blocks;

  std::size_t rows() const noexcept { return batch * length; }
};

/// Softmax matrices of every attention stage of one forward pass.
template <typename T>
struct ACPTrace {
  std::vector<AttentionTrace<T>> encoder;
  AttentionTrace<T> memory;
  AttentionTrace<T> refine;
  AttentionTrace<T> reconstruct;
};

/// Per-forward state: target tape, mode, dropout source and optional trace.
template <typename T>
struct Forward {
  Tape<T>& tape;
  Mode mode = Mode::kEval;
  tensor::Rng* rng = nullptr;
  ACPTrace<T>* trace = nullptr;
};

/// The Attention-based Correlation Predictor. Parameters live in a stable
/// store so tapes may hold pointers to them across a forward/backward pass.
template <typename T>
class ACPModel {
 public:
  explicit ACPModel(ACPConfig cfg, std::uint64_t seed = 0);

  const ACPConfig& config() const noexcept { return cfg_; }

  std::deque<Parameter<T>>& parameters() noexcept { return params_; }
  const std::deque<Parameter<T>>& parameters() const noexcept {
    return params_;
  }
  Parameter<T>& parameter(const std::string& name);
  std::size_t parameter_count() const noexcept;
  void zero_grad();

  BatchNormState<T>& fusion_bn() noexcept { return fuse_bn_; }
  BatchNormState<T>& memory_bn() noexcept { return mem_bn_; }
  const BatchNormState<T>& fusion_bn() const noexcept { return fuse_bn_; }
  const BatchNormState<T>& memory_bn() const noexcept { return mem_bn_; }

  /// Optimizer steps taken; zero means untrained.
  std::uint64_t steps() const noexcept { return steps_; }
  void set_steps(std::uint64_t s) noexcept { steps_ = s; }

  /// Binds every parameter to `fwd.tape`. Must precede the stage calls.
  void bind(Forward<T>& fwd);

  /// Scaled L2 normalization per block, concatenation, dropout, affine map
  /// and batch normalization. Returns X [rows x d].
  Var<T> fuse(Forward<T>& fwd, const SequenceBatch& seq);
  /// Transformer encoder stack without positional encoding. Returns Z.
  Var<T> encode(Forward<T>& fwd, const Var<T>& x, std::size_t length);
  /// Probe-query attention per slot. Returns M [batch * n_mem x d].
  Var<T> init_memory(Forward<T>& fwd, const Var<T>& z, std::size_t length);
  /// Slots attend to the first k2 neighbors; residual plus layer norm.
  Var<T> refine_memory(Forward<T>& fwd, const Var<T>& m, const Var<T>& z,
                       std::size_t length, std::size_t k2);
  /// Neighbors attend to the memory; the attention output is kept as is.
  Var<T> reconstruct(Forward<T>& fwd, const Var<T>& z, const Var<T>& m,
                     std::size_t length);
  /// Correlation scores in (0, 1), [rows x 1].
  Var<T> classify(Forward<T>& fwd, const Var<T>& z_rcs);

  /// Full pipeline. Binds the tape itself.
  Var<T> predict(Forward<T>& fwd, const SequenceBatch& seq, std::size_t k2);

  /// Eval-mode scores without gradient bookkeeping beyond one throwaway tape.
  std::vector<T> score(const SequenceBatch& seq, std::size_t k2,
                       ACPTrace<T>* trace = nullptr);

  /// Eval-mode fused embeddings of independent items, one row per input row.
  Tensor<T> embed(const std::vector<Matrix>& blocks);

  /// Clamps memory temperatures to their floor. Returns slots clamped.
  std::size_t clamp_temperatures();

  /// Flat copies of every parameter value and batch-norm statistic.
  std::vector<Tensor<T>> snapshot() const;
  void restore(const std::vector<Tensor<T>>& values);

  static constexpr T kMinTemperature = T(1e-3);

 private:
  struct Linear {
    std::size_t w = 0, b = 0;
  };
  struct Norm {
    std::size_t gain = 0, bias = 0;
  };
  struct MhaParams {
    Linear q, k, v, o;
  };
  struct EncoderLayer {
    MhaParams mha;
    Norm ln1;
    Linear ffn1, ffn2;
    Norm ln2;
  };

  std::size_t add_param(const std::string& name, Tensor<T> value, bool decay);
  Linear add_linear(const std::string& name, std::size_t in, std::size_t out,
                    tensor::Rng& rng);
  Norm add_norm(const std::string& name, std::size_t dim);

  Var<T> p(std::size_t index) const { return bound_.at(index); }
  Var<T> linear(const Var<T>& x, const Linear& l) const;
  Var<T> mha(Forward<T>& fwd, const MhaParams& mp, const Var<T>& queries,
             const Var<T>& keys, const tensor::AttentionLayout& layout,
             AttentionTrace<T>* trace) const;
  Var<T> maybe_dropout(Forward<T>& fwd, const Var<T>& x, double p) const;

  ACPConfig cfg_;
  std::deque<Parameter<T>> params_;
  std::vector<Var<T>> bound_;

  std::vector<std::size_t> gamma_;
  Linear fuse_;
  Norm fuse_norm_;
  BatchNormState<T> fuse_bn_;
  std::vector<EncoderLayer> layers_;
  std::size_t mem_q_ = 0, mem_k_ = 0, mem_v_ = 0, mem_mu_ = 0;
  Linear mem_fc_;
  Norm mem_norm_;
  BatchNormState<T> mem_bn_;
  MhaParams refine_mha_;
  Norm refine_ln_;
  MhaParams rcs_mha_;
  Linear cls_;
  std::uint64_t steps_ = 0;
};

extern template class ACPModel<float>;
extern template class ACPModel<double>;

/// Versioned binary checkpoint: config header, named parameter blobs as
/// 32-bit floats, batch-norm running statistics.
void save_checkpoint(const ACPModel<float>& model,
                     const std::filesystem::path& path);
/// Rebuilds a model from the header config. Throws FormatError on damage.
ACPModel<float> load_checkpoint(const std::filesystem::path& path);
/// Loads into an existing model. Throws ConfigError when configs differ.
void load_checkpoint_into(ACPModel<float>& model,
                          const std::filesystem::path& path);

}  // namespace acp::model
