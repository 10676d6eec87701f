// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acp/acp_model.hpp"
#include "acp/embedding.hpp"

namespace acp::train {

/// How weight decay enters the Adam update.
enum class DecayMode {
  /// Weights shrink by lr * weight_decay outside the adaptive step.
  kDecoupled,
  /// weight_decay * w is added to the gradient before the moment updates.
  kL2,
};

DecayMode parse_decay_mode(const std::string& name);
const char* decay_mode_name(DecayMode mode);

struct TrainConfig {
  /// Nearest-neighbor pool searched per probe.
  std::size_t K = 1000;
  /// Neighbors sampled per training sequence; the probe is prepended.
  std::size_t l1 = 64;
  /// Refinement length during training.
  std::size_t l2 = 6;
  /// Focal exponent.
  double gamma = 1.0;
  double lr = 2e-4;
  double weight_decay = 5e-4;
  /// Applies to affine weights only in both modes.
  DecayMode decay_mode = DecayMode::kDecoupled;
  std::size_t warmup_epochs = 10;
  double warmup_factor = 0.1;
  std::size_t epochs = 20;
  /// Sequences per optimizer step.
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  /// Training probes drawn per epoch; 0 uses every non-held-out probe.
  std::size_t probes_per_epoch = 0;
  /// Fraction of probes reserved for best-checkpoint selection.
  double holdout_fraction = 0.1;
  /// Worker threads for sequence construction.
  std::size_t threads = 1;

  /// Throws ConfigError unless l2 <= l1 <= K, gamma >= 0, lr > 0 and the
  /// remaining fields are in range.
  void validate() const;

  /// Settings that train the desk model in well under a minute.
  static TrainConfig desk();

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Model and training settings read from one flat key=value file.
struct RunConfig {
  model::ACPConfig model;
  TrainConfig train;
};

/// `#` starts a comment. `preset = desk` resets both halves to their desk
/// presets and must come first. Unknown keys and malformed values throw
/// ConfigError naming the line.
RunConfig parse_run_config(std::string_view text,
                           std::vector<std::uint32_t> block_dims);
RunConfig load_run_config(const std::filesystem::path& path,
                          std::vector<std::uint32_t> block_dims);
std::string format_run_config(const RunConfig& cfg);

// --- sequences -----------------------------------------------------------

/// One training sequence: members[0] is the probe, the rest are sampled
/// neighbors sorted by distance. Indices refer to the source set.
struct SequenceSample {
  std::uint64_t probe_item = 0;
  std::vector<std::uint32_t> members;
  std::vector<std::uint8_t> labels;
};

/// Per-probe neighbor pools over one labelled set.
class SequenceSampler {
 public:
  /// Cosine K-NN over the concatenated normalized blocks. Throws ConfigError
  /// when K >= set size or l1 > K.
  SequenceSampler(const data::EmbeddingSet& set, std::size_t K, std::size_t l1,
                  std::size_t threads = 1);

  /// Pool = every correct match among the K nearest plus the l1 nearest
  /// false matches. Returns nullopt for a probe with no correct match.
  /// Deterministic per (seed, probe).
  std::optional<SequenceSample> sample(std::size_t probe,
                                       std::uint64_t seed) const;

  /// Samples every listed probe, dropping those without correct matches.
  std::vector<SequenceSample> sample_all(std::span<const std::size_t> probes,
                                         std::uint64_t seed,
                                         std::size_t* skipped = nullptr) const;

  std::size_t positives_in_pool(std::size_t probe) const;
  std::size_t pool_size(std::size_t probe) const;
  std::size_t size() const noexcept { return identity_.size(); }
  std::size_t l1() const noexcept { return l1_; }

 private:
  std::size_t K_, l1_;
  std::vector<std::uint32_t> identity_;
  std::vector<std::uint64_t> item_;
  /// Row p: K nearest other items by ascending distance.
  std::vector<std::uint32_t> neighbors_;
  std::vector<float> distance_;
  std::vector<std::uint32_t> n_pos_;
};

/// Every probe of `set` in order, skipping those without a correct match.
std::vector<SequenceSample> build_training_sequences(
    const data::EmbeddingSet& set, std::size_t K, std::size_t l1,
    std::uint64_t seed, std::size_t* skipped = nullptr);

/// Stacks equal-length samples into a model batch drawn from `blocks`.
model::SequenceBatch gather_batch(const std::vector<Matrix>& blocks,
                                  std::span<const SequenceSample> samples);

// --- loss and optimizer --------------------------------------------------

inline constexpr double kProbClamp = 1e-7;

/// Mean of -(1 - p_t)^gamma log(p_t) with p_t = s for y = 1 and 1 - s
/// otherwise; s is clamped to [1e-7, 1 - 1e-7].
double focal_loss(std::span<const double> s, std::span<const std::uint8_t> y,
                  double gamma);

/// Differentiable form over a [rows x 1] score node.
template <typename T>
tensor::Var<T> focal_loss(const tensor::Var<T>& s,
                          std::span<const std::uint8_t> y, double gamma);

/// Linear ramp from warmup_factor * lr at epoch 0 to lr at warmup_epochs,
/// constant afterwards.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

/// Adam with weight decay on parameters flagged `decay`.
template <typename T>
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    DecayMode decay = DecayMode::kDecoupled;
  };

  explicit Adam(std::vector<tensor::Parameter<T>*> params, Options opt = {});

  /// Throws DivergenceError naming the parameter if any gradient is
  /// non-finite; no parameter is touched in that case.
  void step(double lr, double weight_decay);
  std::uint64_t steps() const noexcept { return t_; }

 private:
  Options opt_;
  std::vector<tensor::Parameter<T>*> params_;
  std::vector<tensor::Tensor<T>> m_, v_;
  std::uint64_t t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

// --- training loop -------------------------------------------------------

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0;
  double mean_loss = 0;
  double holdout_loss = 0;
};

struct SequenceEval {
  double loss = 0;
  double accuracy = 0;
  /// Accuracy of always predicting the more frequent label.
  double majority_accuracy = 0;
};

struct TrainResult {
  std::vector<EpochStats> curve;
  /// Epoch whose weights were kept; -1 when no epoch ran.
  long best_epoch = -1;
  double best_holdout_loss = 0;
  /// Held-out sequence metrics at the kept weights.
  SequenceEval holdout;
  /// Training probes without a correct match among their K neighbors.
  std::size_t skipped_probes = 0;
};

/// Called after every epoch, e.g. for progress logging.
using EpochCallback = std::function<void(const EpochStats&)>;

/// Trains in place and leaves the weights of the epoch with the lowest
/// held-out loss. Bit-reproducible for a fixed (model seed, cfg, data).
/// Throws DivergenceError on a non-finite loss or gradient.
TrainResult train(model::ACPModel<float>& model, const data::EmbeddingSet& set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Eval-mode focal loss and 0.5-threshold accuracy over fixed sequences.
SequenceEval evaluate_sequences(model::ACPModel<float>& model,
                                const std::vector<Matrix>& blocks,
                                const std::vector<SequenceSample>& samples,
                                std::size_t k2, double gamma,
                                std::size_t batch_size = 32);

/// CSV with header `epoch,mean_loss,holdout_loss`.
void write_loss_csv(const std::vector<EpochStats>& curve,
                    const std::filesystem::path& path);

}  // namespace acp::train
