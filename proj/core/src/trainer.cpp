// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "acp/train.hpp"

namespace acp::train {
namespace {

// Seed streams; each consumer of randomness owns one.
constexpr std::uint64_t kSplitStream = 1;
constexpr std::uint64_t kHoldoutStream = 2;
constexpr std::uint64_t kDropoutStream = 3;
constexpr std::uint64_t kEpochStream = 1000;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename V>
V parse_number(const std::string& text, const std::string& where) {
  V out{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw ConfigError(where + ": cannot parse '" + text + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& text, const std::string& where) {
  if (text == "true" || text == "on" || text == "1") return true;
  if (text == "false" || text == "off" || text == "0") return false;
  throw ConfigError(where + ": expected true/false, got '" + text + "'");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (l2 < 1 || l2 > l1 || l1 > K) {
    throw ConfigError("need 1 <= l2 <= l1 <= K, got l2=" + std::to_string(l2) +
                      " l1=" + std::to_string(l1) + " K=" + std::to_string(K));
  }
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
    throw ConfigError("focal gamma must be finite and >= 0");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(warmup_factor > 0.0 && warmup_factor <= 1.0)) {
    throw ConfigError("warmup_factor must lie in (0, 1]");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("holdout_fraction must lie in [0, 1)");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.l1 = 32;
  c.lr = 2e-3;
  c.warmup_epochs = 3;
  c.epochs = 25;
  c.probes_per_epoch = 1500;
  c.decay_mode = DecayMode::kL2;
  return c;
}

RunConfig parse_run_config(std::string_view text,
                           std::vector<std::uint32_t> block_dims) {
  RunConfig rc{model::ACPConfig{}, TrainConfig{}};
  rc.model.block_dims = block_dims;
  auto& m = rc.model;
  auto& t = rc.train;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const auto size = [](std::size_t& f) -> Setter {
    return [&f](const std::string& v, const std::string& w) {
      f = parse_number<std::size_t>(v, w);
    };
  };
  const auto real = [](double& f) -> Setter {
    return [&f](const std::string& v, const std::string& w) {
      f = parse_number<double>(v, w);
    };
  };
  const auto flag = [](bool& f) -> Setter {
    return [&f](const std::string& v, const std::string& w) {
      f = parse_bool(v, w);
    };
  };
  const std::map<std::string, Setter> setters{
      {"K", size(t.K)},
      {"l1", size(t.l1)},
      {"l2", size(t.l2)},
      {"gamma", real(t.gamma)},
      {"lr", real(t.lr)},
      {"weight_decay", real(t.weight_decay)},
      {"decay_mode",
       [&t](const std::string& v, const std::string&) {
         t.decay_mode = parse_decay_mode(v);
       }},
      {"warmup_epochs", size(t.warmup_epochs)},
      {"warmup_factor", real(t.warmup_factor)},
      {"epochs", size(t.epochs)},
      {"batch_size", size(t.batch_size)},
      {"seed",
       [&t](const std::string& v, const std::string& w) {
         t.seed = parse_number<std::uint64_t>(v, w);
       }},
      {"probes_per_epoch", size(t.probes_per_epoch)},
      {"holdout_fraction", real(t.holdout_fraction)},
      {"threads", size(t.threads)},
      {"d", size(m.d)},
      {"heads", size(m.heads)},
      {"layers", size(m.n_layers)},
      {"d_ffn", size(m.d_ffn)},
      {"n_mem", size(m.n_mem)},
      {"d_m", size(m.d_m)},
      {"p_d", real(m.p_d)},
      {"p_attn", real(m.p_attn)},
      {"share_kv", flag(m.share_kv)},
      {"refine", flag(m.refine)},
  };

  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool seen_key = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "preset") {
      if (seen_key) throw ConfigError(where + ": preset must come first");
      if (value == "desk") {
        rc.model = model::ACPConfig::desk(block_dims);
        rc.train = TrainConfig::desk();
      } else if (value != "default") {
        throw ConfigError(where + ": unknown preset '" + value + "'");
      }
      seen_key = true;
      continue;
    }
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
    it->second(value, where);
    seen_key = true;
  }
  rc.model.validate();
  rc.train.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path,
                          std::vector<std::uint32_t> block_dims) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::move(block_dims));
}

std::string format_run_config(const RunConfig& rc) {
  const auto& m = rc.model;
  const auto& t = rc.train;
  std::ostringstream o;
  o << "d = " << m.d << "\nheads = " << m.heads << "\nlayers = " << m.n_layers
    << "\nd_ffn = " << m.d_ffn << "\nn_mem = " << m.n_mem << "\nd_m = " << m.d_m
    << "\np_d = " << fmt(m.p_d) << "\np_attn = " << fmt(m.p_attn)
    << "\nshare_kv = " << (m.share_kv ? "true" : "false")
    << "\nrefine = " << (m.refine ? "true" : "false") << "\nK = " << t.K
    << "\nl1 = " << t.l1 << "\nl2 = " << t.l2 << "\ngamma = " << fmt(t.gamma)
    << "\nlr = " << fmt(t.lr) << "\nweight_decay = " << fmt(t.weight_decay)
    << "\ndecay_mode = " << decay_mode_name(t.decay_mode)
    << "\nwarmup_epochs = " << t.warmup_epochs
    << "\nwarmup_factor = " << fmt(t.warmup_factor) << "\nepochs = " << t.epochs
    << "\nbatch_size = " << t.batch_size << "\nseed = " << t.seed
    << "\nprobes_per_epoch = " << t.probes_per_epoch
    << "\nholdout_fraction = " << fmt(t.holdout_fraction)
    << "\nthreads = " << t.threads << "\n";
  return o.str();
}

SequenceEval evaluate_sequences(model::ACPModel<float>& model,
                                const std::vector<Matrix>& blocks,
                                const std::vector<SequenceSample>& samples,
                                std::size_t k2, double gamma,
                                std::size_t batch_size) {
  SequenceEval out;
  if (samples.empty()) {
    out.loss = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (std::size_t lo = 0; lo < samples.size(); lo += batch_size) {
    const std::size_t hi = std::min(samples.size(), lo + batch_size);
    const std::span<const SequenceSample> part(samples.data() + lo, hi - lo);
    const auto s = model.score(gather_batch(blocks, part), k2);
    scores.insert(scores.end(), s.begin(), s.end());
    for (const auto& smp : part)
      labels.insert(labels.end(), smp.labels.begin(), smp.labels.end());
  }
  out.loss = focal_loss(scores, labels, gamma);
  // Accuracy counts neighbors only; the probe slot is trivially positive.
  const std::size_t length = samples.front().members.size();
  std::size_t correct = 0, positives = 0, total = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i % length == 0) continue;
    correct += (scores[i] >= 0.5) == (labels[i] != 0);
    positives += labels[i];
    ++total;
  }
  if (total > 0) {
    out.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    const double pos = static_cast<double>(positives) / static_cast<double>(total);
    out.majority_accuracy = std::max(pos, 1.0 - pos);
  }
  return out;
}

TrainResult train(model::ACPModel<float>& model, const data::EmbeddingSet& set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const ScopedFlushDenormals ftz;
  if (model.config().block_dims != set.block_dims) {
    throw DimensionError("model block layout does not match the training set");
  }
  TrainResult result;
  if (cfg.epochs == 0) return result;

  const SequenceSampler sampler(set, cfg.K, cfg.l1, cfg.threads);
  std::vector<Matrix> blocks;
  for (std::size_t b = 0; b < set.block_count(); ++b)
    blocks.push_back(set.block_matrix(b));

  std::vector<std::size_t> probes(set.size());
  std::iota(probes.begin(), probes.end(), std::size_t{0});
  for (std::size_t p : probes) result.skipped_probes += sampler.positives_in_pool(p) == 0;
  tensor::Rng split_rng(derive_seed(cfg.seed, kSplitStream));
  std::shuffle(probes.begin(), probes.end(), split_rng);
  std::size_t n_hold = static_cast<std::size_t>(
      std::llround(cfg.holdout_fraction * static_cast<double>(probes.size())));
  if (cfg.holdout_fraction > 0.0) n_hold = std::max<std::size_t>(n_hold, 1);
  const std::vector<std::size_t> holdout_probes(probes.begin(), probes.begin() + n_hold);
  std::vector<std::size_t> train_probes(probes.begin() + n_hold, probes.end());
  if (train_probes.empty()) throw ConfigError("no training probes left after holdout");
  const auto holdout =
      sampler.sample_all(holdout_probes, derive_seed(cfg.seed, kHoldoutStream));

  std::vector<tensor::Parameter<float>*> params;
  for (auto& p : model.parameters()) params.push_back(&p);
  Adam<float>::Options opt;
  opt.decay = cfg.decay_mode;
  Adam<float> adam(std::move(params), opt);
  tensor::Rng dropout_rng(derive_seed(cfg.seed, kDropoutStream));

  std::vector<tensor::Tensor<float>> best;
  double best_loss = std::numeric_limits<double>::infinity();
  const std::size_t per_epoch =
      cfg.probes_per_epoch == 0 ? train_probes.size()
                                : std::min(cfg.probes_per_epoch, train_probes.size());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr_at(epoch, cfg);
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, kEpochStream + epoch);
    tensor::Rng order_rng(epoch_seed);
    std::shuffle(train_probes.begin(), train_probes.end(), order_rng);
    const auto samples = sampler.sample_all(
        std::span<const std::size_t>(train_probes.data(), per_epoch),
        derive_seed(epoch_seed, 0));
    if (samples.empty()) throw DegenerateBatchError("no probe has a correct match");

    double total = 0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < samples.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(samples.size(), lo + cfg.batch_size);
      const std::span<const SequenceSample> part(samples.data() + lo, hi - lo);
      std::vector<std::uint8_t> labels;
      for (const auto& s : part) labels.insert(labels.end(), s.labels.begin(), s.labels.end());

      tensor::Tape<float> tape;
      model::Forward<float> fwd{tape, tensor::Mode::kTrain, &dropout_rng};
      const auto scores = model.predict(fwd, gather_batch(blocks, part), cfg.l2);
      const auto loss = focal_loss(scores, labels, cfg.gamma);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batches) +
                              " (lr " + fmt(stats.lr) + ")");
      }
      model.zero_grad();
      tape.backward(loss);
      adam.step(stats.lr, cfg.weight_decay);
      model.clamp_temperatures();
      model.set_steps(model.steps() + 1);
      total += value;
      ++batches;
    }
    stats.mean_loss = total / static_cast<double>(batches);
    stats.holdout_loss =
        holdout.empty()
            ? stats.mean_loss
            : evaluate_sequences(model, blocks, holdout, cfg.l2, cfg.gamma).loss;
    if (stats.holdout_loss < best_loss || best.empty()) {
      best_loss = stats.holdout_loss;
      best = model.snapshot();
      result.best_epoch = static_cast<long>(epoch);
    }
    result.curve.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  model.restore(best);
  result.best_holdout_loss = best_loss;
  if (!holdout.empty()) {
    result.holdout = evaluate_sequences(model, blocks, holdout, cfg.l2, cfg.gamma);
  }
  return result;
}

void write_loss_csv(const std::vector<EpochStats>& curve,
                    const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,mean_loss,holdout_loss\n";
  for (const auto& e : curve)
    out << e.epoch << ',' << fmt(e.mean_loss) << ',' << fmt(e.holdout_loss) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace acp::train
