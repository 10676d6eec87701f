// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "acp/train.hpp"

namespace acp::train {
namespace {

void check_labels(std::size_t n, std::size_t labels) {
  if (n != labels) {
    throw DimensionError("focal_loss: " + std::to_string(n) + " scores but " +
                         std::to_string(labels) + " labels");
  }
  if (n == 0) throw DimensionError("focal_loss: empty input");
}

/// Loss term and its derivative with respect to p_t.
struct FocalTerm {
  double loss, dloss_dp;
};

FocalTerm focal_term(double pt, double gamma) {
  const double q = 1.0 - pt;
  const double lp = std::log(pt);
  if (gamma == 0.0) return {-lp, -1.0 / pt};
  const double qg = std::pow(q, gamma);
  return {-qg * lp, gamma * std::pow(q, gamma - 1.0) * lp - qg / pt};
}

}  // namespace

double focal_loss(std::span<const double> s, std::span<const std::uint8_t> y,
                  double gamma) {
  check_labels(s.size(), y.size());
  double total = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double c = std::clamp(s[i], kProbClamp, 1.0 - kProbClamp);
    total += focal_term(y[i] ? c : 1.0 - c, gamma).loss;
  }
  return total / static_cast<double>(s.size());
}

template <typename T>
tensor::Var<T> focal_loss(const tensor::Var<T>& s,
                          std::span<const std::uint8_t> y, double gamma) {
  const auto& sv = s.value();
  check_labels(sv.size(), y.size());
  const std::size_t n = sv.size();
  std::vector<T> dloss(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double raw = static_cast<double>(sv[i]);
    const double c = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    const FocalTerm t = focal_term(y[i] ? c : 1.0 - c, gamma);
    total += t.loss;
    // Clamped scores pass no gradient.
    const bool inside = raw > kProbClamp && raw < 1.0 - kProbClamp;
    const double sign = y[i] ? 1.0 : -1.0;
    dloss[i] = inside ? static_cast<T>(sign * t.dloss_dp / static_cast<double>(n))
                      : T(0);
  }
  tensor::Tensor<T> out(1, 1, static_cast<T>(total / static_cast<double>(n)));
  const std::size_t is = s.id();
  return s.tape()->record(
      std::move(out), {s},
      [is, dloss = std::move(dloss)](tensor::Tape<T>& t,
                                     const tensor::Tensor<T>& g) {
        auto& gs = t.grad(is);
        for (std::size_t i = 0; i < dloss.size(); ++i) gs[i] += g[0] * dloss[i];
      });
}

template tensor::Var<float> focal_loss(const tensor::Var<float>&,
                                       std::span<const std::uint8_t>, double);
template tensor::Var<double> focal_loss(const tensor::Var<double>&,
                                        std::span<const std::uint8_t>, double);

DecayMode parse_decay_mode(const std::string& name) {
  if (name == "decoupled") return DecayMode::kDecoupled;
  if (name == "l2") return DecayMode::kL2;
  throw ConfigError("decay_mode must be decoupled or l2, got '" + name + "'");
}

const char* decay_mode_name(DecayMode mode) {
  return mode == DecayMode::kDecoupled ? "decoupled" : "l2";
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.warmup_epochs) return cfg.lr;
  const double frac =
      static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs);
  return cfg.lr * (cfg.warmup_factor + (1.0 - cfg.warmup_factor) * frac);
}

template <typename T>
Adam<T>::Adam(std::vector<tensor::Parameter<T>*> params, Options opt)
    : opt_(opt), params_(std::move(params)) {
  for (const auto* p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

template <typename T>
void Adam<T>::step(double lr, double weight_decay) {
  for (const auto* p : params_) {
    if (!p->trainable) continue;
    for (const T g : p->grad.values()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw DivergenceError("non-finite gradient in parameter '" + p->name +
                              "' at step " + std::to_string(t_ + 1));
      }
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    if (!p.trainable) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    const bool decays = p.decay && weight_decay > 0.0;
    const bool coupled = decays && opt_.decay == DecayMode::kL2;
    const double shrink = decays && !coupled ? lr * weight_decay : 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = coupled ? p.grad[i] + weight_decay * p.value[i] : p.grad[i];
      const double mi = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
      const double vi = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + opt_.eps);
      p.value[i] = static_cast<T>(p.value[i] - shrink * p.value[i] - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace acp::train
