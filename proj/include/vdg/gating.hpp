#pragma once

// Per-block channel gating: a squeeze-and-excitation style score head over the
// pooled block input, sampled into binary masks with Gumbel-sigmoid noise and
// a straight-through forward during training, hard thresholds at inference.

#include <cstdint>
#include <vector>

#include "vdg/batchnorm.hpp"
#include "vdg/conv.hpp"
#include "vdg/rng.hpp"
#include "vdg/tensor.hpp"

namespace vdg {

template <class T>
struct GatingParams {
  TensorT<T> w1;  // [c_prev/r, c_prev, 1, 1]
  BatchNormState<T> bn;
  TensorT<T> w2;  // [c_block, c_prev/r, 1, 1]
  int reduction = 4;

  // w2 starts at zero: every score is zero until the budget and task losses
  // pull the policy somewhere
  static GatingParams make(int c_prev, int c_block, int reduction,
                           RngStream& rng) {
    if (reduction < 1 || c_prev % reduction != 0)
      throw ConfigError("gating: context width " + std::to_string(c_prev) +
                        " not divisible by reduction " + std::to_string(reduction));
    int hidden = c_prev / reduction;
    GatingParams g;
    g.reduction = reduction;
    std::vector<T> w1(static_cast<size_t>(hidden) * c_prev);
    T std1 = std::sqrt(T(2) / static_cast<T>(c_prev));
    for (auto& v : w1) v = static_cast<T>(rng.normal()) * std1;
    g.w1 = TensorT<T>::from({hidden, c_prev, 1, 1}, std::move(w1), true);
    g.bn = BatchNormState<T>::make(hidden);
    g.w2 = TensorT<T>::zeros({c_block, hidden, 1, 1}, true);
    return g;
  }

  int context_width() const { return w1.dim(1); }
  int block_width() const { return w2.dim(0); }
  int hidden_width() const { return w1.dim(0); }
};

// relevance scores for each gated channel; context is the pooled block input
template <class T>
TensorT<T> gate_scores(const TensorT<T>& context, GatingParams<T>& params) {
  if (context.rank() != 2)
    throw ConfigError("gate_scores expects a [n, c_prev] context");
  int n = context.dim(0);
  if (context.dim(1) != params.context_width())
    throw ConfigError("gate_scores: context has " + std::to_string(context.dim(1)) +
                      " channels, gate expects " +
                      std::to_string(params.context_width()));
  auto z = reshape(context, {n, params.context_width(), 1, 1});
  auto hidden = relu(batch_norm(conv2d(z, params.w1, 1, 0), params.bn));
  auto scores = conv2d(hidden, params.w2, 1, 0);
  return reshape(scores, {n, params.block_width()});
}

struct GateSamplerConfig {
  float tau_start = 5.0f;
  float tau_end = 0.1f;
  float anneal_fraction = 0.8f;
  bool hard_forward = true;

  void validate() const {
    if (!(tau_start >= tau_end && tau_end > 0.0f))
      throw ConfigError("gate sampler: need tau_start >= tau_end > 0");
    if (!(anneal_fraction > 0.0f && anneal_fraction <= 1.0f))
      throw ConfigError("gate sampler: anneal_fraction must lie in (0,1]");
  }

  // linear anneal over the first anneal_fraction of training, then constant
  double tau_at(double progress) const {
    double p = std::clamp(progress / static_cast<double>(anneal_fraction), 0.0, 1.0);
    return static_cast<double>(tau_start) +
           p * (static_cast<double>(tau_end) - static_cast<double>(tau_start));
  }
};

// Binary mask plus the soft relaxation it was thresholded from. Gradients
// reach the scores through `mask` (straight-through when hard_forward).
template <class T>
struct GateMask {
  TensorT<T> mask;
  TensorT<T> soft;  // undefined for inference masks
};

template <class T>
GateMask<T> gumbel_mask(const TensorT<T>& scores, T tau, uint64_t rng_stream,
                        const GateSamplerConfig& cfg) {
  if (!(tau > T(0))) throw ContractError("gumbel_mask: tau must be positive");
  RngStream rng(rng_stream);
  std::vector<T> noise(static_cast<size_t>(scores.numel()));
  for (auto& g : noise) g = static_cast<T>(rng.logistic());
  auto noise_t = TensorT<T>::from(scores.shape(), std::move(noise));
  auto soft = sigmoid(affine(add(scores, noise_t), T(1) / tau, T(0)));
  GateMask<T> out;
  out.soft = soft;
  out.mask = cfg.hard_forward ? straight_through_threshold(soft, T(0.5)) : soft;
  return out;
}

// inference rule: keep a channel iff its score is strictly positive
template <class T>
GateMask<T> hard_mask(const TensorT<T>& scores) {
  std::vector<T> m(static_cast<size_t>(scores.numel()));
  const auto& sv = scores.value();
  for (size_t i = 0; i < m.size(); ++i) m[i] = sv[i] > T(0) ? T(1) : T(0);
  GateMask<T> out;
  out.mask = TensorT<T>::from(scores.shape(), std::move(m));
  return out;
}

}  // namespace vdg
