#pragma once

// FLOPs accounting (counted as multiply-accumulates) and the budget loss.
// Only gated blocks enter the ratio; the gate heads contribute a fixed
// per-forward cost. Shortcut projections are ungated and excluded.

#include <cstdint>
#include <vector>

#include "vdg/gating.hpp"
#include "vdg/tensor.hpp"

namespace vdg {

// k*k*c_in*c_out*h_out*w_out multiply-accumulates of a dense convolution
inline unsigned long long conv_macs(int kernel, int c_in, int c_out, int h_out,
                                    int w_out) {
  if (kernel < 1 || c_in < 1 || c_out < 1 || h_out < 1 || w_out < 1)
    throw ConfigError("conv_macs: dimensions must be positive");
  return static_cast<unsigned long long>(kernel) * kernel * c_in * c_out *
         h_out * w_out;
}

// the two 1x1 maps of the gate head on the pooled context vector
inline unsigned long long gate_macs(int c_prev, int reduction, int c_block) {
  int hidden = c_prev / reduction;
  return static_cast<unsigned long long>(c_prev) * hidden +
         static_cast<unsigned long long>(hidden) * c_block;
}

struct BlockFlops {
  unsigned long long conv1 = 0;  // full-width MACs of the gated conv
  unsigned long long conv2 = 0;  // full-width MACs of the conv fed by it
  unsigned long long gate = 0;   // fixed gate-head MACs
  int channels = 0;              // gated channel count
};

struct FlopsModel {
  std::vector<BlockFlops> blocks;

  unsigned long long total_original() const {
    unsigned long long s = 0;
    for (const auto& b : blocks) s += b.conv1 + b.conv2;
    return s;
  }
  unsigned long long total_gate() const {
    unsigned long long s = 0;
    for (const auto& b : blocks) s += b.gate;
    return s;
  }
  double gate_overhead() const {
    return static_cast<double>(total_gate()) /
           static_cast<double>(total_original());
  }
};

struct BudgetConfig {
  float t_d = 0.5f;
  float lambda = 5.0f;

  void validate() const {
    if (!(t_d > 0.0f && t_d <= 1.0f))
      throw ConfigError("budget: target ratio must lie in (0,1]");
    if (lambda < 0.0f) throw ConfigError("budget: lambda must be non-negative");
  }
};

// Batch-average compute ratio, differentiable through the masks. For block l
// with mean active fraction p: F_R = p*(conv1+conv2) + gate.
template <class T>
TensorT<T> flops_ratio(const std::vector<GateMask<T>>& masks,
                       const FlopsModel& model) {
  if (masks.size() != model.blocks.size())
    throw ContractError("flops_ratio: mask count " + std::to_string(masks.size()) +
                        " does not cover the " + std::to_string(model.blocks.size()) +
                        " gated blocks");
  double denom = static_cast<double>(model.total_original());
  TensorT<T> ratio = TensorT<T>::scalar(
      static_cast<T>(static_cast<double>(model.total_gate()) / denom));
  for (size_t l = 0; l < masks.size(); ++l) {
    const auto& blk = model.blocks[l];
    if (masks[l].mask.rank() != 2 || masks[l].mask.dim(1) != blk.channels)
      throw ContractError("flops_ratio: mask width mismatch at block " +
                          std::to_string(l));
    T weight = static_cast<T>(
        static_cast<double>(blk.conv1 + blk.conv2) / denom);
    ratio = add(ratio, affine(mean(masks[l].mask), weight, T(0)));
  }
  return ratio;
}

// Exact rational form of the same quantity, for reporting and for checking
// the differentiable path: MAC counts are integers, so num/den is exact.
struct ExactRatio {
  unsigned long long num = 0;
  unsigned long long den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

template <class T>
ExactRatio flops_ratio_exact(const std::vector<GateMask<T>>& masks,
                             const FlopsModel& model) {
  if (masks.size() != model.blocks.size())
    throw ContractError("flops_ratio_exact: mask count mismatch");
  int batch = masks.empty() ? 1 : masks[0].mask.dim(0);
  unsigned long long num = 0;
  for (size_t l = 0; l < masks.size(); ++l) {
    const auto& blk = model.blocks[l];
    const auto& mv = masks[l].mask.value();
    unsigned long long active = 0;
    for (const T& m : mv) active += m > T(0.5) ? 1ull : 0ull;
    unsigned long long per_channel = (blk.conv1 + blk.conv2) /
                                     static_cast<unsigned long long>(blk.channels);
    num += active * per_channel +
           static_cast<unsigned long long>(batch) * blk.gate;
  }
  ExactRatio r;
  r.num = num;
  r.den = static_cast<unsigned long long>(batch) * model.total_original();
  return r;
}

template <class T>
TensorT<T> budget_loss(const TensorT<T>& ratio, const BudgetConfig& cfg) {
  cfg.validate();
  auto dev = affine(ratio, T(1), static_cast<T>(-cfg.t_d));
  return affine(mul(dev, dev), static_cast<T>(cfg.lambda), T(0));
}

}  // namespace vdg
