#pragma once

// Batch normalization over the channel dim of [n,c,h,w] or [n,c] tensors.
// Training mode normalizes with biased batch statistics and maintains running
// estimates (unbiased variance, exponential moving average); inference mode
// normalizes with the running estimates.

#include <vector>

#include "vdg/tensor.hpp"

namespace vdg {

template <class T>
struct BatchNormState {
  TensorT<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  bool training = true;

  static BatchNormState make(int channels) {
    BatchNormState s;
    s.gamma = TensorT<T>::filled({channels}, T(1), true);
    s.beta = TensorT<T>::zeros({channels}, true);
    s.running_mean.assign(static_cast<size_t>(channels), T(0));
    s.running_var.assign(static_cast<size_t>(channels), T(1));
    return s;
  }

  int channels() const { return gamma.dim(0); }
};

template <class T>
TensorT<T> batch_norm(const TensorT<T>& input, BatchNormState<T>& state) {
  if (input.rank() != 2 && input.rank() != 4)
    throw ConfigError("batch_norm expects [n,c] or [n,c,h,w] input");
  int n = input.dim(0), c = input.dim(1);
  int hw = input.rank() == 4 ? input.dim(2) * input.dim(3) : 1;
  if (c != state.channels())
    throw ConfigError("batch_norm: input has " + std::to_string(c) +
                      " channels, state has " + std::to_string(state.channels()));
  long count = static_cast<long>(n) * hw;
  const auto& xv = input.value();

  std::vector<T> mean_c(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
  if (state.training) {
    if (count < 2)
      throw DegenerateBatchError(
          "batch_norm: training mode needs at least 2 values per channel");
    std::vector<T> var_c(static_cast<size_t>(c), T(0));
    for (int ci = 0; ci < c; ++ci) {
      T s = T(0);
      for (int b = 0; b < n; ++b) {
        const T* plane = xv.data() + (static_cast<size_t>(b) * c + ci) * hw;
        for (int i = 0; i < hw; ++i) s += plane[i];
      }
      T m = s / static_cast<T>(count);
      T v = T(0);
      for (int b = 0; b < n; ++b) {
        const T* plane = xv.data() + (static_cast<size_t>(b) * c + ci) * hw;
        for (int i = 0; i < hw; ++i) {
          T d = plane[i] - m;
          v += d * d;
        }
      }
      mean_c[static_cast<size_t>(ci)] = m;
      var_c[static_cast<size_t>(ci)] = v / static_cast<T>(count);
      inv_std[static_cast<size_t>(ci)] =
          T(1) / std::sqrt(var_c[static_cast<size_t>(ci)] + state.eps);
      // running estimates: EMA with unbiased variance
      T unbiased = v / static_cast<T>(count - 1);
      state.running_mean[static_cast<size_t>(ci)] =
          (T(1) - state.momentum) * state.running_mean[static_cast<size_t>(ci)] +
          state.momentum * m;
      state.running_var[static_cast<size_t>(ci)] =
          (T(1) - state.momentum) * state.running_var[static_cast<size_t>(ci)] +
          state.momentum * unbiased;
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      mean_c[static_cast<size_t>(ci)] = state.running_mean[static_cast<size_t>(ci)];
      inv_std[static_cast<size_t>(ci)] =
          T(1) / std::sqrt(state.running_var[static_cast<size_t>(ci)] + state.eps);
    }
  }

  const auto& gv = state.gamma.value();
  const auto& bv = state.beta.value();
  std::vector<T> out(input.numel());
  std::vector<T> xhat(input.numel());
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci) {
      size_t base = (static_cast<size_t>(b) * c + ci) * hw;
      T m = mean_c[static_cast<size_t>(ci)], is = inv_std[static_cast<size_t>(ci)];
      T g = gv[static_cast<size_t>(ci)], bt = bv[static_cast<size_t>(ci)];
      for (int i = 0; i < hw; ++i) {
        T h = (xv[base + i] - m) * is;
        xhat[base + i] = h;
        out[base + i] = g * h + bt;
      }
    }

  bool training = state.training;
  return detail::make_op<T>(
      input.shape(), std::move(out),
      {input.node(), state.gamma.node(), state.beta.node()},
      [n, c, hw, count, training, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        bool x_needs = px.requires_grad || px.needs_grad;
        for (int ci = 0; ci < c; ++ci) {
          T sum_g = T(0), sum_gx = T(0);
          for (int b = 0; b < n; ++b) {
            size_t base = (static_cast<size_t>(b) * c + ci) * hw;
            for (int i = 0; i < hw; ++i) {
              sum_g += self.grad[base + i];
              sum_gx += self.grad[base + i] * xhat[base + i];
            }
          }
          pg.grad[static_cast<size_t>(ci)] += sum_gx;
          pb.grad[static_cast<size_t>(ci)] += sum_g;
          if (!x_needs) continue;
          T g = pg.value[static_cast<size_t>(ci)];
          T is = inv_std[static_cast<size_t>(ci)];
          if (training) {
            T inv_count = T(1) / static_cast<T>(count);
            for (int b = 0; b < n; ++b) {
              size_t base = (static_cast<size_t>(b) * c + ci) * hw;
              for (int i = 0; i < hw; ++i)
                px.grad[base + i] +=
                    g * is *
                    (self.grad[base + i] -
                     inv_count * (sum_g + xhat[base + i] * sum_gx));
            }
          } else {
            for (int b = 0; b < n; ++b) {
              size_t base = (static_cast<size_t>(b) * c + ci) * hw;
              for (int i = 0; i < hw; ++i)
                px.grad[base + i] += g * is * self.grad[base + i];
            }
          }
        }
      },
      "batch_norm");
}

}  // namespace vdg
