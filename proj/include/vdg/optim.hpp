#pragma once

// Warmup + cosine learning-rate schedule and LARS with momentum. Parameters
// flagged lars_scaled=false (biases, batch-norm affines, gate heads) take a
// plain SGD step with no weight decay.

#include <cmath>
#include <string>
#include <vector>

#include "vdg/tensor.hpp"

namespace vdg {

struct OptimConfig {
  double base_lr = 0.3;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  double lars_trust = 0.001;
};

// linear warmup to base_lr, then cosine decay to zero
inline double lr_schedule(long step, long total_steps, long warmup_steps,
                          double base_lr) {
  if (step < 0 || step > total_steps)
    throw ContractError("lr_schedule: step outside [0, total_steps]");
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  long span = total_steps - warmup_steps;
  if (span <= 0) return base_lr;
  double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(span);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

template <class T>
struct LarsParam {
  TensorT<T> tensor;
  bool lars_scaled = true;
};

template <class T>
class LarsOptimizer {
 public:
  explicit LarsOptimizer(OptimConfig cfg) : cfg_(cfg) {}

  // momentum buffers are keyed by position; the parameter list must be stable
  void step(std::vector<LarsParam<T>>& params, double lr) {
    if (momenta_.empty()) {
      momenta_.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i)
        momenta_[i].assign(params[i].tensor.value().size(), T(0));
    }
    if (momenta_.size() != params.size())
      throw ContractError("lars: parameter list changed size");
    for (size_t i = 0; i < params.size(); ++i) {
      auto& w = params[i].tensor.value();
      auto& g = params[i].tensor.grad();
      auto& m = momenta_[i];
      double local = 1.0;
      std::vector<T> update(w.size());
      if (params[i].lars_scaled) {
        double w_norm2 = 0.0, u_norm2 = 0.0;
        for (size_t j = 0; j < w.size(); ++j) {
          update[j] = g[j] + static_cast<T>(cfg_.weight_decay) * w[j];
          w_norm2 += static_cast<double>(w[j]) * static_cast<double>(w[j]);
          u_norm2 += static_cast<double>(update[j]) * static_cast<double>(update[j]);
        }
        double w_norm = std::sqrt(w_norm2), u_norm = std::sqrt(u_norm2);
        if (!std::isfinite(w_norm) || !std::isfinite(u_norm))
          throw NumericError("lars: non-finite parameter or gradient norm");
        if (w_norm > 0.0 && u_norm > 0.0) local = cfg_.lars_trust * w_norm / u_norm;
      } else {
        for (size_t j = 0; j < w.size(); ++j) update[j] = g[j];
      }
      T scale = static_cast<T>(local * lr);
      T mom = static_cast<T>(cfg_.momentum);
      for (size_t j = 0; j < w.size(); ++j) {
        m[j] = mom * m[j] + scale * update[j];
        w[j] -= m[j];
      }
    }
  }

  std::vector<std::vector<T>>& momenta() { return momenta_; }

 private:
  OptimConfig cfg_;
  std::vector<std::vector<T>> momenta_;
};

}  // namespace vdg
