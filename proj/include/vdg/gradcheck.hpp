#pragma once

// Central finite-difference verification of the reverse-mode gradients.
// `make_loss` rebuilds the scalar graph from the current values of `points`,
// so perturbing a coordinate and re-evaluating gives an independent numeric
// derivative to compare against.

#include <cstdint>
#include <vector>

#include "vdg/rng.hpp"
#include "vdg/tensor.hpp"

namespace vdg {

struct GradCheckResult {
  double max_rel_err = 0.0;
  long checked = 0;
  long skipped = 0;  // coordinates whose gradient was below min_grad
};

template <class T, class F>
GradCheckResult gradient_check(F&& make_loss, std::vector<TensorT<T>> points,
                               T step, long max_coords_per_tensor = -1,
                               T min_grad = T(0), uint64_t seed = 0x9d) {
  for (auto& p : points) p.zero_grad();
  TensorT<T> loss = make_loss();
  if (loss.numel() != 1)
    throw ContractError("gradient_check: graph output must be scalar");
  loss.backward();

  std::vector<std::vector<T>> analytic;
  analytic.reserve(points.size());
  for (auto& p : points) analytic.push_back(p.grad());

  GradCheckResult res;
  RngStream rng(seed);
  for (size_t t = 0; t < points.size(); ++t) {
    // per-tensor gradient scale; coordinates with gradients far below it are
    // judged against the scale, not their own magnitude, since a finite
    // difference in 32-bit cannot resolve them to relative precision
    double scale = 0.0;
    for (const T& g : analytic[t])
      scale = std::max(scale, std::abs(static_cast<double>(g)));
    auto& vals = points[t].value();
    long n = static_cast<long>(vals.size());
    std::vector<long> coords;
    if (max_coords_per_tensor < 0 || max_coords_per_tensor >= n) {
      coords.resize(static_cast<size_t>(n));
      for (long i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      for (long i = 0; i < max_coords_per_tensor; ++i)
        coords.push_back(static_cast<long>(rng.below(static_cast<uint64_t>(n))));
    }
    for (long ci : coords) {
      T x0 = vals[static_cast<size_t>(ci)];
      T h = step * std::max(T(1), std::abs(x0));
      vals[static_cast<size_t>(ci)] = x0 + h;
      T fp = make_loss().item();
      vals[static_cast<size_t>(ci)] = x0 - h;
      T fm = make_loss().item();
      vals[static_cast<size_t>(ci)] = x0;
      double fd = (static_cast<double>(fp) - static_cast<double>(fm)) /
                  (2.0 * static_cast<double>(h));
      if (!std::isfinite(fd))
        throw NumericError("gradient_check: non-finite difference quotient");
      double an = static_cast<double>(analytic[t][static_cast<size_t>(ci)]);
      double mag = std::max(std::abs(fd), std::abs(an));
      if (mag < static_cast<double>(min_grad)) {
        ++res.skipped;
        continue;
      }
      double rel = std::abs(fd - an) / std::max({mag, scale, 1e-12});
      ++res.checked;
      if (rel > res.max_rel_err) res.max_rel_err = rel;
    }
  }
  return res;
}

}  // namespace vdg
