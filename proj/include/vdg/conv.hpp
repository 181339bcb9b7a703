#pragma once

// Convolution and the NCHW-structured ops. conv2d lowers to per-sample
// im2col + GEMM, which keeps each sample's column matrix cache-resident; the
// unit tests check the op against a direct six-loop oracle.

#include <vector>

#include "vdg/tensor.hpp"

namespace vdg {

namespace detail {

// cols layout: [(c*kh+ky)*kw+kx][y*wo+x]
template <class T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride,
            int pad, int ho, int wo, T* cols) {
  T* out = cols;
  for (int ci = 0; ci < c; ++ci) {
    const T* plane = x + static_cast<size_t>(ci) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        for (int y = 0; y < ho; ++y) {
          int iy = y * stride + ky - pad;
          if (iy < 0 || iy >= h) {
            for (int xo = 0; xo < wo; ++xo) *out++ = T(0);
            continue;
          }
          const T* src = plane + static_cast<size_t>(iy) * w;
          if (stride == 1) {
            int ix0 = kx - pad;
            int lead = std::min(wo, std::max(0, -ix0));
            int body_end = std::min(wo, w - ix0);
            int xo = 0;
            for (; xo < lead; ++xo) *out++ = T(0);
            for (; xo < body_end; ++xo) *out++ = src[ix0 + xo];
            for (; xo < wo; ++xo) *out++ = T(0);
          } else {
            for (int xo = 0; xo < wo; ++xo) {
              int ix = xo * stride + kx - pad;
              *out++ = (ix >= 0 && ix < w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, int c, int h, int w, int kh, int kw, int stride,
                int pad, int ho, int wo, T* dx) {
  const T* src = cols;
  for (int ci = 0; ci < c; ++ci) {
    T* plane = dx + static_cast<size_t>(ci) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        for (int y = 0; y < ho; ++y) {
          int iy = y * stride + ky - pad;
          if (iy < 0 || iy >= h) {
            src += wo;
            continue;
          }
          T* dst = plane + static_cast<size_t>(iy) * w;
          if (stride == 1) {
            int ix0 = kx - pad;
            int lead = std::min(wo, std::max(0, -ix0));
            int body_end = std::min(wo, w - ix0);
            int xo = 0;
            src += lead;
            for (xo = lead; xo < body_end; ++xo) dst[ix0 + xo] += *src++;
            src += wo - std::max(lead, body_end);
          } else {
            for (int xo = 0; xo < wo; ++xo) {
              int ix = xo * stride + kx - pad;
              if (ix >= 0 && ix < w) dst[ix] += *src;
              ++src;
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// input [n,i,h,w], kernel [o,i,kh,kw], zero padding
template <class T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, int stride,
                  int pad) {
  if (input.rank() != 4 || kernel.rank() != 4)
    throw ConfigError("conv2d expects 4-d input and kernel");
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: bad stride/padding");
  int n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  int co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != ci)
    throw ConfigError("conv2d: input has " + std::to_string(ci) +
                      " channels, kernel expects " + std::to_string(kernel.dim(1)));
  if (h + 2 * pad < kh || w + 2 * pad < kw)
    throw ConfigError("conv2d: spatial dims smaller than kernel");
  int ho = (h + 2 * pad - kh) / stride + 1;
  int wo = (w + 2 * pad - kw) / stride + 1;
  size_t out_plane = static_cast<size_t>(co) * ho * wo;
  std::vector<T> out(static_cast<size_t>(n) * out_plane, T(0));

  bool pointwise = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
  if (pointwise) {
    for (int b = 0; b < n; ++b)
      detail::gemm(false, false, co, h * w, ci, T(1), kernel.value().data(), ci,
                   input.value().data() + static_cast<size_t>(b) * ci * h * w, h * w,
                   T(0), out.data() + static_cast<size_t>(b) * out_plane, h * w);
  } else {
    int patch = ci * kh * kw;
    std::vector<T> cols(static_cast<size_t>(patch) * ho * wo);
    for (int b = 0; b < n; ++b) {
      detail::im2col(input.value().data() + static_cast<size_t>(b) * ci * h * w, ci, h,
                     w, kh, kw, stride, pad, ho, wo, cols.data());
      detail::gemm(false, false, co, ho * wo, patch, T(1),
                   kernel.value().data(), patch, cols.data(), ho * wo, T(0),
                   out.data() + static_cast<size_t>(b) * out_plane, ho * wo);
    }
  }

  return detail::make_op<T>(
      {n, co, ho, wo}, std::move(out), {input.node(), kernel.node()},
      [n, ci, h, w, co, kh, kw, stride, pad, ho, wo](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pk = *self.parents[1];
        bool x_needs = px.requires_grad || px.needs_grad;
        bool k_needs = pk.requires_grad || pk.needs_grad;
        int patch = ci * kh * kw;
        size_t out_plane = static_cast<size_t>(co) * ho * wo;
        bool pointwise = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
        if (pointwise) {
          for (int b = 0; b < n; ++b) {
            const T* g = self.grad.data() + static_cast<size_t>(b) * out_plane;
            const T* xv = px.value.data() + static_cast<size_t>(b) * ci * h * w;
            if (k_needs)
              detail::gemm(false, true, co, ci, h * w, T(1), g, h * w, xv, h * w,
                           T(1), pk.grad.data(), ci);
            if (x_needs)
              detail::gemm(true, false, ci, h * w, co, T(1), pk.value.data(), ci,
                           g, h * w, T(1),
                           px.grad.data() + static_cast<size_t>(b) * ci * h * w, h * w);
          }
          return;
        }
        std::vector<T> cols(static_cast<size_t>(patch) * ho * wo);
        std::vector<T> dcols;
        if (x_needs) dcols.resize(cols.size());
        for (int b = 0; b < n; ++b) {
          const T* g = self.grad.data() + static_cast<size_t>(b) * out_plane;
          if (k_needs) {
            detail::im2col(px.value.data() + static_cast<size_t>(b) * ci * h * w, ci,
                           h, w, kh, kw, stride, pad, ho, wo, cols.data());
            detail::gemm(false, true, co, patch, ho * wo, T(1), g, ho * wo,
                         cols.data(), ho * wo, T(1), pk.grad.data(), patch);
          }
          if (x_needs) {
            detail::gemm(true, false, patch, ho * wo, co, T(1), pk.value.data(),
                         patch, g, ho * wo, T(0), dcols.data(), ho * wo);
            detail::col2im_add(dcols.data(), ci, h, w, kh, kw, stride, pad, ho,
                               wo, px.grad.data() + static_cast<size_t>(b) * ci * h * w);
          }
        }
      },
      "conv2d");
}

// [n,c,h,w] -> [n,c]
template <class T>
TensorT<T> global_avg_pool(const TensorT<T>& input) {
  if (input.rank() != 4) throw ConfigError("global_avg_pool expects 4-d input");
  int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  int hw = h * w;
  T inv = T(1) / static_cast<T>(hw);
  std::vector<T> out(static_cast<size_t>(n) * c);
  const auto& xv = input.value();
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci) {
      const T* plane = xv.data() + (static_cast<size_t>(b) * c + ci) * hw;
      T s = T(0);
      for (int i = 0; i < hw; ++i) s += plane[i];
      out[static_cast<size_t>(b) * c + ci] = s * inv;
    }
  return detail::make_op<T>(
      {n, c}, std::move(out), {input.node()},
      [n, c, hw, inv](detail::Node<T>& self) {
        auto& gx = self.parents[0]->grad;
        for (int b = 0; b < n; ++b)
          for (int ci = 0; ci < c; ++ci) {
            T g = self.grad[static_cast<size_t>(b) * c + ci] * inv;
            T* plane = gx.data() + (static_cast<size_t>(b) * c + ci) * hw;
            for (int i = 0; i < hw; ++i) plane[i] += g;
          }
      },
      "global_avg_pool");
}

// y[b,c,:,:] = x[b,c,:,:] * m[b,c] — per-sample channel gating
template <class T>
TensorT<T> channel_scale(const TensorT<T>& input, const TensorT<T>& scale) {
  if (input.rank() != 4 || scale.rank() != 2)
    throw ConfigError("channel_scale expects [n,c,h,w] and [n,c]");
  int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (scale.dim(0) != n || scale.dim(1) != c)
    throw ConfigError("channel_scale: scale shape mismatch");
  int hw = h * w;
  std::vector<T> out(input.numel());
  const auto& xv = input.value();
  const auto& sv = scale.value();
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci) {
      T m = sv[static_cast<size_t>(b) * c + ci];
      size_t base = (static_cast<size_t>(b) * c + ci) * hw;
      for (int i = 0; i < hw; ++i) out[base + i] = xv[base + i] * m;
    }
  return detail::make_op<T>(
      {n, c, h, w}, std::move(out), {input.node(), scale.node()},
      [n, c, hw](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& ps = *self.parents[1];
        for (int b = 0; b < n; ++b)
          for (int ci = 0; ci < c; ++ci) {
            size_t base = (static_cast<size_t>(b) * c + ci) * hw;
            T m = ps.value[static_cast<size_t>(b) * c + ci];
            T acc = T(0);
            for (int i = 0; i < hw; ++i) {
              px.grad[base + i] += self.grad[base + i] * m;
              acc += self.grad[base + i] * px.value[base + i];
            }
            ps.grad[static_cast<size_t>(b) * c + ci] += acc;
          }
      },
      "channel_scale");
}

}  // namespace vdg
