#pragma once

// Stochastic two-view augmentation: random resized crop, horizontal flip,
// color jitter, grayscale, solarization. Each (seed, stream_id, view) triple
// drives its own counter-based RNG stream, so parallel loading and reruns
// produce identical views.

#include <cmath>
#include <cstdint>
#include <utility>

#include "vdg/image.hpp"
#include "vdg/rng.hpp"

namespace vdg {

struct AugmentConfig {
  float crop_min = 0.2f, crop_max = 1.0f;
  int output_size = 32;
  float p_flip = 0.5f;
  float p_jitter = 0.8f;
  float jitter_brightness = 0.4f;
  float jitter_contrast = 0.4f;
  float jitter_saturation = 0.2f;
  float jitter_hue = 0.1f;
  float p_gray = 0.2f;
  float p_solarize = 0.1f;
  uint64_t seed = 0;

  void validate() const {
    auto prob = [](float p) { return p >= 0.0f && p <= 1.0f; };
    if (!prob(p_flip) || !prob(p_jitter) || !prob(p_gray) || !prob(p_solarize))
      throw ConfigError("augment: probabilities must lie in [0,1]");
    if (!(crop_min > 0.0f && crop_min <= crop_max && crop_max <= 1.0f))
      throw ConfigError("augment: crop area range must satisfy 0 < min <= max <= 1");
    if (output_size < 1) throw ConfigError("augment: output_size must be positive");
  }
};

namespace detail {

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max({r, g, b});
  float mn = std::min({r, g, b});
  v = mx;
  float d = mx - mn;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r)
    h = (g - b) / d + (g < b ? 6.0f : 0.0f);
  else if (mx == g)
    h = (b - r) / d + 2.0f;
  else
    h = (r - g) / d + 4.0f;
  h /= 6.0f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  float hh = h * 6.0f;
  int i = static_cast<int>(hh) % 6;
  float f = hh - std::floor(hh);
  float p = v * (1.0f - s);
  float q = v * (1.0f - s * f);
  float t = v * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

inline float luminance(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

}  // namespace detail

inline Image horizontal_flip(const Image& src) {
  Image out(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = src.at(y, src.width - 1 - x, c);
  return out;
}

// Area in [min,max] of the original, aspect ratio log-uniform in [3/4, 4/3],
// ten attempts then a centered fallback clamped to the aspect bounds.
inline Image random_resized_crop(const Image& src, const AugmentConfig& cfg,
                                 RngStream& rng) {
  if (src.height < 1 || src.width < 1)
    throw ContractError("random_resized_crop: empty anchor");
  const float area = static_cast<float>(src.height) * static_cast<float>(src.width);
  const float log_ar_min = std::log(3.0f / 4.0f);
  const float log_ar_max = std::log(4.0f / 3.0f);
  for (int attempt = 0; attempt < 10; ++attempt) {
    float target = area * static_cast<float>(rng.uniform(cfg.crop_min, cfg.crop_max));
    float ar = std::exp(static_cast<float>(rng.uniform(log_ar_min, log_ar_max)));
    int w = static_cast<int>(std::lround(std::sqrt(target * ar)));
    int h = static_cast<int>(std::lround(std::sqrt(target / ar)));
    if (w < 1 || h < 1) continue;  // degenerate crop, retry
    if (w > src.width || h > src.height) continue;
    int top = static_cast<int>(rng.below(static_cast<uint64_t>(src.height - h + 1)));
    int left = static_cast<int>(rng.below(static_cast<uint64_t>(src.width - w + 1)));
    return resize_bilinear(crop(src, top, left, h, w), cfg.output_size, cfg.output_size);
  }
  // fallback: largest centered crop within the aspect bounds
  float in_ratio = static_cast<float>(src.width) / static_cast<float>(src.height);
  int w = src.width, h = src.height;
  if (in_ratio < 3.0f / 4.0f) {
    h = static_cast<int>(std::lround(static_cast<float>(w) / (3.0f / 4.0f)));
  } else if (in_ratio > 4.0f / 3.0f) {
    w = static_cast<int>(std::lround(static_cast<float>(h) * (4.0f / 3.0f)));
  }
  int top = (src.height - h) / 2, left = (src.width - w) / 2;
  return resize_bilinear(crop(src, top, left, h, w), cfg.output_size, cfg.output_size);
}

inline void apply_brightness(Image& img, float factor) {
  for (auto& p : img.pixels) p = std::clamp(p * factor, 0.0f, 1.0f);
}

inline void apply_contrast(Image& img, float factor) {
  double mean = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      mean += detail::luminance(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
  mean /= static_cast<double>(img.height) * img.width;
  float m = static_cast<float>(mean);
  for (auto& p : img.pixels) p = std::clamp(m + factor * (p - m), 0.0f, 1.0f);
}

inline void apply_saturation(Image& img, float factor) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float gray = detail::luminance(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = std::clamp(gray + factor * (img.at(y, x, c) - gray), 0.0f, 1.0f);
    }
}

inline void apply_hue_shift(Image& img, float shift) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float h, s, v;
      detail::rgb_to_hsv(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), h, s, v);
      detail::hsv_to_rgb(h + shift, s, v, img.at(y, x, 0), img.at(y, x, 1),
                         img.at(y, x, 2));
    }
  clamp01(img);
}

inline void apply_grayscale(Image& img) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float gray = detail::luminance(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = gray;
    }
}

inline void apply_solarize(Image& img, float threshold = 0.5f) {
  for (auto& p : img.pixels)
    if (p > threshold) p = 1.0f - p;
}

inline Image augment_view(const Image& anchor, const AugmentConfig& cfg,
                          RngStream& rng) {
  Image img = random_resized_crop(anchor, cfg, rng);
  if (rng.bernoulli(cfg.p_flip)) img = horizontal_flip(img);
  if (rng.bernoulli(cfg.p_jitter)) {
    float fb = static_cast<float>(
        rng.uniform(1.0 - cfg.jitter_brightness, 1.0 + cfg.jitter_brightness));
    float fc = static_cast<float>(
        rng.uniform(1.0 - cfg.jitter_contrast, 1.0 + cfg.jitter_contrast));
    float fs = static_cast<float>(
        rng.uniform(1.0 - cfg.jitter_saturation, 1.0 + cfg.jitter_saturation));
    float fh = static_cast<float>(rng.uniform(-cfg.jitter_hue, cfg.jitter_hue));
    apply_brightness(img, fb);
    apply_contrast(img, fc);
    apply_saturation(img, fs);
    apply_hue_shift(img, fh);
  }
  if (rng.bernoulli(cfg.p_gray)) apply_grayscale(img);
  if (rng.bernoulli(cfg.p_solarize)) apply_solarize(img);
  clamp01(img);
  return img;
}

inline std::pair<Image, Image> sample_views(const Image& anchor,
                                            const AugmentConfig& cfg,
                                            uint64_t stream_id) {
  cfg.validate();
  RngStream rng1(cfg.seed, mix64(stream_id, 1));
  RngStream rng2(cfg.seed, mix64(stream_id, 2));
  return {augment_view(anchor, cfg, rng1), augment_view(anchor, cfg, rng2)};
}

}  // namespace vdg
