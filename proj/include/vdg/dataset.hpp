#pragma once

// In-memory labeled image datasets: a directory-tree loader
// (root/<class_name>/<images>) and a synthetic striped-texture generator that
// emits the same layout. Synthetic classes combine a hue family with a stripe
// orientation; phase, frequency, brightness and noise vary per image.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vdg/augment.hpp"
#include "vdg/image.hpp"
#include "vdg/rng.hpp"

namespace vdg {

struct Dataset {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::string> class_names;

  size_t size() const { return images.size(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

inline bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".bmp";
}

inline Dataset load_image_folder(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root))
    throw ConfigError("dataset root is not a directory: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    throw ConfigError("dataset has no class subdirectories: " + root.string());

  Dataset ds;
  for (size_t ci = 0; ci < class_dirs.size(); ++ci) {
    ds.class_names.push_back(class_dirs[ci].filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[ci]))
      if (e.is_regular_file() && has_image_extension(e.path()))
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ds.images.push_back(load_image(f));
      ds.labels.push_back(static_cast<int>(ci));
    }
  }
  if (ds.images.empty())
    throw ConfigError("dataset contains no readable images: " + root.string());
  return ds;
}

struct SynthConfig {
  int classes = 10;
  int per_class = 200;
  int size = 32;
  uint64_t seed = 0;
  // class structure: classes = hue_families x 2 stripe orientations. The class
  // hue rides only on a zero-mean oscillation between complementary colors,
  // so the global color mean carries no label information; brightness,
  // contrast, scale and phase vary freely per image.
  float stripe_amp = 0.22f;
  float noise = 0.14f;
  float brightness_min = 0.35f, brightness_max = 1.0f;
  float contrast_min = 0.55f, contrast_max = 1.0f;
  float base_frequency = 4.0f;
  float freq_jitter = 0.55f;  // log-uniform exponent range
  float blob_amp = 0.25f;     // luminance distractor texture
};

inline Image make_synthetic_image(int class_id, const SynthConfig& cfg,
                                  RngStream& rng) {
  int hue_families = (cfg.classes + 1) / 2;
  int family = class_id / 2;
  int orientation = class_id % 2;  // 0: vary along x, 1: vary along y
  float hue = static_cast<float>(family) / static_cast<float>(hue_families) +
              static_cast<float>(rng.uniform(-0.02, 0.02));
  float theta = (orientation == 0 ? 0.0f
                                  : 3.14159265358979323846f / 2.0f) +
                static_cast<float>(rng.uniform(-0.17, 0.17));
  float freq = cfg.base_frequency *
               std::exp(static_cast<float>(rng.uniform(-cfg.freq_jitter, cfg.freq_jitter)));
  float phase = static_cast<float>(rng.uniform(0.0, 6.283185307179586));
  float brightness =
      static_cast<float>(rng.uniform(cfg.brightness_min, cfg.brightness_max));
  float contrast =
      static_cast<float>(rng.uniform(cfg.contrast_min, cfg.contrast_max));

  // unit-ish color axis between the class hue and its complement
  float ra, ga, ba, rb, gb, bb;
  detail::hsv_to_rgb(hue, 1.0f, 1.0f, ra, ga, ba);
  detail::hsv_to_rgb(hue + 0.5f, 1.0f, 1.0f, rb, gb, bb);
  float axis[3] = {ra - rb, ga - gb, ba - bb};

  // a couple of random low-frequency luminance blobs as distractors
  float bx[2], by[2], bs[2], bw[2];
  for (int i = 0; i < 2; ++i) {
    bx[i] = static_cast<float>(rng.uniform(0.0, 1.0)) * cfg.size;
    by[i] = static_cast<float>(rng.uniform(0.0, 1.0)) * cfg.size;
    bs[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    bw[i] = static_cast<float>(rng.uniform(0.25, 0.55)) * cfg.size;
  }

  Image img(cfg.size, cfg.size);
  float cs = std::cos(theta), sn = std::sin(theta);
  for (int y = 0; y < cfg.size; ++y)
    for (int x = 0; x < cfg.size; ++x) {
      float u = (cs * static_cast<float>(x) + sn * static_cast<float>(y)) /
                static_cast<float>(cfg.size);
      float wave = std::sin(6.2831853f * freq * u + phase);
      float lum = 0.5f;
      for (int i = 0; i < 2; ++i) {
        float dx = (static_cast<float>(x) - bx[i]) / bw[i];
        float dy = (static_cast<float>(y) - by[i]) / bw[i];
        lum += cfg.blob_amp * bs[i] * std::exp(-(dx * dx + dy * dy));
      }
      for (int c = 0; c < 3; ++c) {
        float v = lum + contrast * cfg.stripe_amp * wave * axis[c] * 0.5f;
        v = brightness * v + cfg.noise * static_cast<float>(rng.normal());
        img.at(y, x, c) = std::clamp(v, 0.0f, 1.0f);
      }
    }
  return img;
}

inline Dataset make_synthetic_dataset(const SynthConfig& cfg) {
  if (cfg.classes < 2 || cfg.per_class < 1 || cfg.size < 4)
    throw ConfigError("synthetic dataset: need >=2 classes, >=1 image, size >=4");
  Dataset ds;
  for (int c = 0; c < cfg.classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%02d", c);
    ds.class_names.push_back(name);
  }
  for (int c = 0; c < cfg.classes; ++c)
    for (int i = 0; i < cfg.per_class; ++i) {
      RngStream rng(cfg.seed, mix64(static_cast<uint64_t>(c) << 32, static_cast<uint64_t>(i)));
      ds.images.push_back(make_synthetic_image(c, cfg, rng));
      ds.labels.push_back(c);
    }
  return ds;
}

inline void write_synthetic_dataset(const std::filesystem::path& root,
                                    const SynthConfig& cfg) {
  namespace fs = std::filesystem;
  Dataset ds = make_synthetic_dataset(cfg);
  fs::create_directories(root);
  std::vector<int> counter(static_cast<size_t>(cfg.classes), 0);
  for (size_t i = 0; i < ds.images.size(); ++i) {
    int c = ds.labels[i];
    fs::path dir = root / ds.class_names[static_cast<size_t>(c)];
    fs::create_directories(dir);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d.png", counter[static_cast<size_t>(c)]++);
    save_png(dir / name, ds.images[i]);
  }
}

}  // namespace vdg
