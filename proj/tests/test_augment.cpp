#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "vdg/augment.hpp"
#include "vdg/dataset.hpp"

using namespace vdg;
namespace fs = std::filesystem;

namespace {

AugmentConfig off_config(int output_size) {
  AugmentConfig cfg;
  cfg.crop_min = 1.0f;
  cfg.crop_max = 1.0f;
  cfg.output_size = output_size;
  cfg.p_flip = 0.0f;
  cfg.p_jitter = 0.0f;
  cfg.p_gray = 0.0f;
  cfg.p_solarize = 0.0f;
  cfg.seed = 9;
  return cfg;
}

Image quantized_random_image(int h, int w, uint64_t seed) {
  RngStream rng(seed);
  Image img(h, w);
  for (auto& p : img.pixels)
    p = static_cast<float>(rng.below(256)) / 255.0f;
  return img;
}

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("vdg_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("all transforms disabled reproduces the resized anchor") {
  Image anchor = quantized_random_image(48, 48, 5);
  auto cfg = off_config(32);
  auto [v1, v2] = sample_views(anchor, cfg, 17);
  Image expect = resize_bilinear(anchor, 32, 32);
  REQUIRE(v1.pixels.size() == expect.pixels.size());
  for (size_t i = 0; i < expect.pixels.size(); ++i) {
    CHECK_THAT(v1.pixels[i], Catch::Matchers::WithinAbs(expect.pixels[i], 1e-6));
    CHECK_THAT(v2.pixels[i], Catch::Matchers::WithinAbs(expect.pixels[i], 1e-6));
  }
}

TEST_CASE("forced horizontal flip mirrors a 2x2 image") {
  Image img(2, 2);
  float a = 0.1f, b = 0.4f, c = 0.6f, d = 0.9f;
  for (int ch = 0; ch < 3; ++ch) {
    img.at(0, 0, ch) = a;
    img.at(0, 1, ch) = b;
    img.at(1, 0, ch) = c;
    img.at(1, 1, ch) = d;
  }
  auto cfg = off_config(2);
  cfg.p_flip = 1.0f;
  auto [v1, v2] = sample_views(img, cfg, 0);
  CHECK_THAT(v1.at(0, 0, 0), Catch::Matchers::WithinAbs(b, 1e-6));
  CHECK_THAT(v1.at(0, 1, 0), Catch::Matchers::WithinAbs(a, 1e-6));
  CHECK_THAT(v1.at(1, 0, 0), Catch::Matchers::WithinAbs(d, 1e-6));
  CHECK_THAT(v1.at(1, 1, 0), Catch::Matchers::WithinAbs(c, 1e-6));
}

TEST_CASE("same seed and stream reproduce bit-identical views") {
  Image anchor = quantized_random_image(40, 40, 8);
  AugmentConfig cfg;
  cfg.output_size = 32;
  cfg.seed = 1234;
  auto [a1, a2] = sample_views(anchor, cfg, 55);
  auto [b1, b2] = sample_views(anchor, cfg, 55);
  CHECK(a1.pixels == b1.pixels);
  CHECK(a2.pixels == b2.pixels);
}

TEST_CASE("distinct stream ids draw independently") {
  Image anchor = quantized_random_image(40, 40, 8);
  AugmentConfig cfg;
  cfg.output_size = 32;
  cfg.seed = 1234;
  int differing = 0;
  for (uint64_t s = 0; s < 8; ++s) {
    auto [a1, _] = sample_views(anchor, cfg, s);
    auto [b1, _2] = sample_views(anchor, cfg, s + 1);
    if (a1.pixels != b1.pixels) ++differing;
  }
  CHECK(differing >= 7);
}

TEST_CASE("empirical flip and solarize rates match their probabilities") {
  // two-tone anchor so the applied transforms are identifiable from pixels
  Image anchor(2, 2);
  for (int ch = 0; ch < 3; ++ch) {
    anchor.at(0, 0, ch) = anchor.at(1, 0, ch) = 0.2f;
    anchor.at(0, 1, ch) = anchor.at(1, 1, ch) = 0.9f;
  }
  auto cfg = off_config(2);
  cfg.p_flip = 0.5f;
  cfg.p_solarize = 0.1f;
  cfg.seed = 77;
  int flips = 0, solarized = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto [v, _] = sample_views(anchor, cfg, static_cast<uint64_t>(i));
    bool flipped = std::abs(v.at(0, 0, 0) - 0.2f) > 0.01f;
    float mx = *std::max_element(v.pixels.begin(), v.pixels.end());
    bool solar = mx < 0.5f;
    flips += flipped ? 1 : 0;
    solarized += solar ? 1 : 0;
  }
  double flip_rate = static_cast<double>(flips) / draws;
  double solar_rate = static_cast<double>(solarized) / draws;
  CHECK(std::abs(flip_rate - 0.5) < 0.02);
  CHECK(std::abs(solar_rate - 0.1) < 0.01);
}

TEST_CASE("pixel values stay in the unit interval under composition") {
  AugmentConfig cfg;
  cfg.output_size = 16;
  cfg.p_jitter = 1.0f;
  cfg.jitter_brightness = 0.9f;
  cfg.jitter_contrast = 0.9f;
  cfg.jitter_saturation = 0.9f;
  cfg.jitter_hue = 0.5f;
  cfg.p_solarize = 0.5f;
  cfg.seed = 31;
  Image anchor = quantized_random_image(24, 24, 3);
  for (uint64_t s = 0; s < 50; ++s) {
    auto [v1, v2] = sample_views(anchor, cfg, s);
    for (float p : v1.pixels) {
      REQUIRE(p >= 0.0f);
      REQUIRE(p <= 1.0f);
    }
    for (float p : v2.pixels) {
      REQUIRE(p >= 0.0f);
      REQUIRE(p <= 1.0f);
    }
  }
}

TEST_CASE("tiny anchors fall back to a center crop") {
  Image anchor = quantized_random_image(3, 3, 19);
  AugmentConfig cfg;
  cfg.output_size = 8;
  cfg.seed = 2;
  for (uint64_t s = 0; s < 20; ++s) {
    auto [v1, v2] = sample_views(anchor, cfg, s);
    CHECK(v1.height == 8);
    CHECK(v1.width == 8);
  }
}

TEST_CASE("augment config validation") {
  AugmentConfig cfg;
  cfg.p_flip = 1.5f;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = AugmentConfig{};
  cfg.crop_min = 0.0f;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("png and bmp round trips preserve 8-bit data") {
  auto dir = fresh_dir("imgio");
  Image img = quantized_random_image(17, 23, 12);
  SECTION("png") {
    save_png(dir / "x.png", img);
    Image back = load_image(dir / "x.png");
    REQUIRE(back.height == 17);
    REQUIRE(back.width == 23);
    CHECK(back.pixels == img.pixels);
  }
  SECTION("bmp") {
    save_bmp(dir / "x.bmp", img);
    Image back = load_image(dir / "x.bmp");
    REQUIRE(back.height == 17);
    REQUIRE(back.width == 23);
    CHECK(back.pixels == img.pixels);
  }
  fs::remove_all(dir);
}

TEST_CASE("image folder loader maps sorted subdirectories to labels") {
  auto dir = fresh_dir("loader");
  Image a = quantized_random_image(8, 8, 1);
  Image b = quantized_random_image(8, 8, 2);
  fs::create_directories(dir / "zebra");
  fs::create_directories(dir / "apple");
  save_png(dir / "apple" / "1.png", a);
  save_bmp(dir / "apple" / "2.bmp", b);
  save_png(dir / "zebra" / "1.png", b);
  auto ds = load_image_folder(dir);
  REQUIRE(ds.class_names == std::vector<std::string>{"apple", "zebra"});
  REQUIRE(ds.labels == std::vector<int>{0, 0, 1});
  CHECK(ds.size() == 3);
  fs::remove_all(dir);
}

TEST_CASE("loader rejects empty or missing roots") {
  auto dir = fresh_dir("empty");
  CHECK_THROWS_AS(load_image_folder(dir), ConfigError);
  CHECK_THROWS_AS(load_image_folder(dir / "nope"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("synthetic dataset generator emits the folder layout") {
  auto dir = fresh_dir("synth");
  SynthConfig cfg;
  cfg.classes = 4;
  cfg.per_class = 3;
  cfg.size = 16;
  cfg.seed = 99;
  write_synthetic_dataset(dir, cfg);
  auto ds = load_image_folder(dir);
  CHECK(ds.num_classes() == 4);
  CHECK(ds.size() == 12);
  auto mem = make_synthetic_dataset(cfg);
  REQUIRE(mem.size() == ds.size());
  // written files are 8-bit quantized versions of the in-memory images
  for (size_t i = 0; i < 5; ++i)
    for (size_t j = 0; j < mem.images[i].pixels.size(); ++j)
      CHECK_THAT(ds.images[i].pixels[j],
                 Catch::Matchers::WithinAbs(mem.images[i].pixels[j], 0.5f / 255.0f + 1e-6f));
  fs::remove_all(dir);
}

TEST_CASE("synthetic generation is deterministic in the seed") {
  SynthConfig cfg;
  cfg.classes = 3;
  cfg.per_class = 2;
  cfg.size = 8;
  cfg.seed = 7;
  auto a = make_synthetic_dataset(cfg);
  auto b = make_synthetic_dataset(cfg);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a.images[i].pixels == b.images[i].pixels);
}
