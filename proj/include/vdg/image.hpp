#pragma once

// Float RGB images in [0,1], HWC layout, with bilinear resampling and
// PNG/BMP codecs (libpng for PNG, 24-bit uncompressed BMP handled directly).

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "vdg/tensor.hpp"

namespace vdg {

struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // h*w*3, HWC

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, 0.0f) {}

  float& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
};

inline void clamp01(Image& img) {
  for (auto& p : img.pixels) p = std::clamp(p, 0.0f, 1.0f);
}

// pixel-center mapping: src = (dst + 0.5) * scale - 0.5
inline Image resize_bilinear(const Image& src, int oh, int ow) {
  if (src.height < 1 || src.width < 1 || oh < 1 || ow < 1)
    throw ConfigError("resize_bilinear: empty image");
  Image out(oh, ow);
  float sy = static_cast<float>(src.height) / static_cast<float>(oh);
  float sx = static_cast<float>(src.width) / static_cast<float>(ow);
  for (int y = 0; y < oh; ++y) {
    float fy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
    int y0 = static_cast<int>(std::floor(fy));
    float wy = fy - static_cast<float>(y0);
    int ya = std::clamp(y0, 0, src.height - 1);
    int yb = std::clamp(y0 + 1, 0, src.height - 1);
    for (int x = 0; x < ow; ++x) {
      float fx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
      int x0 = static_cast<int>(std::floor(fx));
      float wx = fx - static_cast<float>(x0);
      int xa = std::clamp(x0, 0, src.width - 1);
      int xb = std::clamp(x0 + 1, 0, src.width - 1);
      for (int c = 0; c < 3; ++c) {
        float top = src.at(ya, xa, c) * (1.0f - wx) + src.at(ya, xb, c) * wx;
        float bot = src.at(yb, xa, c) * (1.0f - wx) + src.at(yb, xb, c) * wx;
        out.at(y, x, c) = top * (1.0f - wy) + bot * wy;
      }
    }
  }
  return out;
}

inline Image crop(const Image& src, int top, int left, int h, int w) {
  if (top < 0 || left < 0 || h < 1 || w < 1 || top + h > src.height ||
      left + w > src.width)
    throw ConfigError("crop: region outside image");
  Image out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(top + y, left + x, c);
  return out;
}

// deterministic eval preprocessing: shorter side to `size`, then center crop
inline Image center_crop_resize(const Image& src, int size) {
  if (src.height == size && src.width == size) return src;
  int h = src.height, w = src.width;
  int nh, nw;
  if (h <= w) {
    nh = size;
    nw = std::max(size, static_cast<int>(std::lround(static_cast<double>(w) * size / h)));
  } else {
    nw = size;
    nh = std::max(size, static_cast<int>(std::lround(static_cast<double>(h) * size / w)));
  }
  Image resized = resize_bilinear(src, nh, nw);
  int top = (nh - size) / 2, left = (nw - size) / 2;
  return crop(resized, top, left, size, size);
}

// ---------------------------------------------------------------------------
// 8-bit file IO
// ---------------------------------------------------------------------------

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline uint32_t read_u32le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline int32_t read_i32le(const unsigned char* p) {
  return static_cast<int32_t>(read_u32le(p));
}

}  // namespace detail

inline Image load_png(const std::filesystem::path& path) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw ConfigError("cannot open " + path.string());
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw NumericError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw NumericError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ConfigError("corrupt PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  Image img(static_cast<int>(h), static_cast<int>(w));
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(static_cast<int>(y), static_cast<int>(x), c) =
            static_cast<float>(row[static_cast<size_t>(x) * 3 + c]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void save_png(const std::filesystem::path& path, const Image& img) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw ConfigError("cannot write " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw NumericError("libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw NumericError("PNG write failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<size_t>(x) * 3 + c] = static_cast<unsigned char>(
            std::lround(std::clamp(img.at(y, x, c), 0.0f, 1.0f) * 255.0f));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline Image load_bmp(const std::filesystem::path& path) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw ConfigError("cannot open " + path.string());
  unsigned char header[54];
  if (std::fread(header, 1, 54, f.get()) != 54 || header[0] != 'B' || header[1] != 'M')
    throw ConfigError("not a BMP file: " + path.string());
  uint32_t data_offset = detail::read_u32le(header + 10);
  int32_t w = detail::read_i32le(header + 18);
  int32_t h = detail::read_i32le(header + 22);
  uint16_t bpp = static_cast<uint16_t>(header[28] | (header[29] << 8));
  uint32_t compression = detail::read_u32le(header + 30);
  if ((bpp != 24 && bpp != 32) || compression != 0)
    throw ConfigError("unsupported BMP variant (need 24/32-bit uncompressed): " +
                      path.string());
  bool flip = h > 0;  // positive height means bottom-up rows
  int ah = std::abs(h);
  if (w <= 0 || ah <= 0) throw ConfigError("bad BMP dimensions: " + path.string());
  int bytes = bpp / 8;
  size_t row_size = (static_cast<size_t>(w) * bytes + 3u) & ~3u;
  std::vector<unsigned char> row(row_size);
  if (std::fseek(f.get(), static_cast<long>(data_offset), SEEK_SET) != 0)
    throw ConfigError("truncated BMP: " + path.string());
  Image img(ah, w);
  for (int yi = 0; yi < ah; ++yi) {
    if (std::fread(row.data(), 1, row_size, f.get()) != row_size)
      throw ConfigError("truncated BMP: " + path.string());
    int y = flip ? ah - 1 - yi : yi;
    for (int x = 0; x < w; ++x) {
      // BGR on disk
      img.at(y, x, 0) = static_cast<float>(row[static_cast<size_t>(x) * bytes + 2]) / 255.0f;
      img.at(y, x, 1) = static_cast<float>(row[static_cast<size_t>(x) * bytes + 1]) / 255.0f;
      img.at(y, x, 2) = static_cast<float>(row[static_cast<size_t>(x) * bytes + 0]) / 255.0f;
    }
  }
  return img;
}

inline void save_bmp(const std::filesystem::path& path, const Image& img) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw ConfigError("cannot write " + path.string());
  size_t row_size = (static_cast<size_t>(img.width) * 3 + 3u) & ~3u;
  uint32_t data_size = static_cast<uint32_t>(row_size * static_cast<size_t>(img.height));
  uint32_t file_size = 54 + data_size;
  unsigned char header[54] = {0};
  header[0] = 'B';
  header[1] = 'M';
  auto put32 = [&](int off, uint32_t v) {
    header[off] = static_cast<unsigned char>(v & 0xff);
    header[off + 1] = static_cast<unsigned char>((v >> 8) & 0xff);
    header[off + 2] = static_cast<unsigned char>((v >> 16) & 0xff);
    header[off + 3] = static_cast<unsigned char>((v >> 24) & 0xff);
  };
  put32(2, file_size);
  put32(10, 54);
  put32(14, 40);
  put32(18, static_cast<uint32_t>(img.width));
  put32(22, static_cast<uint32_t>(img.height));
  header[26] = 1;           // planes
  header[28] = 24;          // bpp
  put32(34, data_size);
  std::fwrite(header, 1, 54, f.get());
  std::vector<unsigned char> row(row_size, 0);
  for (int yi = img.height - 1; yi >= 0; --yi) {
    for (int x = 0; x < img.width; ++x) {
      row[static_cast<size_t>(x) * 3 + 2] = static_cast<unsigned char>(
          std::lround(std::clamp(img.at(yi, x, 0), 0.0f, 1.0f) * 255.0f));
      row[static_cast<size_t>(x) * 3 + 1] = static_cast<unsigned char>(
          std::lround(std::clamp(img.at(yi, x, 1), 0.0f, 1.0f) * 255.0f));
      row[static_cast<size_t>(x) * 3 + 0] = static_cast<unsigned char>(
          std::lround(std::clamp(img.at(yi, x, 2), 0.0f, 1.0f) * 255.0f));
    }
    std::fwrite(row.data(), 1, row_size, f.get());
  }
}

inline Image load_image(const std::filesystem::path& path) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw ConfigError("cannot open " + path.string());
  unsigned char magic[8] = {0};
  size_t got = std::fread(magic, 1, 8, f.get());
  f.reset();
  if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0) return load_png(path);
  if (got >= 2 && magic[0] == 'B' && magic[1] == 'M') return load_bmp(path);
  throw ConfigError("unsupported image format: " + path.string());
}

}  // namespace vdg
