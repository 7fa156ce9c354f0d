#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "densesr/common.hpp"
#include "densesr/tensor.hpp"

namespace densesr {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

// Reads an 8-bit grayscale or RGB PNG into a (1,C,H,W) tensor with values
// v/255. Anything else (palette, 16-bit, alpha) is an ingestion error.
template <typename S>
Tensor<S> load_png(const std::string& path) {
  detail::FileHandle file(std::fopen(path.c_str(), "rb"));
  if (!file) fail_runtime("cannot open png for reading: ", path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail_runtime("libpng initialization failed for ", path);
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_runtime("malformed png: ", path);
  }

  png_init_io(png, file.get());
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  int channels = 0;
  if (depth == 8 && color == PNG_COLOR_TYPE_GRAY) channels = 1;
  if (depth == 8 && color == PNG_COLOR_TYPE_RGB) channels = 3;
  if (channels == 0) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_runtime("unsupported png (need 8-bit grayscale or rgb): ", path);
  }

  pixels.resize(static_cast<std::size_t>(height) * width * channels);
  row_ptrs.resize(height);
  for (int y = 0; y < height; ++y) {
    row_ptrs[y] = pixels.data() + static_cast<std::size_t>(y) * width * channels;
  }
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor<S> out(Shape{1, channels, height, width});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        const png_byte v = pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
        out.at(0, c, y, x) = static_cast<S>(v / 255.0);
      }
    }
  }
  return out;
}

// Writes a (1,C,H,W) tensor in [0,1] as an 8-bit PNG, rounding to the
// nearest integer level.
template <typename S>
void save_png(const Tensor<S>& image, const std::string& path) {
  const Shape s = image.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) {
    fail_config("save_png needs a single grayscale or rgb image, got ", s.str());
  }
  detail::FileHandle file(std::fopen(path.c_str(), "wb"));
  if (!file) fail_runtime("cannot open png for writing: ", path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    fail_runtime("libpng initialization failed for ", path);
  }
  std::vector<png_byte> pixels(static_cast<std::size_t>(s.h) * s.w * s.c);
  std::vector<png_bytep> row_ptrs(s.h);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail_runtime("png write failed: ", path);
  }

  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < s.c; ++c) {
        const double v = std::clamp(static_cast<double>(image.at(0, c, y, x)), 0.0, 1.0);
        pixels[(static_cast<std::size_t>(y) * s.w + x) * s.c + c] =
            static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
  }
  for (int y = 0; y < s.h; ++y) {
    row_ptrs[y] = pixels.data() + static_cast<std::size_t>(y) * s.w * s.c;
  }

  png_init_io(png, file.get());
  png_set_IHDR(png, info, s.w, s.h, 8,
               s.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace densesr
