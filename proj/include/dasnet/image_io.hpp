#pragma once

#include <png.h>

#include <cstdio>
#include <cstdint>
#include <string>
#include <vector>

#include "dasnet/tensor.hpp"

namespace dasnet::io {

/// Decoded image: interleaved rows, 8- or 16-bit samples widened to uint16.
struct ImageU16 {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> pixels;  // size = width*height*channels
};

inline ImageU16 read_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) fail("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  ImageU16 img;
  std::vector<std::uint8_t> buf;
  std::vector<png_bytep> rows;
  bool ok = false;
  if (png && info && !setjmp(png_jmpbuf(png))) {
    png_init_io(png, fp);
    png_read_info(png, info);
    png_uint_32 w = 0, h = 0;
    int bit_depth = 0, color_type = 0;
    png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.bit_depth = png_get_bit_depth(png, info);
    img.channels = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    buf.assign(rowbytes * h, 0);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
    img.pixels.resize(n);
    if (img.bit_depth == 16) {
      for (std::size_t i = 0; i < n; ++i)
        img.pixels[i] = static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    } else {
      for (std::size_t i = 0; i < n; ++i) img.pixels[i] = buf[i];
    }
    ok = true;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  if (!ok) fail("failed to decode PNG " + path);
  return img;
}

namespace detail {

inline void write_png(const std::string& path, int width, int height, int channels,
                      int bit_depth, const std::uint8_t* bytes) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) fail("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  std::vector<png_bytep> rows;
  bool ok = false;
  if (png && info && !setjmp(png_jmpbuf(png))) {
    png_init_io(png, fp);
    const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 bit_depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t rowbytes =
        static_cast<std::size_t>(width) * channels * (bit_depth == 16 ? 2 : 1);
    rows.resize(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y)
      rows[static_cast<std::size_t>(y)] = const_cast<std::uint8_t*>(bytes) + y * rowbytes;
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    ok = true;
  }
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  if (!ok) fail("failed to write PNG " + path);
}

}  // namespace detail

inline void write_png_gray8(const std::string& path, int width, int height,
                            const std::vector<std::uint8_t>& pixels) {
  check(static_cast<std::size_t>(width) * height == pixels.size(), "write_png_gray8: size");
  detail::write_png(path, width, height, 1, 8, pixels.data());
}

inline void write_png_rgb8(const std::string& path, int width, int height,
                           const std::vector<std::uint8_t>& pixels) {
  check(static_cast<std::size_t>(width) * height * 3 == pixels.size(), "write_png_rgb8: size");
  detail::write_png(path, width, height, 3, 8, pixels.data());
}

inline void write_png_gray16(const std::string& path, int width, int height,
                             const std::vector<std::uint16_t>& pixels) {
  check(static_cast<std::size_t>(width) * height == pixels.size(), "write_png_gray16: size");
  std::vector<std::uint8_t> bytes(pixels.size() * 2);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(pixels[i] >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(pixels[i] & 0xff);
  }
  detail::write_png(path, width, height, 1, 16, bytes.data());
}

}  // namespace dasnet::io
