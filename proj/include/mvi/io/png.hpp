#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mvi/error.hpp"
#include "mvi/imaging.hpp"

namespace mvi::io {

// Decoded PNG: 1 (gray) or 3 (RGB) channels, alpha stripped, palette and
// low-bit gray expanded. Samples are stored widened to 16 bits.
struct RawPng {
  Size size;
  int channels = 0;
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  require(f != nullptr, errc::io_error, "cannot open '" + path.string() + "'");
  return f;
}

}  // namespace detail

inline RawPng read_png(const std::filesystem::path& path) {
  auto file = detail::open_file(path, "rb");
  png_byte sig[8];
  require(std::fread(sig, 1, 8, file.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0, errc::io_error,
          "'" + path.string() + "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  require(info != nullptr, errc::io_error, "libpng initialisation failed");

  RawPng out;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(errc::io_error, "failed to decode '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  out.size = {static_cast<int>(png_get_image_width(png, info)),
              static_cast<int>(png_get_image_height(png, info))};
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * out.size.height);
  rows.resize(out.size.height);
  for (int y = 0; y < out.size.height; ++y) rows[y] = buffer.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  require(out.channels == 1 || out.channels == 3, errc::io_error,
          "unsupported PNG channel layout in '" + path.string() + "'");
  const std::size_t n = static_cast<std::size_t>(out.size.area()) * out.channels;
  out.samples.resize(n);
  if (out.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      out.samples[i] = static_cast<std::uint16_t>((buffer[2 * i] << 8) | buffer[2 * i + 1]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = buffer[i];
  }
  return out;
}

// Writes 8-bit (samples <= 255) or 16-bit gray/RGB.
inline void write_png(const std::filesystem::path& path, Size size, int channels, int bit_depth,
                      std::span<const std::uint16_t> samples, int compression = 3) {
  require(channels == 1 || channels == 3, errc::invalid_input, "PNG output needs 1 or 3 channels");
  require(bit_depth == 8 || bit_depth == 16, errc::invalid_input, "PNG output is 8 or 16 bit");
  require(samples.size() == static_cast<std::size_t>(size.area()) * channels, errc::invalid_input,
          "PNG sample count mismatch");
  require(size.width > 0 && size.height > 0, errc::invalid_input, "cannot write an empty PNG");

  const std::size_t bytes = bit_depth / 8;
  const std::size_t rowbytes = static_cast<std::size_t>(size.width) * channels * bytes;
  std::vector<png_byte> row(rowbytes);

  auto file = detail::open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  require(info != nullptr, errc::io_error, "libpng initialisation failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(errc::io_error, "failed to encode '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, compression);
  png_set_IHDR(png, info, size.width, size.height, bit_depth,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t per_row = static_cast<std::size_t>(size.width) * channels;
  for (int y = 0; y < size.height; ++y) {
    const auto src = samples.subspan(per_row * y, per_row);
    if (bytes == 2) {
      for (std::size_t i = 0; i < per_row; ++i) {
        row[2 * i] = static_cast<png_byte>(src[i] >> 8);
        row[2 * i + 1] = static_cast<png_byte>(src[i] & 0xFF);
      }
    } else {
      for (std::size_t i = 0; i < per_row; ++i) row[i] = static_cast<png_byte>(src[i]);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline ByteImage read_rgb(const std::filesystem::path& path, Resolution res = {}) {
  const RawPng raw = read_png(path);
  ByteImage img(raw.size, 3, res);
  auto dst = img.data();
  const int shift = raw.bit_depth == 16 ? 8 : 0;
  for (std::size_t p = 0; p < static_cast<std::size_t>(raw.size.area()); ++p) {
    for (int c = 0; c < 3; ++c) {
      const std::uint16_t v = raw.samples[p * raw.channels + (raw.channels == 3 ? c : 0)];
      dst[3 * p + c] = static_cast<std::uint8_t>(v >> shift);
    }
  }
  return img;
}

inline void write_rgb(const std::filesystem::path& path, const ByteImage& img) {
  require(img.channels() == 3, errc::invalid_input, "write_rgb needs an RGB image");
  const std::vector<std::uint16_t> s(img.data().begin(), img.data().end());
  write_png(path, img.size(), 3, 8, s);
}

// Mask PNG: 8-bit gray, 0 background, 255 foreground; any value >= 128 reads as foreground.
inline BinaryMask read_mask(const std::filesystem::path& path, Resolution res = {}) {
  const RawPng raw = read_png(path);
  require(raw.channels == 1, errc::io_error, "mask PNG '" + path.string() + "' must be grayscale");
  const std::uint16_t cut = raw.bit_depth == 16 ? 32768 : 128;
  BinaryMask mask(raw.size, res);
  auto dst = mask.bits();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = raw.samples[i] >= cut ? 1 : 0;
  return mask;
}

inline void write_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint16_t> s(mask.bits().size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = mask.bits()[i] ? 255 : 0;
  write_png(path, mask.size(), 1, 8, s);
}

}  // namespace mvi::io
