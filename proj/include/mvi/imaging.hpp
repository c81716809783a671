#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mvi/error.hpp"

namespace mvi {

// Physical pixel pitch in micrometres per pixel.
class Resolution {
 public:
  constexpr Resolution() = default;
  explicit Resolution(double microns_per_pixel) : mpp_(microns_per_pixel) {
    require(std::isfinite(mpp_) && mpp_ > 0.0, errc::invalid_parameter,
            "resolution must be positive and finite");
  }

  double microns_per_pixel() const noexcept { return mpp_; }

  friend bool operator==(const Resolution&, const Resolution&) = default;

 private:
  double mpp_ = 1.0;
};

// Working resolutions used throughout the pipeline.
inline const Resolution kDetectionResolution{0.25};
inline const Resolution kSegmentationResolution{0.5};

struct Size {
  int width = 0;
  int height = 0;

  std::int64_t area() const noexcept { return std::int64_t{width} * height; }
  friend bool operator==(const Size&, const Size&) = default;
};

struct Pixel {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

// Row-major interleaved raster. T = uint8_t for byte images, double for
// unit-interval float images.
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;

  Image(Size size, int channels, Resolution resolution, T fill = T{})
      : size_(size), channels_(channels), resolution_(resolution) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(size.area()) * channels, fill);
  }

  Image(Size size, int channels, Resolution resolution, std::vector<T> data)
      : size_(size), channels_(channels), resolution_(resolution), data_(std::move(data)) {
    validate_shape();
    require(data_.size() == static_cast<std::size_t>(size.area()) * channels,
            errc::invalid_input, "pixel buffer length does not match width*height*channels");
  }

  int width() const noexcept { return size_.width; }
  int height() const noexcept { return size_.height; }
  Size size() const noexcept { return size_; }
  int channels() const noexcept { return channels_; }
  Resolution resolution() const noexcept { return resolution_; }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }

  std::span<const T> row(int y) const noexcept {
    return {data_.data() + offset(0, y), static_cast<std::size_t>(size_.width) * channels_};
  }
  std::span<T> row(int y) noexcept {
    return {data_.data() + offset(0, y), static_cast<std::size_t>(size_.width) * channels_};
  }

  const T& at(int x, int y, int c = 0) const noexcept { return data_[offset(x, y) + c]; }
  T& at(int x, int y, int c = 0) noexcept { return data_[offset(x, y) + c]; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t offset(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * size_.width + x) * channels_;
  }

  void validate_shape() const {
    require(size_.width >= 0 && size_.height >= 0, errc::invalid_input, "negative image size");
    require(channels_ == 1 || channels_ == 3, errc::invalid_input, "images have 1 or 3 channels");
  }

  Size size_{};
  int channels_ = 1;
  Resolution resolution_{};
  std::vector<T> data_;
};

using ByteImage = Image<std::uint8_t>;
using FloatImage = Image<double>;

inline ByteImage make_rgb(Size size, Resolution res, std::uint8_t fill = 255) {
  return ByteImage(size, 3, res, fill);
}

inline ByteImage make_gray(Size size, Resolution res, std::uint8_t fill = 0) {
  return ByteImage(size, 1, res, fill);
}

// Boolean raster; foreground is epithelium. Stored one byte per pixel (0/1).
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(Size size, Resolution resolution, bool fill = false)
      : size_(size), resolution_(resolution) {
    require(size.width >= 0 && size.height >= 0, errc::invalid_input, "negative mask size");
    bits_.assign(static_cast<std::size_t>(size.area()), fill ? 1 : 0);
  }

  int width() const noexcept { return size_.width; }
  int height() const noexcept { return size_.height; }
  Size size() const noexcept { return size_; }
  Resolution resolution() const noexcept { return resolution_; }

  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < size_.width && y < size_.height;
  }
  bool get(int x, int y) const noexcept { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool v = true) noexcept { bits_[index(x, y)] = v ? 1 : 0; }

  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::span<std::uint8_t> bits() noexcept { return bits_; }
  std::span<const std::uint8_t> row(int y) const noexcept {
    return {bits_.data() + index(0, y), static_cast<std::size_t>(size_.width)};
  }
  std::span<std::uint8_t> row(int y) noexcept {
    return {bits_.data() + index(0, y), static_cast<std::size_t>(size_.width)};
  }

  std::int64_t count() const noexcept {
    return std::count(bits_.begin(), bits_.end(), std::uint8_t{1});
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * size_.width + x;
  }

  Size size_{};
  Resolution resolution_{};
  std::vector<std::uint8_t> bits_;
};

struct TileRect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  std::int64_t area() const noexcept { return std::int64_t{w} * h; }
  bool inside(Size dims) const noexcept {
    return x >= 0 && y >= 0 && w >= 0 && h >= 0 && x + w <= dims.width && y + h <= dims.height;
  }
  bool contains(int px, int py) const noexcept {
    return px >= x && py >= y && px < x + w && py < y + h;
  }
  friend bool operator==(const TileRect&, const TileRect&) = default;
};

struct TileGrid {
  std::vector<TileRect> tiles;
  int tile_size = 0;
  int overlap = 0;
  Size image{};
};

namespace detail {

// Window origins along one axis: advance by stride, clamp the last window to
// end at the image edge. A dimension not larger than the tile gets one window.
inline std::vector<int> tile_positions(int dim, int tile_size, int stride) {
  if (dim <= tile_size) return {0};
  std::vector<int> pos;
  for (int p = 0; p + tile_size < dim; p += stride) pos.push_back(p);
  pos.push_back(dim - tile_size);
  pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
  return pos;
}

}  // namespace detail

inline TileGrid make_tile_grid(Size dims, int tile_size, int overlap) {
  require(dims.width > 0 && dims.height > 0, errc::invalid_parameter, "image dims must be positive");
  require(tile_size > 0, errc::invalid_parameter, "tile_size must be positive");
  require(overlap >= 0 && overlap < tile_size, errc::invalid_parameter,
          "overlap must satisfy 0 <= overlap < tile_size");

  const int stride = tile_size - overlap;
  const auto xs = detail::tile_positions(dims.width, tile_size, stride);
  const auto ys = detail::tile_positions(dims.height, tile_size, stride);
  const int tw = std::min(tile_size, dims.width);
  const int th = std::min(tile_size, dims.height);

  TileGrid grid{{}, tile_size, overlap, dims};
  grid.tiles.reserve(xs.size() * ys.size());
  for (int y : ys) {
    for (int x : xs) grid.tiles.push_back({x, y, tw, th});
  }
  return grid;
}

// Maps source pixel coordinates (homogeneous) to destination coordinates.
class AffineTransform {
 public:
  using Matrix = std::array<double, 9>;

  AffineTransform() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

  explicit AffineTransform(const Matrix& m) : m_(m) {
    require(m_[6] == 0.0 && m_[7] == 0.0 && m_[8] == 1.0, errc::invalid_transform,
            "affine transform must have last row (0, 0, 1)");
    require(std::all_of(m_.begin(), m_.end(), [](double v) { return std::isfinite(v); }),
            errc::invalid_transform, "affine transform has non-finite entries");
  }

  static AffineTransform translation(double tx, double ty) {
    return AffineTransform({1, 0, tx, 0, 1, ty, 0, 0, 1});
  }

  const Matrix& matrix() const noexcept { return m_; }
  double determinant() const noexcept { return m_[0] * m_[4] - m_[1] * m_[3]; }

  std::array<double, 2> apply(double x, double y) const noexcept {
    return {m_[0] * x + m_[1] * y + m_[2], m_[3] * x + m_[4] * y + m_[5]};
  }

  AffineTransform inverse() const {
    const double det = determinant();
    const double scale = std::max({std::abs(m_[0]), std::abs(m_[1]), std::abs(m_[3]),
                                   std::abs(m_[4]), 1e-300});
    require(std::abs(det) > 1e-12 * scale * scale, errc::invalid_transform,
            "affine transform is singular");
    const double a = m_[4] / det, b = -m_[1] / det;
    const double c = -m_[3] / det, d = m_[0] / det;
    return AffineTransform({a, b, -(a * m_[2] + b * m_[5]), c, d, -(c * m_[2] + d * m_[5]), 0, 0, 1});
  }

 private:
  Matrix m_;
};

// Nearest-neighbour rescale. Output pixel x samples source floor((x + 0.5) / factor).
inline BinaryMask resample_mask(const BinaryMask& mask, double factor) {
  require(std::isfinite(factor) && factor > 0.0, errc::invalid_parameter,
          "resample factor must be positive");
  const Size out{static_cast<int>(std::lround(mask.width() * factor)),
                 static_cast<int>(std::lround(mask.height() * factor))};
  require(out.width > 0 && out.height > 0, errc::invalid_parameter,
          "resample factor yields an empty mask");

  std::vector<int> src_x(out.width);
  for (int x = 0; x < out.width; ++x) {
    src_x[x] = std::min(mask.width() - 1, static_cast<int>(std::floor((x + 0.5) / factor)));
  }
  BinaryMask result(out, Resolution(mask.resolution().microns_per_pixel() / factor));
  for (int y = 0; y < out.height; ++y) {
    const int sy = std::min(mask.height() - 1, static_cast<int>(std::floor((y + 0.5) / factor)));
    const auto src = mask.row(sy);
    auto dst = result.row(y);
    for (int x = 0; x < out.width; ++x) dst[x] = src[src_x[x]];
  }
  return result;
}

// Inverse-mapping warp: destination p is foreground iff the source pixel at
// round(t^-1 p) is in bounds and foreground.
inline BinaryMask apply_affine(const BinaryMask& mask, const AffineTransform& t, Size out_dims) {
  require(out_dims.width > 0 && out_dims.height > 0, errc::invalid_parameter,
          "output dims must be positive");
  const AffineTransform inv = t.inverse();
  BinaryMask result(out_dims, mask.resolution());
  for (int y = 0; y < out_dims.height; ++y) {
    auto dst = result.row(y);
    for (int x = 0; x < out_dims.width; ++x) {
      const auto [sx, sy] = inv.apply(x, y);
      const double rx = std::round(sx), ry = std::round(sy);
      if (rx < 0 || ry < 0 || rx >= mask.width() || ry >= mask.height()) continue;
      dst[x] = mask.get(static_cast<int>(rx), static_cast<int>(ry)) ? 1 : 0;
    }
  }
  return result;
}

// Copies a rectangular window out of an image.
template <typename T>
Image<T> crop(const Image<T>& image, const TileRect& r) {
  require(r.inside(image.size()), errc::invalid_input, "crop window outside image");
  Image<T> out(Size{r.w, r.h}, image.channels(), image.resolution());
  const std::size_t span = static_cast<std::size_t>(r.w) * image.channels();
  for (int y = 0; y < r.h; ++y) {
    const auto src = image.row(r.y + y).subspan(static_cast<std::size_t>(r.x) * image.channels(), span);
    std::copy(src.begin(), src.end(), out.row(y).begin());
  }
  return out;
}

// Box-average downsampling of a byte image to a coarser resolution.
inline ByteImage downsample_area(const ByteImage& image, Resolution target) {
  const double factor = image.resolution().microns_per_pixel() / target.microns_per_pixel();
  const Size out{std::max(1, static_cast<int>(std::lround(image.width() * factor))),
                 std::max(1, static_cast<int>(std::lround(image.height() * factor)))};
  const int c = image.channels();
  auto bounds = [](int i, int n_out, int n_in) {
    const int lo = static_cast<int>(std::int64_t{i} * n_in / n_out);
    const int hi = static_cast<int>(std::int64_t{i + 1} * n_in / n_out);
    return std::pair{std::min(lo, n_in - 1), std::max(std::min(lo, n_in - 1) + 1, hi)};
  };

  ByteImage result(out, c, target);
  std::vector<std::uint64_t> acc;
  for (int oy = 0; oy < out.height; ++oy) {
    const auto [y0, y1] = bounds(oy, out.height, image.height());
    for (int ox = 0; ox < out.width; ++ox) {
      const auto [x0, x1] = bounds(ox, out.width, image.width());
      acc.assign(c, 0);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          for (int k = 0; k < c; ++k) acc[k] += image.at(x, y, k);
        }
      }
      const std::uint64_t n = std::uint64_t(y1 - y0) * (x1 - x0);
      for (int k = 0; k < c; ++k) result.at(ox, oy, k) = static_cast<std::uint8_t>((acc[k] + n / 2) / n);
    }
  }
  return result;
}

}  // namespace mvi
