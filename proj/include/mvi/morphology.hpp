#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mvi/error.hpp"
#include "mvi/imaging.hpp"
#include "mvi/parallel.hpp"

namespace mvi {

// Flat disk structuring element: {(dx, dy) : dx^2 + dy^2 <= radius^2}.
struct DiskKernel {
  int radius = 0;

  // Half-width of the disk row at each dy in [-radius, radius].
  std::vector<int> half_widths() const {
    require(radius >= 0, errc::invalid_parameter, "disk radius must be non-negative");
    std::vector<int> hw(2 * static_cast<std::size_t>(radius) + 1);
    const std::int64_t r2 = std::int64_t{radius} * radius;
    for (int dy = -radius; dy <= radius; ++dy) {
      const std::int64_t rem = r2 - std::int64_t{dy} * dy;
      auto h = static_cast<std::int64_t>(std::sqrt(static_cast<double>(rem)));
      while (h * h > rem) --h;
      while ((h + 1) * (h + 1) <= rem) ++h;
      hw[dy + radius] = static_cast<int>(h);
    }
    return hw;
  }

  std::int64_t area() const {
    std::int64_t n = 0;
    for (int h : half_widths()) n += 2 * h + 1;
    return n;
  }
};

// Separable Gaussian, kernel truncated at ceil(3 sigma) and renormalized,
// clamp-to-edge borders. sigma == 0 returns the input.
inline FloatImage gaussian_blur(const FloatImage& image, double sigma) {
  require(std::isfinite(sigma) && sigma >= 0.0, errc::invalid_parameter,
          "sigma must be non-negative");
  require(image.channels() == 1, errc::invalid_input, "gaussian_blur expects a gray image");
  if (sigma == 0.0 || image.empty()) return image;

  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * static_cast<std::size_t>(radius) + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  const int w = image.width(), h = image.height();
  FloatImage tmp(image.size(), 1, image.resolution());
  for (int y = 0; y < h; ++y) {
    const auto src = image.row(y);
    auto dst = tmp.row(y);
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * src[std::clamp(x + i, 0, w - 1)];
      dst[x] = acc;
    }
  }
  FloatImage out(image.size(), 1, image.resolution());
  std::vector<double> acc(w);
  for (int y = 0; y < h; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int i = -radius; i <= radius; ++i) {
      const auto src = tmp.row(std::clamp(y + i, 0, h - 1));
      const double k = kernel[i + radius];
      for (int x = 0; x < w; ++x) acc[x] += k * src[x];
    }
    std::copy(acc.begin(), acc.end(), out.row(y).begin());
  }
  return out;
}

// Unit-interval gray to bytes, round to nearest.
inline ByteImage to_bytes(const FloatImage& image) {
  ByteImage out(image.size(), image.channels(), image.resolution());
  const auto src = image.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<std::uint8_t>(std::lround(std::clamp(src[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

struct OtsuResult {
  std::uint8_t threshold = 0;
  // True when no threshold separates two non-empty classes (constant image).
  bool degenerate = false;
};

namespace detail {

using u128 = unsigned __int128;

// 192-bit product of a 128-bit and a 64-bit unsigned value, most significant word first.
inline std::array<std::uint64_t, 3> mul_wide(u128 a, std::uint64_t b) {
  const u128 lo = static_cast<u128>(static_cast<std::uint64_t>(a)) * b;
  const u128 hi = static_cast<u128>(static_cast<std::uint64_t>(a >> 64)) * b;
  const u128 mid = (lo >> 64) + static_cast<std::uint64_t>(hi);
  return {static_cast<std::uint64_t>((mid >> 64) + (hi >> 64)), static_cast<std::uint64_t>(mid),
          static_cast<std::uint64_t>(lo)};
}

}  // namespace detail

// Global Otsu threshold over a byte image. Foreground is value > threshold.
//
// Between-class variance at t is (N*s0 - n0*S)^2 / (n0*n1*N^2), with n0, s0 the
// count and intensity sum of values <= t. The N^2 factor is common to every t,
// so candidates are compared exactly as D^2/(n0*n1) by cross-multiplication.
// Ties go to the smallest t. A constant image returns its value, flagged
// degenerate, so the foreground is empty.
inline OtsuResult otsu(const ByteImage& image) {
  require(image.channels() == 1, errc::invalid_input, "otsu expects a gray image");
  require(!image.empty(), errc::invalid_parameter, "otsu needs a non-empty image");
  // Keeps D^2 below 2^128 for exact comparison.
  require(image.data().size() < (std::size_t{1} << 27), errc::invalid_parameter,
          "otsu input too large; downsample first");

  std::array<std::uint64_t, 256> hist{};
  for (std::uint8_t v : image.data()) ++hist[v];
  const std::uint64_t total = image.data().size();
  std::uint64_t sum = 0;
  for (int v = 0; v < 256; ++v) sum += hist[v] * static_cast<std::uint64_t>(v);

  bool found = false;
  int best_t = 0;
  detail::u128 best_num = 0;
  std::uint64_t best_den = 1;
  std::uint64_t n0 = 0, s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[t];
    s0 += hist[t] * static_cast<std::uint64_t>(t);
    const std::uint64_t n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const auto a = static_cast<detail::u128>(total) * s0;
    const auto b = static_cast<detail::u128>(n0) * sum;
    const detail::u128 d = a > b ? a - b : b - a;
    const detail::u128 num = d * d;
    const std::uint64_t den = n0 * n1;
    // num/den > best_num/best_den  <=>  num*best_den > best_num*den
    if (!found || detail::mul_wide(num, best_den) > detail::mul_wide(best_num, den)) {
      found = true;
      best_t = t;
      best_num = num;
      best_den = den;
    }
  }
  if (!found) return {image.data().front(), true};
  return {static_cast<std::uint8_t>(best_t), false};
}

inline std::uint8_t otsu_threshold(const ByteImage& image) { return otsu(image).threshold; }

inline BinaryMask threshold_above(const ByteImage& gray, std::uint8_t t) {
  BinaryMask mask(gray.size(), gray.resolution());
  const auto src = gray.data();
  auto dst = mask.bits();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > t ? 1 : 0;
  return mask;
}

enum class MorphOp { erode, dilate, open, close };

namespace detail {

// Per-row prefix counts: prefix[y][x] = number of foreground pixels in row y before x.
inline std::vector<std::int32_t> row_prefix(const BinaryMask& m, Parallelism par) {
  const std::size_t stride = static_cast<std::size_t>(m.width()) + 1;
  std::vector<std::int32_t> prefix(stride * m.height());
  parallel_for(static_cast<std::size_t>(m.height()), par, [&](std::size_t y) {
    const auto row = m.row(static_cast<int>(y));
    std::int32_t* p = prefix.data() + y * stride;
    p[0] = 0;
    for (int x = 0; x < m.width(); ++x) p[x + 1] = p[x] + row[x];
  });
  return prefix;
}

// Pixels outside the image count as background for both operators, so erosion
// removes anything whose disk leaves the image.
inline BinaryMask erode_or_dilate(const BinaryMask& m, bool dilate, int radius, Parallelism par) {
  if (radius == 0 || m.size().area() == 0) return m;
  const auto hw = DiskKernel{radius}.half_widths();
  const auto prefix = row_prefix(m, par);
  const int w = m.width(), h = m.height();
  const std::size_t stride = static_cast<std::size_t>(w) + 1;

  BinaryMask out(m.size(), m.resolution());
  parallel_for(static_cast<std::size_t>(h), par, [&](std::size_t yu) {
    const int y = static_cast<int>(yu);
    auto dst = out.row(y);
    if (dilate) {
      for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        const std::int32_t* p = prefix.data() + static_cast<std::size_t>(yy) * stride;
        if (p[w] == 0) continue;
        const int r = hw[dy + radius];
        for (int x = 0; x < w; ++x) {
          const int lo = x - r < 0 ? 0 : x - r;
          const int hi = x + r + 1 > w ? w : x + r + 1;
          dst[x] |= static_cast<std::uint8_t>(p[hi] - p[lo] > 0);
        }
      }
    } else {
      if (y - radius < 0 || y + radius >= h) return;
      std::fill(dst.begin(), dst.end(), std::uint8_t{1});
      for (int x = 0; x < w; ++x) {
        if (x - radius < 0 || x + radius >= w) dst[x] = 0;
      }
      for (int dy = -radius; dy <= radius; ++dy) {
        const std::int32_t* p = prefix.data() + static_cast<std::size_t>(y + dy) * stride;
        const int r = hw[dy + radius];
        for (int x = radius; x < w - radius; ++x) {
          dst[x] &= static_cast<std::uint8_t>(p[x + r + 1] - p[x - r] == 2 * r + 1);
        }
      }
    }
  });
  return out;
}

}  // namespace detail

inline BinaryMask binary_morph(const BinaryMask& mask, MorphOp op, DiskKernel kernel,
                               Parallelism par = {}) {
  require(kernel.radius >= 0, errc::invalid_parameter, "disk radius must be non-negative");
  const int r = kernel.radius;
  switch (op) {
    case MorphOp::erode:
      return detail::erode_or_dilate(mask, false, r, par);
    case MorphOp::dilate:
      return detail::erode_or_dilate(mask, true, r, par);
    case MorphOp::open:
      return detail::erode_or_dilate(detail::erode_or_dilate(mask, false, r, par), true, r, par);
    case MorphOp::close:
      return detail::erode_or_dilate(detail::erode_or_dilate(mask, true, r, par), false, r, par);
  }
  throw InvariantError("unknown morphology operator");
}

}  // namespace mvi
