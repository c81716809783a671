#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mvi/error.hpp"
#include "mvi/imaging.hpp"

namespace mvi {

namespace detail {

struct Confusion {
  std::int64_t tp = 0, fp = 0, fn = 0;
};

inline Confusion confusion(const BinaryMask& pred, const BinaryMask& ref) {
  require(pred.size() == ref.size(), errc::invalid_input, "mask dimensions differ");
  Confusion c;
  const auto p = pred.bits(), r = ref.bits();
  for (std::size_t i = 0; i < p.size(); ++i) {
    c.tp += p[i] & r[i];
    c.fp += p[i] & (r[i] ^ 1);
    c.fn += (p[i] ^ 1) & r[i];
  }
  return c;
}

}  // namespace detail

// Both masks empty counts as perfect agreement (1.0).
inline double iou(const BinaryMask& pred, const BinaryMask& ref) {
  const auto c = detail::confusion(pred, ref);
  const std::int64_t uni = c.tp + c.fp + c.fn;
  return uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
}

inline double dice_f1(const BinaryMask& pred, const BinaryMask& ref) {
  const auto c = detail::confusion(pred, ref);
  const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

// Predictions and references of equal, non-zero length.
class PairedSeries {
 public:
  PairedSeries(std::vector<double> predictions, std::vector<double> references)
      : pred_(std::move(predictions)), ref_(std::move(references)) {
    require(pred_.size() == ref_.size(), errc::invalid_input, "series lengths differ");
    require(!pred_.empty(), errc::invalid_input, "series are empty");
  }

  std::span<const double> predictions() const noexcept { return pred_; }
  std::span<const double> references() const noexcept { return ref_; }
  std::size_t size() const noexcept { return pred_.size(); }

 private:
  std::vector<double> pred_;
  std::vector<double> ref_;
};

inline double mae(const PairedSeries& s) {
  double sum = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) sum += std::abs(s.predictions()[i] - s.references()[i]);
  return sum / static_cast<double>(s.size());
}

inline double pearson_r(const PairedSeries& s) {
  require(s.size() >= 2, errc::undefined_correlation, "correlation needs at least two pairs");
  const auto x = s.predictions(), y = s.references();
  const double n = static_cast<double>(s.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  require(sxx > 0.0 && syy > 0.0, errc::undefined_correlation, "correlation of a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

inline constexpr Rgb kTruePositive{0, 255, 0};
inline constexpr Rgb kFalsePositive{255, 0, 0};
inline constexpr Rgb kFalseNegative{0, 0, 255};

// 50 % blend, rounding halves up.
inline std::uint8_t blend_half(std::uint8_t src, std::uint8_t tint) {
  return static_cast<std::uint8_t>((src + tint + 1) / 2);
}

// Tints true positives green, false positives red, false negatives blue.
inline ByteImage render_overlay(const ByteImage& image, const BinaryMask& pred, const BinaryMask& ref) {
  require(image.channels() == 3, errc::invalid_input, "overlay needs an RGB image");
  require(image.size() == pred.size() && pred.size() == ref.size(), errc::invalid_input,
          "overlay inputs differ in size");
  ByteImage out = image;
  auto px = out.data();
  const auto p = pred.bits(), r = ref.bits();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!p[i] && !r[i]) continue;
    const Rgb tint = p[i] && r[i] ? kTruePositive : (p[i] ? kFalsePositive : kFalseNegative);
    px[3 * i] = blend_half(px[3 * i], tint.r);
    px[3 * i + 1] = blend_half(px[3 * i + 1], tint.g);
    px[3 * i + 2] = blend_half(px[3 * i + 2], tint.b);
  }
  return out;
}

}  // namespace mvi
