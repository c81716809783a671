#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mvi/error.hpp"
#include "mvi/imaging.hpp"
#include "mvi/parallel.hpp"

namespace mvi {

struct StainVector {
  std::string name;
  std::array<double, 3> od_rgb{};
};

// 2 or 3 unit-norm stain vectors in optical-density RGB space. Construction
// normalizes the vectors and precomputes the unmixing matrix: the exact
// inverse for three stains, the least-squares pseudo-inverse for two.
class StainMatrix {
 public:
  // Condition numbers above this are rejected as ill-conditioned.
  static constexpr double kMaxCondition = 1e6;

  explicit StainMatrix(std::vector<StainVector> stains) : stains_(std::move(stains)) {
    require(stains_.size() == 2 || stains_.size() == 3, errc::invalid_parameter,
            "stain matrix needs 2 or 3 stains");
    for (auto& s : stains_) {
      const double norm = std::sqrt(s.od_rgb[0] * s.od_rgb[0] + s.od_rgb[1] * s.od_rgb[1] +
                                    s.od_rgb[2] * s.od_rgb[2]);
      require(std::isfinite(norm) && norm > 0.0, errc::invalid_parameter,
              "stain vector '" + s.name + "' has zero length");
      for (double& v : s.od_rgb) v /= norm;
    }
    for (std::size_t i = 0; i < stains_.size(); ++i) {
      for (std::size_t j = i + 1; j < stains_.size(); ++j) {
        require(stains_[i].name != stains_[j].name, errc::invalid_parameter,
                "duplicate stain name '" + stains_[i].name + "'");
      }
    }

    const auto k = static_cast<Eigen::Index>(stains_.size());
    Eigen::MatrixXd m(k, 3);
    for (Eigen::Index i = 0; i < k; ++i) {
      for (int c = 0; c < 3; ++c) m(i, c) = stains_[i].od_rgb[c];
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    condition_ = sv(k - 1) > 0.0 ? sv(0) / sv(k - 1) : INFINITY;
    require(condition_ <= kMaxCondition, errc::ill_conditioned,
            "stain vectors are nearly linearly dependent");

    // c = (M M^T)^-1 M od solves min |M^T c - od|; for k = 3 it is M^-T od.
    const Eigen::MatrixXd gram = m * m.transpose();
    const Eigen::MatrixXd pinv = gram.inverse() * m;
    for (Eigen::Index i = 0; i < k; ++i) {
      for (int c = 0; c < 3; ++c) unmix_[i][c] = pinv(i, c);
    }
  }

  // Widely published hematoxylin / DAB pair.
  static StainMatrix h_dab() {
    return StainMatrix({{"hematoxylin", {0.650, 0.704, 0.286}}, {"DAB", {0.269, 0.568, 0.776}}});
  }

  std::size_t size() const noexcept { return stains_.size(); }
  const StainVector& stain(std::size_t i) const { return stains_.at(i); }
  const std::vector<StainVector>& stains() const noexcept { return stains_; }
  double condition() const noexcept { return condition_; }
  const std::array<std::array<double, 3>, 3>& unmixing() const noexcept { return unmix_; }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < stains_.size(); ++i) {
      if (stains_[i].name == name) return i;
    }
    return std::nullopt;
  }

  // Optical density produced by the given concentrations (M^T c).
  std::array<double, 3> compose(std::span<const double> conc) const {
    std::array<double, 3> od{};
    for (std::size_t i = 0; i < stains_.size(); ++i) {
      for (int c = 0; c < 3; ++c) od[c] += conc[i] * stains_[i].od_rgb[c];
    }
    return od;
  }

 private:
  std::vector<StainVector> stains_;
  std::array<std::array<double, 3>, 3> unmix_{};
  double condition_ = 1.0;
};

using Background = std::array<std::uint8_t, 3>;
inline constexpr Background kWhiteBackground{255, 255, 255};

// Three-channel optical-density image.
using OdImage = FloatImage;

struct ConcentrationImage {
  FloatImage values;  // one channel per stain, in StainMatrix order
  std::vector<std::string> names;
};

namespace detail {

// OD per byte value: -log10(max(I, 1) / I0), clamped at 0.
inline std::array<double, 256> od_table(std::uint8_t background) {
  std::array<double, 256> lut{};
  for (int i = 0; i < 256; ++i) {
    const double v = -std::log10(std::max(i, 1) / static_cast<double>(background));
    lut[i] = std::max(0.0, v);
  }
  return lut;
}

}  // namespace detail

inline OdImage rgb_to_od(const ByteImage& rgb, Background background = kWhiteBackground,
                         Parallelism par = {}) {
  require(rgb.channels() == 3, errc::invalid_input, "rgb_to_od expects an RGB image");
  require(background[0] >= 1 && background[1] >= 1 && background[2] >= 1, errc::invalid_parameter,
          "background intensity must be >= 1");
  const std::array<std::array<double, 256>, 3> lut{
      detail::od_table(background[0]), detail::od_table(background[1]), detail::od_table(background[2])};

  OdImage od(rgb.size(), 3, rgb.resolution());
  parallel_for(static_cast<std::size_t>(rgb.height()), par, [&](std::size_t y) {
    const auto src = rgb.row(static_cast<int>(y));
    auto dst = od.row(static_cast<int>(y));
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = lut[i % 3][src[i]];
  });
  return od;
}

inline ConcentrationImage deconvolve(const OdImage& od, const StainMatrix& m, Parallelism par = {}) {
  require(od.channels() == 3, errc::invalid_input, "deconvolve expects a 3-channel OD image");
  const int k = static_cast<int>(m.size());
  const auto& u = m.unmixing();

  ConcentrationImage out;
  for (const auto& s : m.stains()) out.names.push_back(s.name);
  // A 2-stain result still uses a 3-channel raster; the third channel stays 0.
  out.values = FloatImage(od.size(), 3, od.resolution());
  parallel_for(static_cast<std::size_t>(od.height()), par, [&](std::size_t y) {
    const auto src = od.row(static_cast<int>(y));
    auto dst = out.values.row(static_cast<int>(y));
    for (std::size_t p = 0; p < src.size(); p += 3) {
      for (int i = 0; i < k; ++i) {
        const double c = u[i][0] * src[p] + u[i][1] * src[p + 1] + u[i][2] * src[p + 2];
        dst[p + i] = c > 0.0 ? c : 0.0;
      }
    }
  });
  return out;
}

inline constexpr double kDefaultSaturation = 2.0;

// Selected stain channel rescaled to [0, 1] by clamping at `saturation`.
inline FloatImage extract_channel(const ConcentrationImage& c, std::string_view stain_name,
                                  double saturation = kDefaultSaturation) {
  require(saturation > 0.0, errc::invalid_parameter, "saturation must be positive");
  const auto it = std::find(c.names.begin(), c.names.end(), stain_name);
  require(it != c.names.end(), errc::unknown_stain,
          "stain '" + std::string(stain_name) + "' not in stain matrix");
  const auto ch = static_cast<std::size_t>(it - c.names.begin());

  FloatImage gray(c.values.size(), 1, c.values.resolution());
  const auto src = c.values.data();
  auto dst = gray.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = std::clamp(src[i * 3 + ch] / saturation, 0.0, 1.0);
  }
  return gray;
}

// Everything needed to turn an IHC RGB image into a normalized stain channel.
struct StainSetup {
  StainMatrix matrix = StainMatrix::h_dab();
  Background background = kWhiteBackground;
  std::string target_stain = "DAB";
  double saturation = kDefaultSaturation;

  FloatImage target_channel(const ByteImage& rgb, Parallelism par = {}) const {
    return extract_channel(deconvolve(rgb_to_od(rgb, background, par), matrix, par), target_stain,
                           saturation);
  }
};

}  // namespace mvi
