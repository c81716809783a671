#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mvi/error.hpp"
#include "mvi/fusion.hpp"
#include "mvi/imaging.hpp"

namespace mvi {

// Ten high-power fields at 40x with a 22 mm field number.
inline constexpr double kDefaultRoiAreaMm2 = 2.37;
inline constexpr int kDefaultFieldCount = 10;
inline constexpr int kDefaultWeibelPoints = 432;

struct RoiSpec {
  double area_mm2 = kDefaultRoiAreaMm2;
  Resolution resolution = kDetectionResolution;  // frame of the detections
  int n_fields = kDefaultFieldCount;

  void validate() const {
    require(std::isfinite(area_mm2) && area_mm2 > 0.0, errc::invalid_parameter,
            "ROI area must be positive");
    require(n_fields >= 1, errc::invalid_parameter, "ROI needs at least one field");
  }
};

// k = 100 / A, A in mm^2.
inline double k_coefficient(double area_mm2) {
  require(std::isfinite(area_mm2) && area_mm2 > 0.0, errc::invalid_parameter,
          "area must be positive");
  return 100.0 / area_mm2;
}

// Percentage of foreground pixels inside `region`.
inline double epithelium_fraction(const BinaryMask& mask, const TileRect& region) {
  require(region.area() > 0, errc::invalid_parameter, "empty region");
  require(region.inside(mask.size()), errc::invalid_input, "region outside mask");
  std::int64_t fg = 0;
  for (int y = region.y; y < region.y + region.h; ++y) {
    const auto row = mask.row(y).subspan(static_cast<std::size_t>(region.x), static_cast<std::size_t>(region.w));
    fg += std::count(row.begin(), row.end(), std::uint8_t{1});
  }
  return 100.0 * static_cast<double>(fg) / static_cast<double>(region.area());
}

inline double epithelium_fraction(const BinaryMask& mask) {
  return epithelium_fraction(mask, TileRect{0, 0, mask.width(), mask.height()});
}

// k * MC / Vv with Vv in percent.
inline double mv_index_single(std::int64_t mc, double vv_percent, double k) {
  require(mc >= 0, errc::invalid_parameter, "mitotic count must be non-negative");
  require(vv_percent >= 0.0 && vv_percent <= 100.0, errc::invalid_parameter,
          "Vv must lie in [0, 100] percent");
  require(vv_percent > 0.0, errc::undefined_index, "no epithelium present (Vv = 0)");
  return k * static_cast<double>(mc) / vv_percent;
}

struct FieldCount {
  std::int64_t mc = 0;
  double vv_percent = 0.0;
};

// k * sum(MC_i / Vv_i). Empty fields (Vv = 0, MC = 0) are skipped; mitoses in a
// field without epithelium mean the mask and detections disagree.
inline double mv_index_fields(std::span<const FieldCount> fields, double k) {
  double sum = 0.0;
  for (const auto& f : fields) {
    if (f.vv_percent == 0.0) {
      require(f.mc == 0, errc::inconsistent_field, "mitoses counted in a field without epithelium");
      continue;
    }
    sum += mv_index_single(f.mc, f.vv_percent, 1.0);
  }
  return k * sum;
}

struct WeibelGrid {
  int n_points = kDefaultWeibelPoints;
  double offset_x = 0.5;  // position inside each lattice cell, [0, 1)
  double offset_y = 0.5;
};

struct Lattice {
  int rows = 0;
  int cols = 0;
};

// Lattice for n points over an ROI. Prefers an exact factorization
// rows * cols = n whose cells have aspect ratio within [1/2, 2], choosing the
// squarest. Otherwise cols ~ sqrt(n * W / H), rows = ceil(n / cols), and the
// surplus points are dropped from the end in row-major order.
inline Lattice weibel_lattice(int n_points, Size roi) {
  require(n_points > 0, errc::invalid_parameter, "Weibel grid needs at least one point");
  require(roi.width > 0 && roi.height > 0, errc::invalid_parameter, "ROI must be non-empty");
  std::optional<Lattice> best;
  double best_score = 0.0;
  for (int cols = 1; cols <= n_points; ++cols) {
    if (n_points % cols != 0) continue;
    const int rows = n_points / cols;
    const double aspect = (static_cast<double>(roi.width) / cols) / (static_cast<double>(roi.height) / rows);
    if (aspect < 0.5 || aspect > 2.0) continue;
    const double score = std::abs(std::log(aspect));
    if (!best || score < best_score) {
      best = Lattice{rows, cols};
      best_score = score;
    }
  }
  if (best) return *best;
  const int cols = std::clamp(
      static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_points) * roi.width / roi.height))), 1,
      n_points);
  return {(n_points + cols - 1) / cols, cols};
}

// Grid points in pixel indices. Continuous position (c + dx) * W / cols maps to
// the pixel whose centre is nearest, i.e. its floor.
inline std::vector<Pixel> weibel_points(const WeibelGrid& grid, Size roi) {
  require(grid.offset_x >= 0.0 && grid.offset_x < 1.0 && grid.offset_y >= 0.0 && grid.offset_y < 1.0,
          errc::invalid_parameter, "Weibel offset must lie in [0, 1)^2");
  const Lattice lat = weibel_lattice(grid.n_points, roi);
  const double cell_w = static_cast<double>(roi.width) / lat.cols;
  const double cell_h = static_cast<double>(roi.height) / lat.rows;
  std::vector<Pixel> pts;
  pts.reserve(grid.n_points);
  for (int i = 0; i < grid.n_points; ++i) {
    const int r = i / lat.cols, c = i % lat.cols;
    const int x = static_cast<int>(std::floor((c + grid.offset_x) * cell_w));
    const int y = static_cast<int>(std::floor((r + grid.offset_y) * cell_h));
    pts.push_back({std::clamp(x, 0, roi.width - 1), std::clamp(y, 0, roi.height - 1)});
  }
  return pts;
}

// Point-counting estimate of the foreground fraction, in [0, 1].
inline double weibel_estimate(const BinaryMask& mask, const WeibelGrid& grid) {
  require(grid.n_points > 0, errc::invalid_parameter, "Weibel grid needs at least one point");
  std::int64_t hits = 0;
  for (const Pixel& p : weibel_points(grid, mask.size())) hits += mask.get(p.x, p.y) ? 1 : 0;
  return static_cast<double>(hits) / grid.n_points;
}

// Platform-independent offset in [0, 1)^2 drawn from a seed.
inline WeibelGrid weibel_grid_from_seed(std::uint64_t seed, int n_points = kDefaultWeibelPoints) {
  std::uint64_t state = seed;
  auto next = [&state] {
    // splitmix64
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  };
  const double dx = static_cast<double>(next() >> 11) * 0x1.0p-53;
  const double dy = static_cast<double>(next() >> 11) * 0x1.0p-53;
  return {n_points, dx, dy};
}

struct FieldResult {
  int index = 0;
  TileRect region;  // in mask pixels
  std::int64_t mc = 0;
  double vv_percent = 0.0;
  std::optional<double> mv;  // undefined when the field has no epithelium
};

struct MVReport {
  double k = 0.0;
  double area_mm2 = 0.0;
  std::int64_t mc_total = 0;
  std::int64_t mc_kept = 0;
  double vv_mean = 0.0;
  double vv_std = 0.0;
  double mv_mean = 0.0;
  double mv_std = 0.0;
  double mv_whole_roi = 0.0;
  double det_threshold_used = 0.0;
  std::vector<FieldResult> fields;
};

// rows x cols for n equal fields: the most square factorization (2 x 5 for 10).
inline Lattice field_layout(int n_fields) {
  require(n_fields >= 1, errc::invalid_parameter, "need at least one field");
  int rows = 1;
  for (int r = 1; static_cast<std::int64_t>(r) * r <= n_fields; ++r) {
    if (n_fields % r == 0) rows = r;
  }
  return {rows, n_fields / rows};
}

inline std::vector<TileRect> field_regions(Size mask, int n_fields) {
  const Lattice lay = field_layout(n_fields);
  require(mask.width >= lay.cols && mask.height >= lay.rows, errc::invalid_input,
          "mask too small for the field partition");
  std::vector<TileRect> out;
  for (int r = 0; r < lay.rows; ++r) {
    const int y0 = static_cast<int>(std::int64_t{r} * mask.height / lay.rows);
    const int y1 = static_cast<int>(std::int64_t{r + 1} * mask.height / lay.rows);
    for (int c = 0; c < lay.cols; ++c) {
      const int x0 = static_cast<int>(std::int64_t{c} * mask.width / lay.cols);
      const int x1 = static_cast<int>(std::int64_t{c + 1} * mask.width / lay.cols);
      out.push_back({x0, y0, x1 - x0, y1 - y0});
    }
  }
  return out;
}

namespace detail {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd population_stats(const std::vector<double>& v) {
  if (v.empty()) return {};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

}  // namespace detail

// Per-field and whole-ROI M/V-Index. `kept` are detections that passed the
// mask filter, `all` every detection above the score threshold. Detection
// coordinates are in roi.resolution pixels; each field uses k = 100 / (A / n).
inline MVReport build_report(const BinaryMask& mask, std::span<const Detection> kept,
                             std::span<const Detection> all, const RoiSpec& roi, double det_threshold) {
  roi.validate();
  require(kept.size() <= all.size(), errc::invalid_input, "more kept than total detections");
  const double mask_scale = roi.resolution.microns_per_pixel() / mask.resolution().microns_per_pixel();

  MVReport rep;
  rep.area_mm2 = roi.area_mm2;
  rep.k = k_coefficient(roi.area_mm2);
  rep.mc_total = static_cast<std::int64_t>(all.size());
  rep.mc_kept = static_cast<std::int64_t>(kept.size());
  rep.det_threshold_used = det_threshold;

  const auto regions = field_regions(mask.size(), roi.n_fields);
  const Lattice lay = field_layout(roi.n_fields);
  std::vector<std::int64_t> mc(regions.size(), 0);
  for (const auto& d : kept) {
    const Pixel p = mask_pixel_of(d, mask_scale);
    require(mask.contains(p.x, p.y), errc::invalid_input, "kept detection lies outside the mask");
    // Field boundaries are floor(i * W / cols); find the column by search.
    int col = 0, row = 0;
    while (col + 1 < lay.cols && regions[col + 1].x <= p.x) ++col;
    while (row + 1 < lay.rows && regions[(row + 1) * lay.cols].y <= p.y) ++row;
    ++mc[row * lay.cols + col];
  }

  const double k_field = k_coefficient(roi.area_mm2 / roi.n_fields);
  std::vector<double> vvs, mvs;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    FieldResult f;
    f.index = static_cast<int>(i);
    f.region = regions[i];
    f.mc = mc[i];
    f.vv_percent = epithelium_fraction(mask, regions[i]);
    if (f.vv_percent > 0.0) {
      f.mv = mv_index_single(f.mc, f.vv_percent, k_field);
      mvs.push_back(*f.mv);
    } else {
      require(f.mc == 0, errc::inconsistent_field, "mitoses counted in a field without epithelium");
    }
    vvs.push_back(f.vv_percent);
    rep.fields.push_back(f);
  }
  const auto vv_stats = detail::population_stats(vvs);
  const auto mv_stats = detail::population_stats(mvs);
  rep.vv_mean = vv_stats.mean;
  rep.vv_std = vv_stats.std;
  rep.mv_mean = mv_stats.mean;
  rep.mv_std = mv_stats.std;
  rep.mv_whole_roi = mv_index_single(rep.mc_kept, epithelium_fraction(mask), rep.k);
  return rep;
}

}  // namespace mvi
