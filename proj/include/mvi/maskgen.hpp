#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <vector>

#include "mvi/error.hpp"
#include "mvi/imaging.hpp"
#include "mvi/morphology.hpp"
#include "mvi/parallel.hpp"
#include "mvi/stain.hpp"

namespace mvi {

// Tunables of the IHC reference-mask pipeline. Radii and tile geometry are in
// full-resolution pixels.
struct MaskGenParams {
  double lowres_microns_per_pixel = 8.0;
  double blur_sigma_px = 2.0;
  double min_tile_fraction = 0.05;
  double fullres_threshold = 0.15;
  int open_radius_px = 4;
  int close_radius_px = 30;
  int tile_size = 1024;
  int overlap = 128;

  void validate() const {
    require(std::isfinite(lowres_microns_per_pixel) && lowres_microns_per_pixel > 0.0,
            errc::invalid_parameter, "lowres_microns_per_pixel must be positive");
    require(std::isfinite(blur_sigma_px) && blur_sigma_px >= 0.0, errc::invalid_parameter,
            "blur_sigma_px must be non-negative");
    require(min_tile_fraction > 0.0 && min_tile_fraction < 1.0, errc::invalid_parameter,
            "min_tile_fraction must lie in (0, 1)");
    require(fullres_threshold > 0.0 && fullres_threshold < 1.0, errc::invalid_parameter,
            "fullres_threshold must lie in (0, 1)");
    require(open_radius_px >= 0 && close_radius_px >= 0, errc::invalid_parameter,
            "kernel radii must be non-negative");
    require(tile_size > 0 && overlap >= 0 && overlap < tile_size, errc::invalid_parameter,
            "tile geometry must satisfy 0 <= overlap < tile_size");
  }

  friend bool operator==(const MaskGenParams&, const MaskGenParams&) = default;
};

struct IhcMap {
  BinaryMask mask;
  std::uint8_t otsu_threshold = 0;
  bool no_stain = false;  // blank input; mask is empty
};

// Closing radius at low resolution, never below one pixel.
inline int lowres_close_radius(const MaskGenParams& p, Resolution fullres) {
  const double r = p.close_radius_px * fullres.microns_per_pixel() / p.lowres_microns_per_pixel;
  return std::max(1, static_cast<int>(std::lround(r)));
}

// Low-resolution IHC map: stain channel -> blur -> Otsu -> closing.
//
// A constant blurred channel has no Otsu split. It then becomes full
// foreground if the constant reaches fullres_threshold (uniformly stained),
// otherwise an empty mask flagged no_stain.
inline IhcMap build_ihc_map(const ByteImage& ihc_lowres, const MaskGenParams& p,
                            const StainSetup& stains, Resolution fullres) {
  p.validate();
  const FloatImage channel = stains.target_channel(ihc_lowres);
  const ByteImage gray = to_bytes(gaussian_blur(channel, p.blur_sigma_px));
  const OtsuResult otsu_result = otsu(gray);

  IhcMap result;
  result.otsu_threshold = otsu_result.threshold;
  if (otsu_result.degenerate) {
    const bool stained = otsu_result.threshold >= std::lround(p.fullres_threshold * 255.0);
    result.mask = BinaryMask(gray.size(), gray.resolution(), stained);
    result.no_stain = !stained;
    return result;
  }
  result.mask = binary_morph(threshold_above(gray, otsu_result.threshold), MorphOp::close,
                             DiskKernel{lowres_close_radius(p, fullres)});
  return result;
}

// Tiles whose foreground share is at least min_fraction. Grid rects are in map
// coordinates; order follows the grid.
inline std::vector<TileRect> select_patches(const BinaryMask& map, const std::vector<TileRect>& tiles,
                                            double min_fraction) {
  std::vector<TileRect> selected;
  for (const auto& t : tiles) {
    require(t.inside(map.size()), errc::invalid_input, "tile outside IHC map");
    if (t.area() == 0) continue;
    std::int64_t fg = 0;
    for (int y = t.y; y < t.y + t.h; ++y) {
      const auto row = map.row(y).subspan(static_cast<std::size_t>(t.x), static_cast<std::size_t>(t.w));
      fg += std::count(row.begin(), row.end(), std::uint8_t{1});
    }
    if (static_cast<double>(fg) >= min_fraction * static_cast<double>(t.area())) selected.push_back(t);
  }
  return selected;
}

inline std::vector<TileRect> select_patches(const BinaryMask& map, const TileGrid& grid,
                                            double min_fraction) {
  return select_patches(map, grid.tiles, min_fraction);
}

// Full-resolution patch mask: stain channel >= threshold -> opening -> closing.
inline BinaryMask refine_patch(const ByteImage& ihc_patch, const MaskGenParams& p,
                               const StainSetup& stains, Parallelism par = {}) {
  p.validate();
  const FloatImage channel = stains.target_channel(ihc_patch, par);
  BinaryMask mask(channel.size(), channel.resolution());
  const auto src = channel.data();
  auto dst = mask.bits();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] >= p.fullres_threshold ? 1 : 0;
  mask = binary_morph(mask, MorphOp::open, DiskKernel{p.open_radius_px}, par);
  return binary_morph(mask, MorphOp::close, DiskKernel{p.close_radius_px}, par);
}

// A readable region of interest at full resolution.
template <typename S>
concept RoiSource = requires(const S& s, TileRect r, Resolution res) {
  { s.size() } -> std::convertible_to<Size>;
  { s.resolution() } -> std::convertible_to<Resolution>;
  { s.read_region(r) } -> std::convertible_to<ByteImage>;
  { s.read_lowres(res) } -> std::convertible_to<ByteImage>;
};

// ROI held entirely in memory.
class InMemoryRoi {
 public:
  explicit InMemoryRoi(ByteImage rgb) : rgb_(std::move(rgb)) {
    require(rgb_.channels() == 3, errc::invalid_input, "ROI image must be RGB");
  }
  Size size() const { return rgb_.size(); }
  Resolution resolution() const { return rgb_.resolution(); }
  ByteImage read_region(TileRect r) const { return crop(rgb_, r); }
  ByteImage read_lowres(Resolution target) const { return downsample_area(rgb_, target); }
  const ByteImage& image() const { return rgb_; }

 private:
  ByteImage rgb_;
};

// Full-resolution tile rect expressed in low-res map pixels (outward rounding).
inline TileRect to_map_rect(const TileRect& t, Size full, Size map) {
  const double sx = static_cast<double>(map.width) / full.width;
  const double sy = static_cast<double>(map.height) / full.height;
  const int x0 = std::clamp(static_cast<int>(std::floor(t.x * sx)), 0, map.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(t.y * sy)), 0, map.height - 1);
  const int x1 = std::clamp(static_cast<int>(std::ceil((t.x + t.w) * sx)), x0 + 1, map.width);
  const int y1 = std::clamp(static_cast<int>(std::ceil((t.y + t.h) * sy)), y0 + 1, map.height);
  return {x0, y0, x1 - x0, y1 - y0};
}

struct ReferenceMask {
  BinaryMask mask;
  IhcMap map;
  TileGrid grid;
  std::vector<TileRect> selected;  // full-resolution rects
};

// Whole pipeline: low-res map, tile selection, per-tile refinement, OR-stitch.
// Tiles are refined in parallel; the OR-reduce runs in grid order, and OR is
// order-free anyway, so the output does not depend on the thread count.
template <RoiSource Source>
ReferenceMask generate_reference_mask(const Source& roi, const MaskGenParams& p,
                                      const StainSetup& stains, Parallelism par = {}) {
  p.validate();
  ReferenceMask out;
  const Size full = roi.size();
  out.map = build_ihc_map(roi.read_lowres(Resolution(p.lowres_microns_per_pixel)), p, stains,
                          roi.resolution());
  out.grid = make_tile_grid(full, p.tile_size, p.overlap);
  out.mask = BinaryMask(full, roi.resolution());

  for (const auto& t : out.grid.tiles) {
    const TileRect m = to_map_rect(t, full, out.map.mask.size());
    if (!select_patches(out.map.mask, std::vector<TileRect>{m}, p.min_tile_fraction).empty()) {
      out.selected.push_back(t);
    }
  }

  std::vector<BinaryMask> refined(out.selected.size());
  parallel_for(out.selected.size(), par, [&](std::size_t i) {
    refined[i] = refine_patch(roi.read_region(out.selected[i]), p, stains);
  });
  for (std::size_t i = 0; i < refined.size(); ++i) {
    const TileRect& t = out.selected[i];
    for (int y = 0; y < t.h; ++y) {
      const auto src = refined[i].row(y);
      auto dst = out.mask.row(t.y + y).subspan(static_cast<std::size_t>(t.x));
      for (int x = 0; x < t.w; ++x) dst[x] |= src[x];
    }
  }
  return out;
}

}  // namespace mvi
