#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <tuple>
#include <vector>

#include "mvi/error.hpp"
#include "mvi/imaging.hpp"
#include "mvi/parallel.hpp"

namespace mvi {

// Epithelium probabilities for one segmentation window, quantized to 1/65535
// steps (the resolution of the 16-bit tile files). Quantizing up front keeps
// the overlap mean in exact integer arithmetic.
class ProbabilityTile {
 public:
  static constexpr std::uint32_t kScale = 65535;

  ProbabilityTile() = default;

  ProbabilityTile(TileRect rect, std::vector<std::uint16_t> quantized)
      : rect_(rect), q_(std::move(quantized)) {
    require(rect.w > 0 && rect.h > 0, errc::invalid_input, "probability tile must be non-empty");
    require(q_.size() == static_cast<std::size_t>(rect.area()), errc::invalid_input,
            "probability tile values do not match its rect");
  }

  static ProbabilityTile from_unit(TileRect rect, std::span<const double> values) {
    std::vector<std::uint16_t> q(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      require(values[i] >= 0.0 && values[i] <= 1.0, errc::invalid_input,
              "probabilities must lie in [0, 1]");
      q[i] = static_cast<std::uint16_t>(std::lround(values[i] * kScale));
    }
    return ProbabilityTile(rect, std::move(q));
  }

  const TileRect& rect() const noexcept { return rect_; }
  std::span<const std::uint16_t> quantized() const noexcept { return q_; }
  double probability(int x, int y) const noexcept {
    return q_[static_cast<std::size_t>(y) * rect_.w + x] / static_cast<double>(kScale);
  }

 private:
  TileRect rect_{};
  std::vector<std::uint16_t> q_;
};

// Mean probability over covering tiles, thresholded with >=. Pixels no tile
// covers have probability 0.
inline BinaryMask stitch_probabilities(std::span<const ProbabilityTile> tiles, Size out_dims,
                                       double threshold = 0.5, Resolution resolution = {},
                                       Parallelism par = {}) {
  require(out_dims.width > 0 && out_dims.height > 0, errc::invalid_parameter,
          "output dims must be positive");
  require(threshold >= 0.0 && threshold <= 1.0, errc::invalid_parameter,
          "threshold must lie in [0, 1]");
  for (const auto& t : tiles) {
    require(t.rect().inside(out_dims), errc::invalid_input, "probability tile out of bounds");
  }
  // mean >= threshold  <=>  sum_q >= threshold * 65535 * count
  const double scaled = threshold * ProbabilityTile::kScale;

  BinaryMask mask(out_dims, resolution);
  parallel_for(static_cast<std::size_t>(out_dims.height), par, [&](std::size_t yu) {
    const int y = static_cast<int>(yu);
    std::vector<std::uint64_t> sum(out_dims.width, 0);
    std::vector<std::uint32_t> count(out_dims.width, 0);
    for (const auto& t : tiles) {
      const TileRect& r = t.rect();
      if (y < r.y || y >= r.y + r.h) continue;
      const auto src = t.quantized().subspan(static_cast<std::size_t>(y - r.y) * r.w, r.w);
      for (int x = 0; x < r.w; ++x) {
        sum[r.x + x] += src[x];
        ++count[r.x + x];
      }
    }
    auto dst = mask.row(y);
    for (int x = 0; x < out_dims.width; ++x) {
      dst[x] = static_cast<double>(sum[x]) >= scaled * count[x] && count[x] > 0 ? 1 : 0;
    }
    // Uncovered pixels are probability 0, which passes only a zero threshold.
    if (threshold == 0.0) std::fill(dst.begin(), dst.end(), std::uint8_t{1});
  });
  return mask;
}

// One candidate mitotic figure: axis-aligned box with confidence.
struct Detection {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  double score = 0.0;

  double center_x() const noexcept { return x + w / 2.0; }
  double center_y() const noexcept { return y + h / 2.0; }
  friend bool operator==(const Detection&, const Detection&) = default;
};

inline void validate(const Detection& d) {
  require(std::isfinite(d.x) && std::isfinite(d.y), errc::invalid_input, "detection position not finite");
  require(d.w > 0.0 && d.h > 0.0, errc::invalid_input, "detection boxes need positive width and height");
  require(d.score >= 0.0 && d.score <= 1.0, errc::invalid_input, "detection score must lie in [0, 1]");
}

inline double box_iou(const Detection& a, const Detection& b) {
  const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

struct TileDetections {
  TileRect tile;
  std::vector<Detection> detections;  // tile-local coordinates
};

// Sort order used by NMS: score descending, then (y, x, w, h) ascending.
inline bool nms_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.y, a.x, a.w, a.h) < std::tie(b.y, b.x, b.w, b.h);
}

// Greedy non-maximum suppression over already-global boxes.
inline std::vector<Detection> non_max_suppression(std::vector<Detection> boxes, double iou_threshold) {
  require(iou_threshold > 0.0 && iou_threshold <= 1.0, errc::invalid_parameter,
          "NMS IoU threshold must lie in (0, 1]");
  std::sort(boxes.begin(), boxes.end(), nms_before);
  std::vector<Detection> kept;
  for (const auto& d : boxes) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return box_iou(d, k) >= iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

// Translates tile-local boxes into the ROI frame and de-duplicates them.
inline std::vector<Detection> fuse_detections(std::span<const TileDetections> per_tile,
                                              double iou_threshold = 0.5) {
  std::vector<Detection> global;
  for (const auto& td : per_tile) {
    for (Detection d : td.detections) {
      validate(d);
      d.x += td.tile.x;
      d.y += td.tile.y;
      global.push_back(d);
    }
  }
  return non_max_suppression(std::move(global), iou_threshold);
}

struct FilterResult {
  std::vector<Detection> kept;
  std::vector<Detection> rejected;
};

// Mask pixel holding a detection's centre: floor(centre * mask_scale).
inline Pixel mask_pixel_of(const Detection& d, double mask_scale) {
  return {static_cast<int>(std::floor(d.center_x() * mask_scale)),
          static_cast<int>(std::floor(d.center_y() * mask_scale))};
}

// Keeps detections whose centre lands on mask foreground; centres outside the
// mask are rejected. Input order is preserved in both lists.
inline FilterResult filter_by_mask(std::span<const Detection> dets, const BinaryMask& mask,
                                   double mask_scale) {
  require(std::isfinite(mask_scale) && mask_scale > 0.0, errc::invalid_parameter,
          "mask_scale must be positive");
  FilterResult out;
  for (const auto& d : dets) {
    const Pixel p = mask_pixel_of(d, mask_scale);
    const bool inside = mask.contains(p.x, p.y) && mask.get(p.x, p.y);
    (inside ? out.kept : out.rejected).push_back(d);
  }
  return out;
}

}  // namespace mvi
