#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mvi/io/formats.hpp"
#include "mvi/io/png.hpp"
#include "mvi/io/report.hpp"
#include "mvi/mvi.hpp"

namespace mvi::cli {
namespace {

namespace fs = std::filesystem;
using io::json;
using io::ordered_json;
using io::sig9;

struct Tiling {
  int tile_size = 0;
  int overlap = 0;
  double microns_per_pixel = 0.0;
};

// Pipeline configuration file. Keys mirror the fields; unknown keys are errors.
struct PipelineConfig {
  std::optional<fs::path> stain_matrix;
  MaskGenParams maskgen;
  Tiling segmentation_tiling{1024, 128, 0.5};
  Tiling detection_tiling{512, 64, 0.25};
  double seg_threshold = 0.5;
  double det_threshold = 0.5;
  double nms_iou = 0.5;
  RoiSpec roi;
  std::optional<double> roi_microns_per_pixel;
  std::uint64_t seed = 0;
};

Tiling tiling_from_json(const json& j, Tiling t, const std::string& what) {
  io::check_keys(j, {"tile_size", "overlap", "microns_per_pixel"}, what);
  if (j.contains("tile_size")) t.tile_size = io::get_as<int>(j, "tile_size", what, errc::invalid_config);
  if (j.contains("overlap")) t.overlap = io::get_as<int>(j, "overlap", what, errc::invalid_config);
  if (j.contains("microns_per_pixel")) {
    t.microns_per_pixel = io::get_as<double>(j, "microns_per_pixel", what, errc::invalid_config);
  }
  require(t.tile_size > 0 && t.overlap >= 0 && t.overlap < t.tile_size, errc::invalid_config,
          what + ": need 0 <= overlap < tile_size");
  require(t.microns_per_pixel > 0.0, errc::invalid_config, what + ": microns_per_pixel must be positive");
  return t;
}

PipelineConfig load_config(const std::optional<fs::path>& path) {
  PipelineConfig c;
  if (!path) return c;
  const json j = io::read_json_file(*path, errc::invalid_config);
  const std::string what = "config '" + path->string() + "'";
  io::check_keys(j,
                 {"stain_matrix", "maskgen", "segmentation_tiling", "detection_tiling", "seg_threshold",
                  "det_threshold", "nms_iou", "roi", "seed"},
                 what);
  auto num = [&](const char* key, double& field) {
    if (j.contains(key)) field = io::get_as<double>(j, key, what, errc::invalid_config);
  };
  if (j.contains("stain_matrix")) {
    c.stain_matrix = io::get_as<std::string>(j, "stain_matrix", what, errc::invalid_config);
  }
  if (j.contains("maskgen")) c.maskgen = io::maskgen_params_from_json(j["maskgen"], what + " maskgen");
  if (j.contains("segmentation_tiling")) {
    c.segmentation_tiling = tiling_from_json(j["segmentation_tiling"], c.segmentation_tiling, what);
  }
  if (j.contains("detection_tiling")) {
    c.detection_tiling = tiling_from_json(j["detection_tiling"], c.detection_tiling, what);
  }
  num("seg_threshold", c.seg_threshold);
  num("det_threshold", c.det_threshold);
  num("nms_iou", c.nms_iou);
  if (j.contains("roi")) {
    const json& r = j["roi"];
    io::check_keys(r, {"area_mm2", "microns_per_pixel", "n_fields"}, what + " roi");
    if (r.contains("area_mm2")) c.roi.area_mm2 = io::get_as<double>(r, "area_mm2", what, errc::invalid_config);
    if (r.contains("n_fields")) c.roi.n_fields = io::get_as<int>(r, "n_fields", what, errc::invalid_config);
    if (r.contains("microns_per_pixel")) {
      c.roi_microns_per_pixel = io::get_as<double>(r, "microns_per_pixel", what, errc::invalid_config);
    }
  }
  if (j.contains("seed")) c.seed = io::get_as<std::uint64_t>(j, "seed", what, errc::invalid_config);
  require(c.seg_threshold >= 0.0 && c.seg_threshold <= 1.0, errc::invalid_config, "seg_threshold outside [0, 1]");
  require(c.det_threshold >= 0.0 && c.det_threshold <= 1.0, errc::invalid_config, "det_threshold outside [0, 1]");
  require(c.nms_iou > 0.0 && c.nms_iou <= 1.0, errc::invalid_config, "nms_iou outside (0, 1]");
  return c;
}

void warn(std::ostream& err, const std::string& code, const std::string& detail) {
  err << ordered_json{{"warning", code}, {"detail", detail}}.dump() << "\n";
}

void emit_json(std::ostream& out, const std::optional<fs::path>& path, const ordered_json& j) {
  const std::string text = j.dump(2) + "\n";
  if (path) {
    io::write_text_file(*path, text);
  } else {
    out << text;
  }
}

bool is_json_path(const fs::path& p) { return p.extension() == ".json"; }

// ---------------------------------------------------------------------------

struct Globals {
  std::optional<fs::path> config;
  int threads = 1;
  std::optional<std::uint64_t> seed;
};

struct MaskgenArgs {
  fs::path ihc, out;
  std::optional<fs::path> stains, params;
  std::string stain_name = "DAB";
  std::vector<int> background{255, 255, 255};
};

int cmd_maskgen(const MaskgenArgs& a, const PipelineConfig& cfg, Parallelism par) {
  const io::RoiManifest manifest = io::load_manifest(a.ihc);
  const MaskGenParams params = a.params ? io::load_maskgen_params(*a.params) : cfg.maskgen;

  StainSetup setup;
  if (a.stains) {
    setup.matrix = io::load_stain_matrix(*a.stains);
  } else if (cfg.stain_matrix) {
    setup.matrix = io::load_stain_matrix(*cfg.stain_matrix);
  }
  setup.target_stain = a.stain_name;
  require(setup.matrix.index_of(setup.target_stain).has_value(), errc::unknown_stain,
          "stain '" + setup.target_stain + "' not in stain matrix");
  require(a.background.size() == 3, errc::invalid_parameter, "--background needs three values");
  for (int i = 0; i < 3; ++i) {
    require(a.background[i] >= 1 && a.background[i] <= 255, errc::invalid_parameter,
            "background intensity must lie in [1, 255]");
    setup.background[i] = static_cast<std::uint8_t>(a.background[i]);
  }

  const InMemoryRoi roi(io::assemble_rgb(manifest));
  const ReferenceMask ref = generate_reference_mask(roi, params, setup, par);
  io::write_mask(a.out, ref.mask);

  ordered_json side;
  side["command"] = "maskgen";
  side["params"] = io::to_json(params);
  side["stains"] = io::to_json(setup.matrix)["stains"];
  side["target_stain"] = setup.target_stain;
  side["background_intensity"] = {setup.background[0], setup.background[1], setup.background[2]};
  side["width_px"] = ref.mask.width();
  side["height_px"] = ref.mask.height();
  side["microns_per_pixel"] = sig9(manifest.resolution.microns_per_pixel());
  side["otsu_threshold"] = ref.map.otsu_threshold;
  side["tiles_total"] = ref.grid.tiles.size();
  side["tiles_selected"] = ref.selected.size();
  side["foreground_percent"] = sig9(epithelium_fraction(ref.mask));
  side["warnings"] = ordered_json::array();
  if (ref.map.no_stain) side["warnings"].push_back("no_stain_detected");
  io::write_text_file(a.out.string() + ".json", side.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------

struct MvindexArgs {
  fs::path roi, seg, dets;
  std::optional<double> seg_mpp, det_threshold;
  std::optional<fs::path> out, overlay;
};

void draw_box(ByteImage& img, const Detection& d, Rgb color, int thickness = 2) {
  const int x0 = static_cast<int>(std::floor(d.x)), y0 = static_cast<int>(std::floor(d.y));
  const int x1 = static_cast<int>(std::ceil(d.x + d.w)) - 1, y1 = static_cast<int>(std::ceil(d.y + d.h)) - 1;
  auto paint = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
    img.at(x, y, 0) = color.r;
    img.at(x, y, 1) = color.g;
    img.at(x, y, 2) = color.b;
  };
  for (int t = 0; t < thickness; ++t) {
    for (int x = x0; x <= x1; ++x) {
      paint(x, y0 + t);
      paint(x, y1 - t);
    }
    for (int y = y0; y <= y1; ++y) {
      paint(x0 + t, y);
      paint(x1 - t, y);
    }
  }
}

int cmd_mvindex(const MvindexArgs& a, const PipelineConfig& cfg, Parallelism par, std::ostream& out,
                std::ostream& err) {
  const io::RoiManifest roi = io::load_manifest(a.roi);
  if (cfg.roi_microns_per_pixel) {
    require(std::abs(*cfg.roi_microns_per_pixel - roi.resolution.microns_per_pixel()) < 1e-9,
            errc::resolution_mismatch, "config roi.microns_per_pixel differs from the ROI manifest");
  }

  // Segmentation mask in its own frame.
  BinaryMask mask;
  if (is_json_path(a.seg)) {
    io::Segmentation seg = io::load_segmentation_manifest(a.seg);
    if (a.seg_mpp) {
      require(std::abs(*a.seg_mpp - seg.resolution.microns_per_pixel()) < 1e-9, errc::resolution_mismatch,
              "--seg-mpp differs from the segmentation manifest");
    }
    mask = seg.is_probability ? stitch_probabilities(seg.probability_tiles, seg.size, cfg.seg_threshold,
                                                     seg.resolution, par)
                              : std::move(seg.mask);
  } else {
    require(fs::exists(a.seg), errc::io_error, "segmentation '" + a.seg.string() + "' not found");
    mask = io::read_mask(a.seg, Resolution(a.seg_mpp.value_or(cfg.segmentation_tiling.microns_per_pixel)));
  }

  // Both rasters must describe the same physical extent, to within one coarse pixel.
  const double roi_mpp = roi.resolution.microns_per_pixel();
  const double seg_mpp = mask.resolution().microns_per_pixel();
  const double tol = std::max(roi_mpp, seg_mpp);
  require(std::abs(mask.width() * seg_mpp - roi.size.width * roi_mpp) <= tol &&
              std::abs(mask.height() * seg_mpp - roi.size.height * roi_mpp) <= tol,
          errc::resolution_mismatch, "segmentation and ROI cover different physical extents");

  const double det_threshold = a.det_threshold.value_or(cfg.det_threshold);
  require(det_threshold >= 0.0 && det_threshold <= 1.0, errc::invalid_parameter,
          "det threshold outside [0, 1]");
  std::vector<TileDetections> groups = io::read_detections(a.dets);
  for (auto& g : groups) {
    const bool tiled = &g != &groups.front();
    if (tiled) {
      g.tile.w = cfg.detection_tiling.tile_size;
      g.tile.h = cfg.detection_tiling.tile_size;
    }
    std::erase_if(g.detections, [&](const Detection& d) { return d.score < det_threshold; });
    if (tiled) {
      for (const auto& d : g.detections) {
        require(d.x >= 0 && d.y >= 0 && d.x + d.w <= g.tile.w && d.y + d.h <= g.tile.h, errc::invalid_input,
                "tile-local detection exceeds its tile");
      }
    }
  }
  const std::vector<Detection> all = fuse_detections(groups, cfg.nms_iou);

  int outside = 0;
  for (const auto& d : all) {
    const double cx = d.center_x(), cy = d.center_y();
    if (cx < 0 || cy < 0 || cx >= roi.size.width || cy >= roi.size.height) ++outside;
  }
  if (outside > 0) {
    warn(err, "detections_outside_roi",
         std::to_string(outside) + " detection(s) centred outside the ROI were rejected");
  }

  const double mask_scale = roi_mpp / seg_mpp;
  const FilterResult filtered = filter_by_mask(all, mask, mask_scale);

  RoiSpec spec = cfg.roi;
  spec.resolution = roi.resolution;
  const MVReport report = build_report(mask, filtered.kept, all, spec, det_threshold);
  emit_json(out, a.out, io::to_json(report));

  if (a.overlay) {
    ByteImage img = io::assemble_rgb(roi);
    // Epithelium in orange, kept boxes green, rejected red.
    for (int y = 0; y < img.height(); ++y) {
      const int my = std::min(mask.height() - 1, static_cast<int>(std::floor(y * mask_scale)));
      for (int x = 0; x < img.width(); ++x) {
        const int mx = std::min(mask.width() - 1, static_cast<int>(std::floor(x * mask_scale)));
        if (!mask.get(mx, my)) continue;
        img.at(x, y, 0) = blend_half(img.at(x, y, 0), 255);
        img.at(x, y, 1) = blend_half(img.at(x, y, 1), 165);
        img.at(x, y, 2) = blend_half(img.at(x, y, 2), 0);
      }
    }
    for (const auto& d : filtered.rejected) draw_box(img, d, kFalsePositive);
    for (const auto& d : filtered.kept) draw_box(img, d, kTruePositive);
    io::write_rgb(*a.overlay, img);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct WeibelArgs {
  fs::path mask;
  int points = kDefaultWeibelPoints;
  std::vector<double> offset;
};

int cmd_weibel(const WeibelArgs& a, std::uint64_t seed, std::ostream& out) {
  const BinaryMask mask = io::read_mask(a.mask);
  WeibelGrid grid = weibel_grid_from_seed(seed, a.points);
  if (!a.offset.empty()) {
    require(a.offset.size() == 2, errc::invalid_parameter, "--offset needs two values");
    grid.offset_x = a.offset[0];
    grid.offset_y = a.offset[1];
  }
  const double fraction = weibel_estimate(mask, grid);
  ordered_json j;
  j["fraction"] = sig9(fraction);
  j["n_points"] = grid.n_points;
  j["offset"] = {sig9(grid.offset_x), sig9(grid.offset_y)};
  out << j.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::optional<fs::path> pred, ref, pred_series, ref_series, out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const bool masks = a.pred || a.ref;
  const bool series = a.pred_series || a.ref_series;
  require(masks || series, errc::invalid_parameter, "eval needs --pred/--ref or --pred-series/--ref-series");
  require(!masks || (a.pred && a.ref), errc::invalid_parameter, "--pred and --ref go together");
  require(!series || (a.pred_series && a.ref_series), errc::invalid_parameter,
          "--pred-series and --ref-series go together");

  ordered_json j{{"iou", nullptr}, {"dice_f1", nullptr}, {"mae", nullptr}, {"pearson_r", nullptr}};
  if (masks) {
    const BinaryMask pred = io::read_mask(*a.pred);
    const BinaryMask ref = io::read_mask(*a.ref);
    j["iou"] = sig9(iou(pred, ref));
    j["dice_f1"] = sig9(dice_f1(pred, ref));
  }
  if (series) {
    const auto p = io::read_series_csv(*a.pred_series);
    const auto r = io::read_series_csv(*a.ref_series);
    require(p.size() == r.size(), errc::series_mismatch, "series have different ids");
    std::map<std::string, double> ref_by_id(r.begin(), r.end());
    std::vector<double> pv, rv;
    for (const auto& [id, v] : p) {
      const auto it = ref_by_id.find(id);
      require(it != ref_by_id.end(), errc::series_mismatch, "id '" + id + "' missing from reference series");
      pv.push_back(v);
      rv.push_back(it->second);
    }
    const PairedSeries s(std::move(pv), std::move(rv));
    j["mae"] = sig9(mae(s));
    try {
      j["pearson_r"] = sig9(pearson_r(s));
    } catch (const Error& e) {
      if (e.code() != errc::undefined_correlation) throw;
      warn(err, errc::undefined_correlation, std::string(e.what()) + "; pearson_r reported as null");
    }
  }
  emit_json(out, a.out, j);
  return 0;
}

// ---------------------------------------------------------------------------

struct OverlayArgs {
  fs::path image, pred, ref, out;
};

int cmd_overlay(const OverlayArgs& a) {
  const ByteImage img = is_json_path(a.image) ? io::assemble_rgb(io::load_manifest(a.image)) : io::read_rgb(a.image);
  const BinaryMask pred = io::read_mask(a.pred);
  const BinaryMask ref = io::read_mask(a.ref);
  io::write_rgb(a.out, render_overlay(img, pred, ref));
  return 0;
}

void report_error(std::ostream& err, const std::string& code, const std::string& detail) {
  err << ordered_json{{"error", code}, {"detail", detail}}.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Volume-corrected mitotic index toolkit", "mvi"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "Pipeline configuration JSON");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "Seed for randomized grid offsets");

  MaskgenArgs mg;
  auto* maskgen = app.add_subcommand("maskgen", "Generate an epithelium reference mask from an IHC ROI");
  maskgen->add_option("--ihc", mg.ihc, "IHC ROI manifest")->required();
  maskgen->add_option("--stains", mg.stains, "Stain matrix JSON (default H-DAB)");
  maskgen->add_option("--params", mg.params, "MaskGenParams JSON");
  maskgen->add_option("--out", mg.out, "Output mask PNG")->required();
  maskgen->add_option("--stain-name", mg.stain_name, "Stain whose channel marks epithelium");
  maskgen->add_option("--background", mg.background, "Background intensity r g b")->expected(3);

  MvindexArgs mv;
  auto* mvindex = app.add_subcommand("mvindex", "Compute the M/V-Index report for an ROI");
  mvindex->add_option("--roi", mv.roi, "ROI manifest (dims, resolution, optional RGB tiles)")->required();
  mvindex->add_option("--seg", mv.seg, "Mask PNG or manifest of probability/mask tiles")->required();
  mvindex->add_option("--seg-mpp", mv.seg_mpp, "Resolution of a mask PNG in um/px");
  mvindex->add_option("--dets", mv.dets, "Detections JSON Lines")->required();
  mvindex->add_option("--det-threshold", mv.det_threshold, "Minimum detection score");
  mvindex->add_option("--out", mv.out, "Report JSON path (default stdout)");
  mvindex->add_option("--overlay", mv.overlay, "Write an RGB overlay PNG");

  WeibelArgs wb;
  auto* weibel = app.add_subcommand("weibel", "Point-grid estimate of the epithelium fraction");
  weibel->add_option("--mask", wb.mask, "Mask PNG")->required();
  weibel->add_option("--points", wb.points, "Number of grid points")->check(CLI::PositiveNumber);
  weibel->add_option("--offset", wb.offset, "Grid offset dx dy in [0, 1)")->expected(2);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Segmentation and agreement metrics");
  eval->add_option("--pred", ev.pred, "Predicted mask PNG");
  eval->add_option("--ref", ev.ref, "Reference mask PNG");
  eval->add_option("--pred-series", ev.pred_series, "Predicted series CSV (id,value)");
  eval->add_option("--ref-series", ev.ref_series, "Reference series CSV (id,value)");
  eval->add_option("--out", ev.out, "Metrics JSON path (default stdout)");

  OverlayArgs ov;
  auto* overlay = app.add_subcommand("overlay", "Render TP/FP/FN overlay");
  overlay->add_option("--image", ov.image, "RGB PNG or ROI manifest")->required();
  overlay->add_option("--pred", ov.pred, "Predicted mask PNG")->required();
  overlay->add_option("--ref", ov.ref, "Reference mask PNG")->required();
  overlay->add_option("--out", ov.out, "Output PNG")->required();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what());
    return 1;
  }

  try {
    const PipelineConfig cfg = load_config(g.config);
    const Parallelism par{g.threads};
    const std::uint64_t seed = g.seed.value_or(cfg.seed);
    if (maskgen->parsed()) return cmd_maskgen(mg, cfg, par);
    if (mvindex->parsed()) return cmd_mvindex(mv, cfg, par, out, err);
    if (weibel->parsed()) return cmd_weibel(wb, seed, out);
    if (eval->parsed()) return cmd_eval(ev, out, err);
    if (overlay->parsed()) return cmd_overlay(ov);
    throw InvariantError("no subcommand dispatched");
  } catch (const Error& e) {
    report_error(err, e.code(), e.what());
    return 1;
  } catch (const InvariantError& e) {
    report_error(err, "internal_invariant", e.what());
    return 2;
  } catch (const std::exception& e) {
    report_error(err, "internal_error", e.what());
    return 2;
  }
}

}  // namespace mvi::cli
