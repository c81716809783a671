#pragma once

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mvi/error.hpp"
#include "mvi/fusion.hpp"
#include "mvi/imaging.hpp"
#include "mvi/io/png.hpp"
#include "mvi/maskgen.hpp"
#include "mvi/stain.hpp"

namespace mvi::io {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Rounds to 9 significant digits (printf rounding, ties to even on the exact
// binary value) so that re-serialization prints at most 9 digits.
inline double sig9(double v) {
  if (!std::isfinite(v) || v == 0.0) return v;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

inline json read_json_file(const fs::path& path, const char* missing_code = errc::io_error) {
  std::ifstream in(path);
  require(in.good(), missing_code, "cannot read '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(errc::invalid_input, "'" + path.string() + "': " + e.what());
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), errc::io_error, "cannot write '" + path.string() + "'");
  out << text;
  require(out.good(), errc::io_error, "failed writing '" + path.string() + "'");
}

// Rejects keys outside `allowed`.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what,
                       const char* code = errc::invalid_config) {
  require(j.is_object(), code, what + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    require(known, code, "unknown key '" + key + "' in " + what);
  }
}

template <typename T>
T get_as(const json& j, const char* key, const std::string& what, const char* code = errc::invalid_input) {
  require(j.contains(key), code, what + " is missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(code, what + ": '" + key + "' has the wrong type");
  }
}

// ---------------------------------------------------------------------------
// ROI manifest: { width_px, height_px, microns_per_pixel, tiles: [{x, y, file}] }
// Tile paths are relative to the manifest's directory.

struct ManifestTile {
  int x = 0;
  int y = 0;
  fs::path file;
};

struct RoiManifest {
  Size size;
  Resolution resolution;
  std::vector<ManifestTile> tiles;
  fs::path base_dir;

  fs::path resolve(const ManifestTile& t) const { return t.file.is_absolute() ? t.file : base_dir / t.file; }
};

inline RoiManifest load_manifest(const fs::path& path) {
  require(fs::exists(path), errc::manifest_not_found, "manifest '" + path.string() + "' not found");
  const json j = read_json_file(path, errc::manifest_not_found);
  const std::string what = "manifest '" + path.string() + "'";
  check_keys(j, {"width_px", "height_px", "microns_per_pixel", "tiles"}, what, errc::invalid_input);

  RoiManifest m;
  m.size = {get_as<int>(j, "width_px", what), get_as<int>(j, "height_px", what)};
  require(m.size.width > 0 && m.size.height > 0, errc::invalid_input, what + " has non-positive dims");
  m.resolution = Resolution(get_as<double>(j, "microns_per_pixel", what));
  m.base_dir = path.parent_path();
  if (j.contains("tiles")) {
    require(j["tiles"].is_array(), errc::invalid_input, what + ": 'tiles' must be an array");
    for (const auto& t : j["tiles"]) {
      check_keys(t, {"x", "y", "file"}, what + " tile", errc::invalid_input);
      m.tiles.push_back({get_as<int>(t, "x", what), get_as<int>(t, "y", what),
                         fs::path(get_as<std::string>(t, "file", what))});
    }
  }
  return m;
}

inline void save_manifest(const fs::path& path, const RoiManifest& m) {
  ordered_json j;
  j["width_px"] = m.size.width;
  j["height_px"] = m.size.height;
  j["microns_per_pixel"] = m.resolution.microns_per_pixel();
  j["tiles"] = ordered_json::array();
  for (const auto& t : m.tiles) {
    j["tiles"].push_back({{"x", t.x}, {"y", t.y}, {"file", t.file.generic_string()}});
  }
  write_text_file(path, j.dump(2) + "\n");
}

// Places RGB tiles into one image; pixels no tile covers stay white.
inline ByteImage assemble_rgb(const RoiManifest& m) {
  ByteImage img = make_rgb(m.size, m.resolution, 255);
  for (const auto& t : m.tiles) {
    const ByteImage tile = read_rgb(m.resolve(t), m.resolution);
    require(TileRect{t.x, t.y, tile.width(), tile.height()}.inside(m.size), errc::invalid_input,
            "tile '" + t.file.string() + "' lies outside the ROI");
    for (int y = 0; y < tile.height(); ++y) {
      const auto src = tile.row(y);
      std::copy(src.begin(), src.end(), img.row(t.y + y).begin() + static_cast<std::ptrdiff_t>(t.x) * 3);
    }
  }
  return img;
}

inline InMemoryRoi load_roi(const fs::path& manifest_path) {
  return InMemoryRoi(assemble_rgb(load_manifest(manifest_path)));
}

// Segmentation input: a manifest of 16-bit probability tiles or of 8-bit mask
// tiles (OR-composed), or a single mask PNG.
struct Segmentation {
  std::vector<ProbabilityTile> probability_tiles;
  BinaryMask mask;
  bool is_probability = false;
  Size size;
  Resolution resolution;
};

inline Segmentation load_segmentation_manifest(const fs::path& path) {
  const RoiManifest m = load_manifest(path);
  Segmentation seg;
  seg.size = m.size;
  seg.resolution = m.resolution;
  seg.mask = BinaryMask(m.size, m.resolution);
  std::optional<bool> sixteen;
  for (const auto& t : m.tiles) {
    const RawPng raw = read_png(m.resolve(t));
    require(raw.channels == 1, errc::invalid_input, "segmentation tile '" + t.file.string() + "' must be gray");
    const bool is16 = raw.bit_depth == 16;
    require(!sixteen || *sixteen == is16, errc::invalid_input,
            "segmentation manifest mixes 8-bit and 16-bit tiles");
    sixteen = is16;
    const TileRect rect{t.x, t.y, raw.size.width, raw.size.height};
    require(rect.inside(m.size), errc::invalid_input, "tile '" + t.file.string() + "' lies outside the ROI");
    if (is16) {
      seg.probability_tiles.emplace_back(rect, raw.samples);
    } else {
      for (int y = 0; y < rect.h; ++y) {
        auto dst = seg.mask.row(rect.y + y).subspan(static_cast<std::size_t>(rect.x));
        for (int x = 0; x < rect.w; ++x) dst[x] |= raw.samples[static_cast<std::size_t>(y) * rect.w + x] >= 128;
      }
    }
  }
  seg.is_probability = sixteen.value_or(false);
  return seg;
}

inline void write_probability_tile(const fs::path& path, const ProbabilityTile& t) {
  write_png(path, Size{t.rect().w, t.rect().h}, 1, 16, t.quantized());
}

// ---------------------------------------------------------------------------
// Detections, JSON Lines: {"x", "y", "w", "h", "score"} in ROI level-0 pixels.
// Optional integer "tile_x"/"tile_y" mark tile-local boxes from a tiled
// detector; those are grouped per tile origin for fusion.

inline std::vector<TileDetections> read_detections(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), errc::io_error, "cannot read detections '" + path.string() + "'");
  std::vector<TileDetections> groups{{TileRect{}, {}}};
  std::map<std::pair<int, int>, std::size_t> index;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    const std::string what = path.string() + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(errc::invalid_input, what + ": " + e.what());
    }
    check_keys(j, {"x", "y", "w", "h", "score", "tile_x", "tile_y"}, what, errc::invalid_input);
    Detection d{get_as<double>(j, "x", what), get_as<double>(j, "y", what), get_as<double>(j, "w", what),
                get_as<double>(j, "h", what), get_as<double>(j, "score", what)};
    validate(d);
    if (j.contains("tile_x") || j.contains("tile_y")) {
      const std::pair key{get_as<int>(j, "tile_x", what), get_as<int>(j, "tile_y", what)};
      auto [it, fresh] = index.try_emplace(key, groups.size());
      if (fresh) groups.push_back({TileRect{key.first, key.second, 0, 0}, {}});
      groups[it->second].detections.push_back(d);
    } else {
      groups.front().detections.push_back(d);
    }
  }
  return groups;
}

inline void write_detections(const fs::path& path, const std::vector<Detection>& dets) {
  std::string text;
  for (const auto& d : dets) {
    ordered_json j{{"x", d.x}, {"y", d.y}, {"w", d.w}, {"h", d.h}, {"score", d.score}};
    text += j.dump() + "\n";
  }
  write_text_file(path, text);
}

// ---------------------------------------------------------------------------
// Stain matrix: { "stains": [{ "name", "od_rgb": [r, g, b] }, ...] }

inline StainMatrix stain_matrix_from_json(const json& j, const std::string& what) {
  check_keys(j, {"stains"}, what, errc::invalid_config);
  require(j.contains("stains") && j["stains"].is_array(), errc::invalid_config, what + " needs a 'stains' array");
  std::vector<StainVector> stains;
  for (const auto& s : j["stains"]) {
    check_keys(s, {"name", "od_rgb"}, what + " stain", errc::invalid_config);
    const auto v = get_as<std::vector<double>>(s, "od_rgb", what, errc::invalid_config);
    require(v.size() == 3, errc::invalid_config, what + ": od_rgb needs 3 components");
    stains.push_back({get_as<std::string>(s, "name", what, errc::invalid_config), {v[0], v[1], v[2]}});
  }
  return StainMatrix(std::move(stains));
}

inline StainMatrix load_stain_matrix(const fs::path& path) {
  return stain_matrix_from_json(read_json_file(path), "stain file '" + path.string() + "'");
}

inline ordered_json to_json(const StainMatrix& m) {
  ordered_json j;
  j["stains"] = ordered_json::array();
  for (const auto& s : m.stains()) {
    j["stains"].push_back({{"name", s.name}, {"od_rgb", {sig9(s.od_rgb[0]), sig9(s.od_rgb[1]), sig9(s.od_rgb[2])}}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// MaskGenParams: keys mirror the struct fields; missing keys keep defaults.

inline MaskGenParams maskgen_params_from_json(const json& j, const std::string& what) {
  check_keys(j,
             {"lowres_microns_per_pixel", "blur_sigma_px", "min_tile_fraction", "fullres_threshold",
              "open_radius_px", "close_radius_px", "tile_size", "overlap"},
             what);
  MaskGenParams p;
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) field = get_as<std::decay_t<decltype(field)>>(j, key, what, errc::invalid_config);
  };
  opt("lowres_microns_per_pixel", p.lowres_microns_per_pixel);
  opt("blur_sigma_px", p.blur_sigma_px);
  opt("min_tile_fraction", p.min_tile_fraction);
  opt("fullres_threshold", p.fullres_threshold);
  opt("open_radius_px", p.open_radius_px);
  opt("close_radius_px", p.close_radius_px);
  opt("tile_size", p.tile_size);
  opt("overlap", p.overlap);
  p.validate();
  return p;
}

inline MaskGenParams load_maskgen_params(const fs::path& path) {
  return maskgen_params_from_json(read_json_file(path), "params file '" + path.string() + "'");
}

inline ordered_json to_json(const MaskGenParams& p) {
  return ordered_json{{"lowres_microns_per_pixel", sig9(p.lowres_microns_per_pixel)},
                      {"blur_sigma_px", sig9(p.blur_sigma_px)},
                      {"min_tile_fraction", sig9(p.min_tile_fraction)},
                      {"fullres_threshold", sig9(p.fullres_threshold)},
                      {"open_radius_px", p.open_radius_px},
                      {"close_radius_px", p.close_radius_px},
                      {"tile_size", p.tile_size},
                      {"overlap", p.overlap}};
}

// ---------------------------------------------------------------------------
// Series CSV with header "id,value".

inline std::vector<std::pair<std::string, double>> read_series_csv(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), errc::io_error, "cannot read series '" + path.string() + "'");
  auto trim = [](std::string s) {
    s.erase(0, s.find_first_not_of(" \t\r"));
    s.erase(s.find_last_not_of(" \t\r") + 1);
    return s;
  };
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && trim(line) == "id,value", errc::invalid_input,
          "series '" + path.string() + "' must start with header 'id,value'");
  std::vector<std::pair<std::string, double>> rows;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    require(comma != std::string::npos, errc::invalid_input, "malformed series row '" + line + "'");
    std::string id = trim(line.substr(0, comma));
    const std::string value = trim(line.substr(comma + 1));
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    require(!value.empty() && end == value.c_str() + value.size() && std::isfinite(v), errc::invalid_input,
            "non-numeric value in series row '" + line + "'");
    require(seen.insert(id).second, errc::invalid_input, "duplicate id '" + id + "' in series");
    rows.emplace_back(std::move(id), v);
  }
  return rows;
}

}  // namespace mvi::io
