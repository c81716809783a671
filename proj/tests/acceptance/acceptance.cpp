// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "mvi/io/formats.hpp"
#include "mvi/mvi.hpp"
#include "support/oracles.hpp"
#include "support/phantom.hpp"
#include "support/tempdir.hpp"

namespace {

using namespace mvi;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Outcome coefficient() {
  const double k = k_coefficient(2.37);
  return {std::abs(k - 42.194092827) <= 1e-9, fmt("k(2.37) = %.12f", k)};
}

Outcome units() {
  const double k = k_coefficient(2.37);
  bool ok = true;
  for (std::int64_t mc : {0, 1, 24, 1000}) {
    const double want = static_cast<double>(mc) / 2.37;
    ok &= std::abs(mv_index_single(mc, 100.0, k) - want) <= 1e-12 * std::max(1.0, want);
  }
  return {ok, fmt("mv(24, 100%%, k) = %.12f", mv_index_single(24, 100.0, k))};
}

Outcome otsu_equivalence() {
  std::mt19937_64 rng(3);
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    ByteImage img({32, 32}, 1, Resolution{});
    // Mix of full-range and narrow-range images so ties and sparse histograms occur.
    const int lo = static_cast<int>(rng() % 256);
    const int span = 1 + static_cast<int>(rng() % (i % 3 == 0 ? 4 : 256 - lo));
    for (auto& p : img.data()) p = static_cast<std::uint8_t>(std::min(255, lo + static_cast<int>(rng() % span)));
    mismatches += otsu_threshold(img) != oracle::otsu(img);
  }
  return {mismatches == 0, fmt("%.0f mismatches in 1000 images", mismatches)};
}

Outcome morphology_properties() {
  std::mt19937_64 rng(4);
  int failures = 0;
  for (int i = 0; i < 500; ++i) {
    const BinaryMask m = oracle::random_mask(rng, {32, 32}, 0.2 + 0.6 * (i % 5) / 4.0);
    for (int r : {1, 2}) {
      const DiskKernel k{r};
      const BinaryMask d = binary_morph(m, MorphOp::dilate, k);
      const BinaryMask dual = oracle::complement(binary_morph(oracle::complement(m), MorphOp::erode, k));
      // Away from the border, where the background-outside convention does not apply.
      for (int y = r; y < 32 - r; ++y) {
        for (int x = r; x < 32 - r; ++x) failures += d.get(x, y) != dual.get(x, y);
      }
      const BinaryMask o = binary_morph(m, MorphOp::open, k), c = binary_morph(m, MorphOp::close, k);
      failures += !(binary_morph(o, MorphOp::open, k) == o);
      failures += !(binary_morph(c, MorphOp::close, k) == c);
      BinaryMask bigger = m;
      for (auto& b : bigger.bits()) b |= static_cast<std::uint8_t>(rng() % 4 == 0);
      const BinaryMask db = binary_morph(bigger, MorphOp::dilate, k), e = binary_morph(m, MorphOp::erode, k),
                       eb = binary_morph(bigger, MorphOp::erode, k);
      for (std::size_t j = 0; j < db.bits().size(); ++j) {
        failures += d.bits()[j] > db.bits()[j];
        failures += e.bits()[j] > eb.bits()[j];
        failures += o.bits()[j] > m.bits()[j];
      }
      // Closing is extensive only where the disk stays inside the mask, since
      // the final erosion sees background beyond the border.
      for (int y = r; y < 32 - r; ++y) {
        for (int x = r; x < 32 - r; ++x) failures += m.get(x, y) && !c.get(x, y);
      }
    }
  }
  return {failures == 0, fmt("%.0f violations over 500 masks, r in {1, 2}", failures)};
}

Outcome deconvolution_round_trip() {
  const StainMatrix m = StainMatrix::h_dab();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> c(0.0, 3.0);
  std::vector<double> od, truth;
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> conc{c(rng), c(rng)};
    const auto v = m.compose(conc);
    od.insert(od.end(), v.begin(), v.end());
    truth.insert(truth.end(), conc.begin(), conc.end());
  }
  const auto out = deconvolve(OdImage(Size{1000, 1}, 3, Resolution{}, od), m);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    for (int s = 0; s < 2; ++s) worst = std::max(worst, std::abs(out.values.at(i, 0, s) - truth[2 * i + s]));
  }
  return {worst < 1e-6, fmt("max error %.3g", worst)};
}

Outcome maskgen_fidelity() {
  const MaskGenParams p;
  const StainSetup stains;
  double worst = 1.0, pipeline_s = 0.0;
  int blobs = 0;
  for (int i = 0; i < 10; ++i) {
    const auto ph = phantom::make_ihc_phantom(1000 + i, {2048, 2048}, p);
    blobs += static_cast<int>(ph.blobs.size());
    const InMemoryRoi roi(ph.rgb);
    const auto t0 = Clock::now();
    const ReferenceMask out = generate_reference_mask(roi, p, stains, Parallelism{1});
    pipeline_s += seconds_since(t0);
    worst = std::min(worst, iou(out.mask, ph.truth));
  }
  return {worst >= 0.9 && pipeline_s < 60.0,
          fmt("min IoU %.4f over 10 phantoms (%.0f blobs), %.1f s single-threaded", worst, blobs, pipeline_s)};
}

Outcome fusion_invariance() {
  const auto t0 = Clock::now();
  const Size dims{2500, 2100};
  std::optional<BinaryMask> reference;
  bool same = true;
  int fused_ok = 0, grids = 0;
  for (int tile : {256, 512, 1024}) {
    for (int overlap : {0, 64, 128}) {
      const TileGrid grid = make_tile_grid(dims, tile, overlap);
      std::vector<ProbabilityTile> tiles;
      for (const auto& r : grid.tiles) {
        std::vector<double> v;
        v.reserve(static_cast<std::size_t>(r.area()));
        for (int y = r.y; y < r.y + r.h; ++y) {
          for (int x = r.x; x < r.x + r.w; ++x) v.push_back(phantom::probability_field(x, y));
        }
        tiles.push_back(ProbabilityTile::from_unit(r, v));
      }
      const BinaryMask m = stitch_probabilities(tiles, dims);
      if (!reference) reference = m;
      same &= m == *reference;
      if (overlap == 0) continue;

      // A box in the corner where four tiles overlap, reported by each of them.
      const int stride = tile - overlap;
      const Detection truth{stride + 4.0, stride + 6.0, std::min(41, overlap - 10) * 1.0,
                            std::min(37, overlap - 10) * 1.0, 0.91};
      std::vector<TileDetections> dets;
      int reporting = 0;
      for (const auto& r : grid.tiles) {
        if (truth.x >= r.x && truth.y >= r.y && truth.x + truth.w <= r.x + r.w && truth.y + truth.h <= r.y + r.h) {
          dets.push_back({r, {{truth.x - r.x, truth.y - r.y, truth.w, truth.h, truth.score}}});
          ++reporting;
        }
      }
      const auto fused = fuse_detections(dets);
      fused_ok += reporting == 4 && fused.size() == 1 && fused[0] == truth;
      ++grids;
    }
  }
  const double secs = seconds_since(t0);
  return {same && fused_ok == grids && secs < 10.0,
          std::string("masks identical over 9 grids: ") + (same ? "yes" : "no") +
              fmt("; overlap box fused once on %.0f/%.0f grids; %.1f s", fused_ok, grids, secs)};
}

BinaryMask blob_mask(std::mt19937_64& rng, Size s, double target) {
  BinaryMask m(s, Resolution{});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (epithelium_fraction(m) < 100.0 * target) {
    const double cx = u(rng) * s.width, cy = u(rng) * s.height, r = 6 + 30 * u(rng);
    for (int y = std::max(0, static_cast<int>(cy - r)); y < std::min(s.height, static_cast<int>(cy + r) + 1); ++y) {
      for (int x = std::max(0, static_cast<int>(cx - r)); x < std::min(s.width, static_cast<int>(cx + r) + 1); ++x) {
        if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r) m.set(x, y);
      }
    }
  }
  return m;
}

Outcome weibel_unbiased() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(8);
  bool ok = true;
  std::string detail;
  for (double target : {0.1, 0.3, 0.5}) {
    const BinaryMask m = blob_mask(rng, {960, 720}, target);
    const double truth = epithelium_fraction(m) / 100.0;
    const double bound = 3.0 * std::sqrt(truth * (1 - truth) / 432.0);
    double sum = 0.0;
    int within = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      const double e = weibel_estimate(m, weibel_grid_from_seed(seed));
      sum += e;
      within += std::abs(e - truth) <= bound;
    }
    const double bias = sum / 1000.0 - truth;
    ok &= std::abs(bias) <= 0.01 && within >= 990;
    detail += fmt("p=%.3f bias %+.4f within-3sd %.1f%%; ", truth, bias, within / 10.0);
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 10.0, detail + fmt("%.1f s", secs)};
}

Outcome metrics_oracles() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0), v(0.0, 60.0);
  int bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const BinaryMask a = oracle::random_mask(rng, {16, 16}, u(rng));
    const BinaryMask b = oracle::random_mask(rng, {16, 16}, u(rng));
    const double j = iou(a, b), d = dice_f1(a, b);
    bad += j != oracle::iou(a, b);
    bad += std::abs(d - oracle::dice(a, b)) > 1e-12;
    bad += std::abs(d - 2 * j / (1 + j)) > 1e-12;

    const std::size_t n = 2 + rng() % 40;
    std::vector<double> p(n), r(n);
    for (std::size_t k = 0; k < n; ++k) {
      r[k] = v(rng);
      p[k] = 0.6 * r[k] + 0.4 * v(rng);
    }
    const PairedSeries s(p, r);
    bad += std::abs(mae(s) - oracle::mae(p, r)) > 1e-12;
    bad += std::abs(pearson_r(s) - oracle::pearson(p, r)) > 1e-12;
  }
  return {bad == 0, fmt("%.0f mismatches over 1000 mask pairs and 1000 series", bad)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  testing::TempDir dir;
  const Size roi{6158, 6158};
  const Size seg{3079, 3079};

  io::save_manifest(dir / "roi.json", io::RoiManifest{roi, kDetectionResolution, {}, dir.path()});

  io::RoiManifest segm{seg, kSegmentationResolution, {}, dir.path()};
  const TileGrid sgrid = make_tile_grid(seg, 1024, 128);
  for (std::size_t i = 0; i < sgrid.tiles.size(); ++i) {
    const TileRect& r = sgrid.tiles[i];
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(r.area()));
    for (int y = r.y; y < r.y + r.h; ++y) {
      for (int x = r.x; x < r.x + r.w; ++x) v.push_back(phantom::probability_field(x, y));
    }
    const std::string name = "seg_" + std::to_string(i) + ".png";
    io::write_probability_tile(dir / name, ProbabilityTile::from_unit(r, v));
    segm.tiles.push_back({r.x, r.y, name});
  }
  io::save_manifest(dir / "seg.json", segm);

  // Detector output on the 512/64 grid: every box is reported by each tile that holds it.
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> pos(0.0, roi.width - 60.0), sz(20.0, 50.0), sc(0.3, 1.0);
  const TileGrid dgrid = make_tile_grid(roi, 512, 64);
  std::string lines;
  for (int i = 0; i < 600; ++i) {
    const Detection d{std::floor(pos(rng)), std::floor(pos(rng)), std::floor(sz(rng)), std::floor(sz(rng)),
                      std::round(sc(rng) * 1000) / 1000};
    for (const auto& t : dgrid.tiles) {
      if (d.x < t.x || d.y < t.y || d.x + d.w > t.x + t.w || d.y + d.h > t.y + t.h) continue;
      io::ordered_json j{{"x", d.x - t.x}, {"y", d.y - t.y}, {"w", d.w}, {"h", d.h}, {"score", d.score},
                         {"tile_x", t.x}, {"tile_y", t.y}};
      lines += j.dump() + "\n";
    }
  }
  io::write_text_file(dir / "dets.jsonl", lines);

  auto run = [&](const std::string& threads, const std::string& out) {
    std::ostringstream o, e;
    const std::vector<std::string> args{"mvi", "--threads", threads, "mvindex", "--roi", (dir / "roi.json").string(),
                                        "--seg", (dir / "seg.json").string(), "--dets", (dir / "dets.jsonl").string(),
                                        "--out", (dir / out).string()};
    const auto t0 = Clock::now();
    const int code = cli::run(args, o, e);
    return std::pair{code, seconds_since(t0)};
  };
  const auto [c1, t1] = run("1", "r1.json");
  const auto [c2, t2] = run("1", "r2.json");
  const auto [c8, t8] = run("8", "r8.json");
  const std::string a = slurp(dir / "r1.json"), b = slurp(dir / "r2.json"), c = slurp(dir / "r8.json");
  const bool identical = !a.empty() && a == b && a == c;
  const bool ok = c1 == 0 && c2 == 0 && c8 == 0 && identical && t1 < 60.0 && t2 < 60.0;
  return {ok, std::string("reports identical: ") + (identical ? "yes" : "no") +
                  fmt("; 1-thread %.1f s / %.1f s, 8-thread %.1f s", t1, t2, t8)};
}

Outcome report_semantics() {
  // Two fields of 100 x 100 mask pixels, each half epithelium; both mitoses in field 0.
  BinaryMask m({200, 100}, kSegmentationResolution);
  for (int y = 0; y < 100; ++y) {
    for (int x = 0; x < 50; ++x) m.set(x, y);
    for (int x = 100; x < 150; ++x) m.set(x, y);
  }
  const std::vector<Detection> kept{{80, 80, 4, 4, 0.9}, {40, 120, 4, 4, 0.8}};
  RoiSpec roi;
  roi.n_fields = 2;
  const MVReport r = build_report(m, kept, kept, roi, 0.5);
  const double expected = 168.7763;
  const bool ok = std::abs(r.mv_mean - expected) < 1e-4 && std::abs(r.mv_std - expected) < 1e-4;
  return {ok, fmt("field mv {%.8f, %.8f}, mean %.8f", *r.fields[0].mv, *r.fields[1].mv, r.mv_mean) +
                  fmt(", population std %.8f; expected 168.7763 for both", r.mv_std)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"coefficient k(2.37)", coefficient},
      {"units sanity mc/A at full epithelium", units},
      {"otsu oracle equivalence", otsu_equivalence},
      {"morphology properties", morphology_properties},
      {"deconvolution round trip", deconvolution_round_trip},
      {"synthetic maskgen fidelity", maskgen_fidelity},
      {"fusion invariance", fusion_invariance},
      {"weibel unbiasedness", weibel_unbiased},
      {"metrics oracles", metrics_oracles},
      {"determinism and parallelism", determinism},
      {"report semantics two-field example", report_semantics},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  [%2zu] %-40s %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed;
}
