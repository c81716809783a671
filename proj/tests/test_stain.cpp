#include <gtest/gtest.h>

#include <random>

#include "mvi/stain.hpp"
#include "support/oracles.hpp"

namespace mvi {
namespace {

ByteImage one_pixel(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return ByteImage(Size{1, 1}, 3, Resolution{}, std::vector<std::uint8_t>{r, g, b});
}

OdImage od_pixels(const std::vector<std::array<double, 3>>& px) {
  std::vector<double> data;
  for (const auto& p : px) data.insert(data.end(), p.begin(), p.end());
  return OdImage(Size{static_cast<int>(px.size()), 1}, 3, Resolution{}, std::move(data));
}

TEST(RgbToOd, BackgroundIsZero) {
  const OdImage od = rgb_to_od(one_pixel(255, 255, 255));
  for (double v : od.data()) EXPECT_EQ(v, 0.0);
  const OdImage tinted = rgb_to_od(one_pixel(240, 230, 220), {240, 230, 220});
  for (double v : tinted.data()) EXPECT_EQ(v, 0.0);
}

TEST(RgbToOd, TenfoldAttenuationIsUnitDensity) {
  const OdImage od = rgb_to_od(one_pixel(25, 25, 25), {250, 250, 250});
  for (double v : od.data()) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(RgbToOd, DirectEvaluation) {
  // -log10(128 / 255)
  const OdImage od = rgb_to_od(one_pixel(128, 128, 128));
  EXPECT_NEAR(od.at(0, 0, 0), 0.29933021078608, 1e-12);
}

TEST(RgbToOd, ZeroIntensityUsesEpsilonAndBrightPixelsClamp) {
  const OdImage od = rgb_to_od(one_pixel(0, 255, 255), {200, 200, 200});
  EXPECT_NEAR(od.at(0, 0, 0), std::log10(200.0), 1e-12);
  EXPECT_EQ(od.at(0, 0, 1), 0.0);  // brighter than background
}

TEST(RgbToOd, MonotoneDecreasingInIntensity) {
  std::vector<std::uint8_t> ramp;
  for (int i = 0; i < 256; ++i) ramp.insert(ramp.end(), {std::uint8_t(i), std::uint8_t(i), std::uint8_t(i)});
  const OdImage od = rgb_to_od(ByteImage(Size{256, 1}, 3, Resolution{}, ramp));
  for (int i = 1; i < 256; ++i) EXPECT_LE(od.at(i, 0, 0), od.at(i - 1, 0, 0));
  EXPECT_LT(od.at(254, 0, 0), od.at(1, 0, 0));
}

TEST(RgbToOd, RejectsDarkBackground) {
  EXPECT_THROW(rgb_to_od(one_pixel(1, 1, 1), {0, 255, 255}), Error);
}

TEST(StainMatrix, NormalizesRows) {
  const StainMatrix m = StainMatrix::h_dab();
  ASSERT_EQ(m.size(), 2u);
  for (const auto& s : m.stains()) {
    const double n = std::sqrt(s.od_rgb[0] * s.od_rgb[0] + s.od_rgb[1] * s.od_rgb[1] + s.od_rgb[2] * s.od_rgb[2]);
    EXPECT_NEAR(n, 1.0, 1e-9);
  }
  EXPECT_EQ(m.stain(0).name, "hematoxylin");
  EXPECT_EQ(m.stain(1).name, "DAB");
}

TEST(StainMatrix, RejectsDependentAndMalformedBases) {
  EXPECT_THROW(StainMatrix({{"a", {1, 0, 0}}, {"b", {2, 0, 0}}}), Error);
  EXPECT_THROW(StainMatrix({{"a", {1, 0, 0}}, {"b", {1, 1e-9, 0}}}), Error);
  EXPECT_THROW(StainMatrix({{"a", {1, 0, 0}}}), Error);
  EXPECT_THROW(StainMatrix({{"a", {0, 0, 0}}, {"b", {0, 1, 0}}}), Error);
  EXPECT_THROW(StainMatrix({{"a", {1, 0, 0}}, {"a", {0, 1, 0}}}), Error);
  try {
    StainMatrix({{"a", {1, 0, 0}}, {"b", {1, 1e-9, 0}}});
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::ill_conditioned);
  }
}

TEST(Deconvolve, ScaledStainVector) {
  const StainMatrix m = StainMatrix::h_dab();
  const auto& v = m.stain(0).od_rgb;
  const auto c = deconvolve(od_pixels({{2 * v[0], 2 * v[1], 2 * v[2]}}), m);
  EXPECT_NEAR(c.values.at(0, 0, 0), 2.0, 1e-12);
  EXPECT_NEAR(c.values.at(0, 0, 1), 0.0, 1e-12);
}

TEST(Deconvolve, ZeroDensity) {
  const auto c = deconvolve(od_pixels({{0, 0, 0}}), StainMatrix::h_dab());
  EXPECT_EQ(c.values.at(0, 0, 0), 0.0);
  EXPECT_EQ(c.values.at(0, 0, 1), 0.0);
}

TEST(Deconvolve, TwoStainLeastSquaresMatchesNormalEquations) {
  const StainMatrix m = StainMatrix::h_dab();
  const auto& v1 = m.stain(0).od_rgb;
  const auto& v2 = m.stain(1).od_rgb;
  const std::array<double, 3> od{v1[0] + 0.5 * v2[0], v1[1] + 0.5 * v2[1], v1[2] + 0.5 * v2[2]};
  const auto expected = oracle::solve_two_stains(v1, v2, od);
  EXPECT_NEAR(expected[0], 1.0, 1e-12);
  EXPECT_NEAR(expected[1], 0.5, 1e-12);
  const auto c = deconvolve(od_pixels({od}), m);
  EXPECT_NEAR(c.values.at(0, 0, 0), 1.0, 1e-9);
  EXPECT_NEAR(c.values.at(0, 0, 1), 0.5, 1e-9);

  // Off-span density: still the least-squares solution.
  const std::array<double, 3> noisy{0.3, 0.9, 0.2};
  const auto ls = oracle::solve_two_stains(v1, v2, noisy);
  const auto cn = deconvolve(od_pixels({noisy}), m);
  EXPECT_NEAR(cn.values.at(0, 0, 0), std::max(0.0, ls[0]), 1e-12);
  EXPECT_NEAR(cn.values.at(0, 0, 1), std::max(0.0, ls[1]), 1e-12);
}

TEST(Deconvolve, NegativeConcentrationsClampToZero) {
  const StainMatrix m = StainMatrix::h_dab();
  const auto& v1 = m.stain(0).od_rgb;
  const auto& v2 = m.stain(1).od_rgb;
  const std::array<double, 3> od{v1[0] - 0.2 * v2[0], v1[1] - 0.2 * v2[1], v1[2] - 0.2 * v2[2]};
  const auto c = deconvolve(od_pixels({od}), m);
  EXPECT_NEAR(c.values.at(0, 0, 0), 1.0, 1e-9);
  EXPECT_EQ(c.values.at(0, 0, 1), 0.0);
}

TEST(Deconvolve, RoundTripThroughComposition) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> conc(0.0, 3.0);
  const StainMatrix hdab = StainMatrix::h_dab();
  const StainMatrix hed({{"hematoxylin", {0.65, 0.70, 0.29}},
                         {"eosin", {0.07, 0.99, 0.11}},
                         {"DAB", {0.27, 0.57, 0.78}}});
  for (const StainMatrix* m : {&hdab, &hed}) {
    std::vector<std::array<double, 3>> px;
    std::vector<std::vector<double>> truth;
    for (int i = 0; i < 1000; ++i) {
      std::vector<double> c(m->size());
      for (double& v : c) v = conc(rng);
      px.push_back(m->compose(c));
      truth.push_back(c);
    }
    const auto out = deconvolve(od_pixels(px), *m);
    for (int i = 0; i < 1000; ++i) {
      for (std::size_t s = 0; s < m->size(); ++s) ASSERT_NEAR(out.values.at(i, 0, s), truth[i][s], 1e-6);
    }
  }
}

TEST(Deconvolve, RowOrderPermutesChannels) {
  const StainMatrix a({{"hematoxylin", {0.65, 0.70, 0.29}}, {"DAB", {0.27, 0.57, 0.78}}});
  const StainMatrix b({{"DAB", {0.27, 0.57, 0.78}}, {"hematoxylin", {0.65, 0.70, 0.29}}});
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::vector<std::array<double, 3>> px(200);
  for (auto& p : px) p = {u(rng), u(rng), u(rng)};
  const auto ca = deconvolve(od_pixels(px), a);
  const auto cb = deconvolve(od_pixels(px), b);
  for (int i = 0; i < 200; ++i) {
    EXPECT_NEAR(ca.values.at(i, 0, 0), cb.values.at(i, 0, 1), 1e-12);
    EXPECT_NEAR(ca.values.at(i, 0, 1), cb.values.at(i, 0, 0), 1e-12);
  }
}

TEST(ExtractChannel, SelectsAndRescales) {
  const StainMatrix m = StainMatrix::h_dab();
  const auto& d = m.stain(1).od_rgb;
  const auto c = deconvolve(od_pixels({{d[0], d[1], d[2]}, {3 * d[0], 3 * d[1], 3 * d[2]}}), m);
  const FloatImage g = extract_channel(c, "DAB");
  EXPECT_NEAR(g.at(0, 0), 0.5, 1e-12);  // concentration 1.0 at saturation 2.0
  EXPECT_EQ(g.at(1, 0), 1.0);           // clamped
  EXPECT_NEAR(extract_channel(c, "DAB", 4.0).at(0, 0), 0.25, 1e-12);
}

TEST(ExtractChannel, UnknownStainIsAnError) {
  const auto c = deconvolve(od_pixels({{0.1, 0.1, 0.1}}), StainMatrix::h_dab());
  try {
    extract_channel(c, "eosin");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::unknown_stain);
  }
}

}  // namespace
}  // namespace mvi
