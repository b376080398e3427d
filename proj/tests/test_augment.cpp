#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "brainssl/augment.hpp"
#include "brainssl/error.hpp"
#include "test_util.hpp"

using namespace brainssl;

namespace {

VolumeGrid constant(const Shape3& s, float value) {
  VolumeGrid v(s);
  for (auto& x : v.data()) x = value;
  return v;
}

// Smooth blob centred in the grid, decaying to ~0 well before the border.
VolumeGrid blob(const Shape3& s, double sigma) {
  VolumeGrid v(s);
  for (std::int64_t d = 0; d < s[0]; ++d)
    for (std::int64_t h = 0; h < s[1]; ++h)
      for (std::int64_t w = 0; w < s[2]; ++w) {
        const double x = d - (s[0] - 1) / 2.0, y = h - (s[1] - 1) / 2.0, z = w - (s[2] - 1) / 2.0;
        v.at(d, h, w) = static_cast<float>(std::exp(-(x * x + y * y + z * z) / (2 * sigma * sigma)));
      }
  return v;
}

double mean_abs_diff(const VolumeGrid& a, const VolumeGrid& b) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  return s / static_cast<double>(a.size());
}

double max_abs_diff(const VolumeGrid& a, const VolumeGrid& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a.data()[i] - b.data()[i])));
  return m;
}

}  // namespace

TEST(CropResize, CanonicalShapeAlways) {
  const VolumeGrid v = testutil::random_volume(kCanonicalShape, 1);
  Rng rng(3);
  for (int i = 0; i < 3; ++i) {
    auto out = rand_spatial_crop_resize(v, {30, 40, 40}, kCanonicalShape, rng);
    EXPECT_EQ(out.shape(), kCanonicalShape);
  }
}

TEST(CropResize, FullMinimumIsIdentity) {
  const auto v = testutil::random_volume({8, 9, 10}, 2);
  Rng rng(5);
  auto out = rand_spatial_crop_resize(v, v.shape(), v.shape(), rng);
  EXPECT_LE(max_abs_diff(out, v), 1e-6);
  EXPECT_LE(max_abs_diff(resize_trilinear(v, v.shape()), v), 1e-6);
}

TEST(CropResize, ConstantStaysConstant) {
  const auto v = constant({12, 12, 12}, 2.5f);
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    auto out = rand_spatial_crop_resize(v, {3, 3, 3}, {10, 11, 12}, rng);
    for (float x : out.data()) EXPECT_NEAR(x, 2.5f, 1e-6);
  }
}

TEST(CropResize, ExtentsAndPlacementsStayInRange) {
  const auto v = testutil::random_volume({10, 12, 14}, 3);
  Rng rng(8);
  std::set<double> extents0;
  for (int i = 0; i < 500; ++i) {
    TransformTrace t;
    rand_spatial_crop_resize(v, {2, 3, 4}, {4, 4, 4}, rng, &t);
    ASSERT_EQ(t.params.size(), 6u);
    for (int a = 0; a < 3; ++a) {
      const double lo = std::array<double, 3>{2, 3, 4}[a];
      EXPECT_GE(t.params[a], lo);
      EXPECT_LE(t.params[a], v.shape()[a]);
      EXPECT_GE(t.params[3 + a], 0);
      EXPECT_LE(t.params[3 + a] + t.params[a], v.shape()[a]);
    }
    extents0.insert(t.params[0]);
  }
  EXPECT_EQ(extents0.size(), 9u);
}

TEST(CropResize, MinimumLargerThanVolume) {
  Rng rng(1);
  EXPECT_THROW(rand_spatial_crop_resize(VolumeGrid({4, 4, 4}), {5, 1, 1}, {4, 4, 4}, rng), InvalidArgument);
}

TEST(CropResize, ScaledMinimumForDeskShape) {
  EXPECT_EQ(scaled_crop_min({30, 40, 40}, {32, 32, 32}), (Shape3{6, 7, 7}));
  EXPECT_EQ(scaled_crop_min({30, 40, 40}, kCanonicalShape), (Shape3{30, 40, 40}));
}

TEST(Flip, InvolutionAndGate) {
  const auto v = testutil::random_volume({5, 4, 3}, 4);
  auto f = flip(v, kAxialAxis);
  EXPECT_EQ(f.at(0, 1, 2), v.at(4, 1, 2));
  EXPECT_TRUE(flip(f, kAxialAxis) == v);
  Rng rng(2);
  for (int i = 0; i < 50; ++i) EXPECT_TRUE(rand_flip_axial(v, 0.0, rng) == v);
  for (int i = 0; i < 5; ++i) EXPECT_TRUE(rand_flip_axial(v, 1.0, rng) == f);
}

TEST(Rotate, ZeroAngleIsIdentity) {
  const auto v = testutil::random_volume({7, 8, 9}, 5);
  EXPECT_LE(max_abs_diff(rotate(v, {0, 0, 0}), v), 1e-6);
}

TEST(Rotate, InverseCompositionOnSmoothInput) {
  const auto v = blob({24, 24, 24}, 4.0);
  for (int axis = 0; axis < 3; ++axis) {
    for (double deg : {10.0, 30.0, 45.0}) {
      Vec3 a{0, 0, 0};
      a[axis] = deg * M_PI / 180.0;
      Vec3 b{0, 0, 0};
      b[axis] = -a[axis];
      EXPECT_LT(mean_abs_diff(rotate(rotate(v, a), b), v), 0.05);
    }
  }
}

TEST(Rotate, ConstantInteriorUnchanged) {
  const auto v = constant({21, 21, 21}, 1.5f);
  const auto r = rotate(v, {0.3, -0.5, 0.7});
  for (std::int64_t d = 8; d <= 12; ++d)
    for (std::int64_t h = 8; h <= 12; ++h)
      for (std::int64_t w = 8; w <= 12; ++w) EXPECT_NEAR(r.at(d, h, w), 1.5f, 1e-5);
}

TEST(Affine, ZeroRangesIsIdentity) {
  const auto v = testutil::random_volume({6, 7, 8}, 6);
  Rng rng(4);
  auto out = rand_affine(v, AffineParams{{0, 0, 0}, 0.0, 0.0}, 1.0, rng);
  EXPECT_LE(max_abs_diff(out, v), 1e-6);
}

TEST(Affine, IntegerTranslationMovesSpike) {
  VolumeGrid v({9, 9, 9});
  v.at(4, 4, 4) = 1.0f;
  const Mat3 id{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  auto out = affine_resample(v, id, {2, -1, 3});
  EXPECT_NEAR(out.at(6, 3, 7), 1.0f, 1e-6);
  double total = 0.0;
  for (float x : out.data()) total += x;
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(Affine, ScaleThenInverseScale) {
  const auto v = blob({24, 24, 24}, 3.0);
  Mat3 up{{{1.15, 0, 0}, {0, 1.15, 0}, {0, 0, 1.15}}};
  Mat3 down{{{1 / 1.15, 0, 0}, {0, 1 / 1.15, 0}, {0, 0, 1 / 1.15}}};
  EXPECT_LT(mean_abs_diff(affine_resample(affine_resample(v, up, {0, 0, 0}), down, {0, 0, 0}), v), 0.05);
}

TEST(ShiftIntensity, ForcedDeltaAndGate) {
  const auto z = shift_intensity(VolumeGrid({3, 3, 3}), 0.3);
  for (float x : z.data()) EXPECT_FLOAT_EQ(x, 0.3f);
  const auto v = testutil::random_volume({4, 4, 4}, 7);
  Rng rng(9);
  EXPECT_TRUE(rand_shift_intensity(v, 0.5, 0.0, rng) == v);
  for (int i = 0; i < 20; ++i) {
    TransformTrace t;
    auto out = rand_shift_intensity(v, 0.5, 1.0, rng, &t);
    ASSERT_TRUE(t.applied);
    EXPECT_LE(std::abs(t.params[0]), 0.5);
    const float d0 = out.data()[0] - v.data()[0];
    for (std::int64_t k = 0; k < v.size(); ++k) EXPECT_NEAR(out.data()[k] - v.data()[k], d0, 1e-5);
  }
}

TEST(AdjustContrast, Analytic) {
  const auto v = testutil::random_volume({5, 5, 5}, 8);
  EXPECT_LE(max_abs_diff(adjust_contrast(v, 1.0), v), 1e-6);
  auto lo = std::min_element(v.data().begin(), v.data().end()) - v.data().begin();
  auto hi = std::max_element(v.data().begin(), v.data().end()) - v.data().begin();
  for (double g : {0.5, 0.9, 1.5}) {
    auto out = adjust_contrast(v, g);
    EXPECT_NEAR(out.data()[lo], v.data()[lo], 1e-6);
    EXPECT_NEAR(out.data()[hi], v.data()[hi], 1e-6);
  }
  // u = 0.25 -> 0.5 for gamma 0.5 on a volume spanning [0, 4].
  VolumeGrid r({1, 1, 3}, std::vector<float>{0.0f, 1.0f, 4.0f});
  EXPECT_NEAR(adjust_contrast(r, 0.5).at(0, 0, 1), 2.0f, 1e-6);
  const auto c = constant({2, 2, 2}, 3.0f);
  EXPECT_TRUE(adjust_contrast(c, 0.7) == c);
}

TEST(GaussianNoise, ZeroStdAndEmpiricalStd) {
  const auto v = testutil::random_volume({4, 4, 4}, 9);
  Rng rng(10);
  EXPECT_TRUE(add_gaussian_noise(v, 0.0, rng) == v);
  EXPECT_TRUE(rand_gaussian_noise(v, 0.1, 0.0, rng) == v);
  const VolumeGrid zero({100, 100, 100});
  auto out = add_gaussian_noise(zero, 0.1, rng);
  double s = 0.0, s2 = 0.0;
  for (float x : out.data()) {
    s += x;
    s2 += double(x) * x;
  }
  const double n = static_cast<double>(out.size());
  const double sd = std::sqrt((s2 - s * s / n) / (n - 1));
  EXPECT_NEAR(sd, 0.1, 1e-3);
}

TEST(ProbabilityGates, WithinTwoPercent) {
  const VolumeGrid v = testutil::random_volume({4, 4, 4}, 11);
  const std::vector<TransformSpec> specs{
      {FlipParams{}, 0.5},          {RotateParams{45.0}, 0.5},         {ShiftIntensityParams{0.5}, 0.8},
      {AdjustContrastParams{}, 0.8}, {AffineParams{}, 0.7},            {GaussianNoiseParams{0.1}, 0.2},
  };
  for (const auto& spec : specs) {
    Rng rng(12);
    int applied = 0;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
      TransformTrace t;
      apply_transform(spec, v, rng, &t);
      applied += t.applied;
    }
    EXPECT_NEAR(applied / double(trials), spec.probability, 0.02) << spec.kind();
  }
}

TEST(Pipelines, NamedStacks) {
  auto s = build_pipeline("simclr");
  ASSERT_EQ(s.transforms.size(), 5u);
  const std::vector<std::string> kinds{"crop_resize", "flip", "rotate", "shift_intensity", "adjust_contrast"};
  const std::vector<double> probs{1.0, 0.5, 0.5, 0.8, 0.8};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(s.transforms[i].kind(), kinds[i]);
    EXPECT_EQ(s.transforms[i].probability, probs[i]);
  }
  EXPECT_EQ(std::get<CropResizeParams>(s.transforms[0].params).min_size, (Shape3{30, 40, 40}));
  EXPECT_EQ(std::get<RotateParams>(s.transforms[2].params).max_degrees, 45.0);
  EXPECT_EQ(std::get<ShiftIntensityParams>(s.transforms[3].params).offset, 0.5);

  auto m = build_pipeline("mae_pretrain");
  ASSERT_EQ(m.transforms.size(), 2u);
  EXPECT_EQ(m.transforms[1].kind(), "flip");

  auto sup = build_pipeline("supervised");
  ASSERT_EQ(sup.transforms.size(), 5u);
  EXPECT_EQ(std::get<CropResizeParams>(sup.transforms[0].params).min_size, (Shape3{90, 115, 115}));
  const auto& aff = std::get<AffineParams>(sup.transforms[2].params);
  EXPECT_EQ(sup.transforms[2].probability, 0.7);
  EXPECT_EQ(aff.rotate_rad, (Vec3{0.1, 0.1, 0.1}));
  EXPECT_EQ(aff.scale, 0.15);
  EXPECT_EQ(aff.translate, 5.0);
  EXPECT_EQ(std::get<GaussianNoiseParams>(sup.transforms[4].params).std, 0.1);
  EXPECT_EQ(sup.transforms[4].probability, 0.2);

  EXPECT_TRUE(build_pipeline("none").transforms.empty());
  EXPECT_THROW(build_pipeline("bogus"), InvalidArgument);
}

TEST(Pipelines, SpecValidation) {
  AugmentSpec s{"x", {{FlipParams{}, 1.5}}};
  EXPECT_THROW(s.validate(), InvalidArgument);
  s.transforms[0].probability = 0.5;
  EXPECT_NO_THROW(s.validate());
}

TEST(Pipelines, TextRoundTrip) {
  for (const char* name : {"simclr", "mae_pretrain", "supervised"}) {
    for (const auto& t : build_pipeline(name, {32, 32, 32}).transforms) {
      EXPECT_EQ(parse_transform(format_transform(t)), t) << format_transform(t);
    }
  }
}

TEST(ViewPair, NoneGivesTwoCopies) {
  const auto v = testutil::random_volume({6, 6, 6}, 13);
  auto p = make_view_pair(v, build_pipeline("none"), Rng(1), "scan");
  EXPECT_TRUE(p.view_a == v);
  EXPECT_TRUE(p.view_b == v);
  EXPECT_EQ(p.source_scan_id, "scan");
}

TEST(ViewPair, DeterministicAndDistinct) {
  const Shape3 s{16, 16, 16};
  const auto v = testutil::random_volume(s, 14);
  const auto spec = build_pipeline("simclr", s);
  auto p1 = make_view_pair(v, spec, Rng(42));
  auto p2 = make_view_pair(v, spec, Rng(42));
  EXPECT_TRUE(p1.view_a == p2.view_a);
  EXPECT_TRUE(p1.view_b == p2.view_b);
  EXPECT_EQ(p1.view_a.shape(), s);
  int distinct = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto p = make_view_pair(v, spec, Rng(seed));
    distinct += !(p.view_a == p.view_b);
  }
  EXPECT_GE(distinct, 99);
}
