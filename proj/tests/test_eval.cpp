#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace sqgs;
using namespace sqgs::testing;

namespace {

const Vec4 kIdentity(1, 0, 0, 0);

std::vector<Vec3> fibonacci_sphere(int n, double r, const Vec3 &offset = Vec3::Zero()) {
  std::vector<Vec3> out;
  const double golden = 3.14159265358979323846 * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double rho = std::sqrt(1.0 - z * z);
    out.push_back(r * Vec3(rho * std::cos(golden * i), rho * std::sin(golden * i), z) + offset);
  }
  return out;
}

Image textured(int w, int h, std::uint64_t seed) {
  Image img(w, h, 3);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto &v : img.data)
    v = u(rng);
  return img;
}

} // namespace

// ---------------------------------------------------------------------------
// Chamfer distance

TEST(Chamfer, FibonacciSpheresRegression) {
  // Frozen from an independent scipy cKDTree computation on the same point sets.
  const auto a = fibonacci_sphere(300, 1.0);
  const auto b = fibonacci_sphere(200, 1.1, Vec3(0.05, 0, 0));
  EXPECT_NEAR(chamfer(a, b), 0.1411676962097368, 1e-12);
}

TEST(Chamfer, TrivialValues) {
  const auto a = fibonacci_sphere(50, 1.0);
  EXPECT_EQ(chamfer(a, a), 0.0);
  EXPECT_NEAR(chamfer({Vec3::Zero()}, {Vec3(1, 0, 0)}), 1.0, 1e-15);
  EXPECT_THROW(chamfer({}, a), Error);
}

TEST(Chamfer, SymmetricAndTranslationInvariant) {
  const auto a = fibonacci_sphere(120, 0.7);
  const auto b = fibonacci_sphere(90, 0.9, Vec3(0.1, -0.2, 0.05));
  EXPECT_NEAR(chamfer(a, b), chamfer(b, a), 1e-14);
  std::vector<Vec3> a2, b2;
  for (const auto &p : a)
    a2.push_back(p + Vec3(3, -1, 2));
  for (const auto &p : b)
    b2.push_back(p + Vec3(3, -1, 2));
  EXPECT_NEAR(chamfer(a, b), chamfer(a2, b2), 1e-12);
}

// ---------------------------------------------------------------------------
// Image metrics

TEST(Psnr, TrivialValues) {
  const Image a(8, 8, 3, 0.3);
  EXPECT_EQ(psnr(a, a), 99.0);
  EXPECT_NEAR(psnr(a, Image(8, 8, 3, 0.4)), 20.0, 1e-9);
  EXPECT_NEAR(psnr(Image(8, 8, 3, 0.0), Image(8, 8, 3, 0.5)), 6.020599913279624, 1e-9);
  EXPECT_THROW(psnr(a, Image(8, 7, 3)), Error);
}

TEST(Psnr, DecreasesWithNoise) {
  const Image clean = textured(16, 16, 1);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> noise(clean.data.size());
  for (auto &v : noise)
    v = n(rng);
  double last = 99.0;
  for (double sigma : {0.01, 0.03, 0.1, 0.3}) {
    Image noisy = clean;
    for (std::size_t i = 0; i < noisy.data.size(); ++i)
      noisy.data[i] += sigma * noise[i];
    const double p = psnr(noisy, clean);
    EXPECT_LT(p, last);
    last = p;
  }
}

TEST(Ssim, InvertedTextureIsNegative) {
  const Image a = textured(24, 24, 5);
  Image inv = a;
  for (auto &v : inv.data)
    v = 1.0 - v;
  EXPECT_LT(ssim(a, inv), 0.0);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(ImageMetrics, SelfRenderedViewsAreExact) {
  const HybridScene scene = scene_of({make_block(Vec3::Zero(), Vec3(0.4, 0.3, 0.35), 1.0, 1.0, 0.9, kIdentity)});
  Dataset ds;
  ds.bbox = scene.bbox;
  for (const Vec3 &eye : {Vec3(0, 0, 3), Vec3(3, 0.5, 0)}) {
    const Camera cam = camera_at(eye, 16);
    ds.cameras.push_back(cam);
    ds.images.push_back(render(attach_scene(scene), cam).rgb);
    ds.masks.push_back(Image(16, 16, 1, 1.0));
  }
  const auto [p, s] = image_metrics(attach_scene(scene), ds, {0, 1});
  EXPECT_EQ(p, 99.0);
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_THROW(image_metrics(attach_scene(scene), ds, {}), Error);
}

// ---------------------------------------------------------------------------
// Geometry samples

TEST(SampleRepresentation, BlockSamplesLieOnTheSurface) {
  std::mt19937_64 rng(4);
  const Block b = make_block(Vec3(0.1, -0.2, 0.3), Vec3(0.4, 0.25, 0.3), 0.4, 1.6, 0.7, random_unit_quat(rng));
  const HybridScene scene = scene_of({b});
  const auto pts = sample_representation(scene, 2000, 9);
  ASSERT_EQ(pts.size(), 2000u);
  double worst = 0.0;
  for (const auto &p : pts)
    worst = std::max(worst, std::abs(inside_outside<double>(to_local<double>(p, b.pose()), b.shape()) - 1.0));
  EXPECT_LT(worst, 1e-6);
}

TEST(SampleRepresentation, AreaWeightedAcrossBlocks) {
  // Two congruent blocks share the samples evenly.
  HybridScene scene = scene_of({make_block(Vec3(-0.5, 0, 0), Vec3::Constant(0.3), 1, 1, 0.6, kIdentity),
                                make_block(Vec3(0.5, 0, 0), Vec3::Constant(0.3), 1, 1, 0.6, kIdentity, 1)});
  const auto pts = sample_representation(scene, 4000, 3);
  const auto left = std::count_if(pts.begin(), pts.end(), [](const Vec3 &p) { return p.x() < 0.0; });
  EXPECT_NEAR(static_cast<double>(left) / pts.size(), 0.5, 0.05);
  scene.blocks[1].alive = false;
  for (const auto &p : sample_representation(scene, 500, 3))
    EXPECT_LT(p.x(), 0.0);
}

TEST(SampleRepresentation, DeterministicUnderSeed) {
  const HybridScene scene = scene_of({make_block(Vec3::Zero(), Vec3(0.4, 0.3, 0.2), 0.7, 1.2, 0.6, kIdentity)});
  EXPECT_EQ(sample_representation(scene, 300, 5), sample_representation(scene, 300, 5));
  EXPECT_NE(sample_representation(scene, 300, 5), sample_representation(scene, 300, 6));
}

TEST(SampleRepresentation, SplatCentersSkipFaintSplatsAndSubsample) {
  SplatSet set;
  for (int i = 0; i < 100; ++i) {
    Splat s;
    s.center = Vec3(i, 0, 0);
    s.opacity = i % 2 ? 0.5 : 0.05;
    set.splats.push_back(s);
  }
  const auto all = sample_representation(set, 1000, 1);
  ASSERT_EQ(all.size(), 50u);
  for (const auto &p : all)
    EXPECT_EQ(static_cast<int>(p.x()) % 2, 1);
  const auto some = sample_representation(set, 20, 1);
  ASSERT_EQ(some.size(), 20u);
  std::set<double> unique;
  for (const auto &p : some)
    unique.insert(p.x());
  EXPECT_EQ(unique.size(), 20u);
  EXPECT_EQ(some, sample_representation(set, 20, 1));
  for (auto &s : set.splats)
    s.opacity = 0.0;
  EXPECT_THROW(sample_representation(set, 10, 1), Error);
}

TEST(MetricsReport, ChamferOmittedWithoutTruth) {
  MetricsReport m;
  m.psnr = 30.0;
  m.ssim = 0.9;
  m.parts = 3;
  EXPECT_FALSE(m.to_json().contains("cd"));
  m.cd = 0.02;
  EXPECT_EQ(m.to_json().at("cd").get<double>(), 0.02);
  EXPECT_EQ(m.to_json().at("parts").get<int>(), 3);
}
