#include <gtest/gtest.h>
#include <omp.h>

#include "support.hpp"

using namespace sqgs;
using namespace sqgs::testing;

namespace {

/// Flat-shaded splat facing +z with isotropic in-plane extent.
SplatSet facing_splats(const std::vector<Vec3> &centers, const std::vector<double> &colors, double sigma,
                       double opacity) {
  SplatSet set;
  set.sh_degree = 0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    Splat s;
    s.center = centers[i];
    s.frame.col(0) = Vec3::UnitZ();
    s.frame.col(1) = Vec3::UnitX();
    s.frame.col(2) = Vec3::UnitY();
    s.scale2 = s.scale3 = sigma;
    s.opacity = opacity;
    set.splats.push_back(s);
    for (int c = 0; c < 3; ++c)
      set.sh.push_back(sh_dc_for(colors[i]));
  }
  return set;
}

/// Screen-space footprint of an isotropic facing splat at the given depth.
double footprint(double px, double py, double f, double sigma, double depth, double opacity, double cx, double cy) {
  const double s2 = (f * sigma / depth) * (f * sigma / depth) + 0.3;
  const double r2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
  return opacity * std::exp(-0.5 * r2 / s2);
}

/// Smooth scalar of a render: fixed random weights on color and alpha.
struct WeightedProbe {
  Image w_rgb, w_alpha;

  WeightedProbe(int w, int h, std::uint64_t seed) : w_rgb(w, h, 3), w_alpha(w, h, 1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto &v : w_rgb.data)
      v = u(rng);
    for (auto &v : w_alpha.data)
      v = u(rng);
  }
  double operator()(const RenderedImage &img) const {
    double s = 0.0;
    for (std::size_t i = 0; i < img.rgb.data.size(); ++i)
      s += w_rgb.data[i] * img.rgb.data[i];
    for (std::size_t i = 0; i < img.alpha.data.size(); ++i)
      s += w_alpha.data[i] * img.alpha.data[i];
    return s;
  }
};

Image constant_image(int w, int h, double v) { return Image(w, h, 1, v); }

} // namespace

TEST(Rasterize, IsotropicSplatOnAxisMatchesClosedForm) {
  const int size = 64;
  const Camera cam = camera_at(Vec3(0, 0, 3), size);
  const double sigma = 0.05, opacity = 0.8, color = 0.7;
  const RenderedImage img = render(facing_splats({Vec3::Zero()}, {color}, sigma, opacity), cam);
  double worst = 0.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double a = footprint(x + 0.5, y + 0.5, cam.fx, sigma, 3.0, opacity, cam.cx, cam.cy);
      worst = std::max(worst, std::abs(img.alpha.at(x, y) - a));
      for (int c = 0; c < 3; ++c)
        worst = std::max(worst, std::abs(img.rgb.at(x, y, c) - color * a));
    }
  EXPECT_LT(worst, 1e-4);
}

TEST(Rasterize, FrontToBackCompositing) {
  const Camera cam = camera_at(Vec3(0, 0, 3), 32);
  const double sigma = 0.1, opacity = 0.6;
  const RenderedImage img = render(facing_splats({Vec3(0, 0, -0.5), Vec3(0, 0, 0.5)}, {0.2, 0.9}, sigma, opacity), cam);
  const int x = 16, y = 16;
  const double a_front = footprint(x + 0.5, y + 0.5, cam.fx, sigma, 2.5, opacity, cam.cx, cam.cy);
  const double a_back = footprint(x + 0.5, y + 0.5, cam.fx, sigma, 3.5, opacity, cam.cx, cam.cy);
  EXPECT_NEAR(img.rgb.at(x, y, 0), 0.9 * a_front + 0.2 * a_back * (1.0 - a_front), 1e-9);
  EXPECT_NEAR(img.alpha.at(x, y), 1.0 - (1.0 - a_front) * (1.0 - a_back), 1e-9);
  EXPECT_NEAR(img.depth.at(x, y), 2.5 * a_front + 3.5 * a_back * (1.0 - a_front), 1e-9);
}

TEST(Rasterize, DepthTiesResolvedByIndex) {
  const Camera cam = camera_at(Vec3(0, 0, 3), 16);
  const RenderedImage ab = render(facing_splats({Vec3::Zero(), Vec3::Zero()}, {0.2, 0.9}, 0.1, 0.6), cam);
  const double a = footprint(8.5, 8.5, cam.fx, 0.1, 3.0, 0.6, cam.cx, cam.cy);
  EXPECT_NEAR(ab.rgb.at(8, 8, 0), 0.2 * a + 0.9 * a * (1.0 - a), 1e-9);
}

TEST(Rasterize, EmptySetIsBlack) {
  const Camera cam = camera_at(Vec3(0, 0, 3), 20);
  const RenderedImage img = render(SplatSet{}, cam);
  for (double v : img.rgb.data)
    EXPECT_EQ(v, 0.0);
  for (double v : img.alpha.data)
    EXPECT_EQ(v, 0.0);
}

TEST(Rasterize, CullsSplatsBehindCamera) {
  const Camera cam = camera_at(Vec3(0, 0, 3), 16);
  const RenderedImage img = render(facing_splats({Vec3(0, 0, 4)}, {0.5}, 0.1, 0.9), cam);
  for (double v : img.alpha.data)
    EXPECT_EQ(v, 0.0);
}

TEST(Rasterize, OpacityClampAndAlphaBounds) {
  const Camera cam = camera_at(Vec3(0, 0, 3), 16);
  std::vector<Vec3> centers(30, Vec3::Zero());
  std::vector<double> colors(30, 0.5);
  const RenderedImage img = render(facing_splats(centers, colors, 0.3, 1.0), cam);
  for (double v : img.alpha.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_GT(img.alpha.at(8, 8), 0.999);
}

TEST(Rasterize, InvalidCameraThrows) {
  Camera cam = camera_at(Vec3(0, 0, 3), 16);
  cam.fx = -1.0;
  EXPECT_THROW(render(SplatSet{}, cam), Error);
}

TEST(Camera, ProjectAndRayRoundTrip) {
  const Camera cam = camera_at(Vec3(1.0, 2.0, 3.0), 48, 1.3);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    Vec2 uv;
    ASSERT_TRUE(cam.project(p, uv));
    const Vec3 d = cam.ray_direction(uv.x(), uv.y());
    const Vec3 to_p = (p - cam.position()).normalized();
    EXPECT_NEAR((d - to_p).norm(), 0.0, 1e-12);
  }
  EXPECT_NEAR((cam.position() - Vec3(1, 2, 3)).norm(), 0.0, 1e-12);
}

TEST(Ssim, ConstantImagesRegression) {
  // Reference values from an independent zero-padded implementation.
  EXPECT_NEAR(ssim(constant_image(32, 32, 0.5), constant_image(32, 32, 0.6)), 0.9762630994795742, 1e-12);
  EXPECT_NEAR(ssim(constant_image(24, 16, 0.5), constant_image(24, 16, 0.6)), 0.9725093372176822, 1e-12);
}

TEST(Ssim, IdenticalImagesScoreOne) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image a(20, 14, 3);
  for (auto &v : a.data)
    v = u(rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_THROW(ssim(a, Image(20, 15, 3)), Error);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image a(13, 9, 2), b(13, 9, 2);
  for (auto &v : a.data)
    v = u(rng);
  for (auto &v : b.data)
    v = u(rng);
  Image g;
  ssim(a, b, &g);
  std::vector<double> got, want;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    got.push_back(g.data[i]);
    want.push_back(central_difference([&] { return ssim(a, b); }, &a.data[i], 1e-5));
  }
  EXPECT_LT(rel_error(got, want), 1e-6);
}

TEST(RenderingLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image a(10, 8, 3), b(10, 8, 3);
  for (auto &v : a.data)
    v = u(rng);
  for (auto &v : b.data)
    v = u(rng);
  Image g;
  rendering_loss(a, b, 0.2, &g);
  std::vector<double> got, want;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    got.push_back(g.data[i]);
    want.push_back(central_difference([&] { return rendering_loss(a, b, 0.2); }, &a.data[i], 1e-6));
  }
  EXPECT_LT(rel_error(got, want), 1e-6);
}

TEST(Backward, DcColorGradientIsWeightedCoverage) {
  // d C / d sh_0 = C0 * alpha * T for a single splat.
  const Camera cam = camera_at(Vec3(0, 0, 3), 16);
  SplatSet set = facing_splats({Vec3::Zero()}, {0.4}, 0.1, 0.7);
  const RenderOutput out = rasterize(set, cam);
  Image d_rgb(16, 16, 3, 0.0);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      d_rgb.at(x, y, 1) = 1.0;
  const auto pg = rasterize_backward(out.state, d_rgb, nullptr);
  std::vector<double> g(3, 0.0);
  sh_gradient(set.splats[0].center, set.sh_of(0), 0, cam, pg[0].color, g);
  double cover = 0.0;
  for (double a : out.image.alpha.data)
    cover += a;
  EXPECT_NEAR(g[1], kShC0 * cover, 1e-10);
  EXPECT_EQ(g[0], 0.0);
}

TEST(Backward, FreeSplatGradientsMatchFiniteDifferences) {
  HybridSettings hs;
  hs.level = 1;
  hs.gaussians_per_face = 2;
  hs.sh_degree = 1;
  std::mt19937_64 rng(7);
  HybridScene scene = scene_of({make_block(Vec3(0, 0, 0), Vec3(0.5, 0.4, 0.45), 0.8, 1.1, 0.6, random_unit_quat(rng))}, hs);
  FreeSplats fs = decouple(scene);
  std::normal_distribution<double> n(0.0, 0.05);
  for (auto &s : fs.splats)
    for (int k = free_param::kQuat; k < free_param::kCount; ++k)
      s.params[k] += n(rng);
  const Camera cam = camera_at(Vec3(0.4, 0.7, 2.2), 16);
  const WeightedProbe probe(16, 16, 8);
  const SplatSet set = to_splat_set(fs);
  const RenderOutput out = rasterize(set, cam);
  // Depth order frozen so finite differences do not straddle a re-sort.
  auto value = [&] { return probe(rasterize_in_order(to_splat_set(fs), cam, out.state).image); };

  const auto pg = rasterize_backward(out.state, probe.w_rgb, &probe.w_alpha);
  FreeGrad g = FreeGrad::zeros_like(fs);
  backprop_free(fs, set, cam, out.state, pg, {}, g);

  std::vector<double> got, want;
  for (std::size_t i = 0; i < fs.size(); i += 7) {
    for (int k = 0; k < free_param::kCount; ++k) {
      got.push_back(g.params[i][k]);
      want.push_back(central_difference(value, &fs.splats[i].params[k]));
    }
    for (std::size_t k = 0; k < fs.k3(); ++k) {
      got.push_back(g.sh[i * fs.k3() + k]);
      want.push_back(central_difference(value, &fs.sh[i * fs.k3() + k]));
    }
  }
  EXPECT_LT(rel_error(got, want), 1e-3);
}

TEST(Backward, BoundGradientsMatchFiniteDifferences) {
  HybridSettings hs;
  hs.level = 1;
  hs.gaussians_per_face = 2;
  hs.sh_degree = 1;
  std::mt19937_64 rng(10);
  HybridScene scene = scene_of({make_block(Vec3(-0.3, 0, 0), Vec3(0.3, 0.35, 0.25), 0.7, 1.2, 0.6, random_unit_quat(rng)),
                                make_block(Vec3(0.35, 0.1, 0), Vec3(0.25, 0.3, 0.3), 1.3, 0.8, 0.5, random_unit_quat(rng), 1)},
                               hs);
  const Camera cam = camera_at(Vec3(0.3, 0.9, 2.4), 16);
  const WeightedProbe probe(16, 16, 11);
  const SplatSet bound = attach_scene(scene);
  const RenderOutput out = rasterize(bound, cam);
  auto value = [&] { return probe(rasterize_in_order(attach_scene(scene), cam, out.state).image); };

  const auto pg = rasterize_backward(out.state, probe.w_rgb, &probe.w_alpha);
  SceneGrad g = SceneGrad::zeros_like(scene);
  backprop_bound(scene, bound, cam, out.state, pg, {}, g);

  for (std::size_t b = 0; b < scene.blocks.size(); ++b) {
    std::vector<double> got, want;
    for (int k = 0; k < param::kCount; ++k) {
      got.push_back(g.blocks[b].params[k]);
      want.push_back(central_difference(value, &scene.blocks[b].params[k]));
    }
    EXPECT_LT(rel_error(got, want), 1e-3) << "block " << b;
    std::vector<double> got_sh, want_sh;
    for (std::size_t k = 0; k < scene.blocks[b].sh.size(); k += 5) {
      got_sh.push_back(g.blocks[b].sh[k]);
      want_sh.push_back(central_difference(value, &scene.blocks[b].sh[k]));
    }
    EXPECT_LT(rel_error(got_sh, want_sh), 1e-3) << "block " << b;
  }
}

TEST(Rasterize, InOrderMatchesFreshRender) {
  HybridSettings hs;
  hs.level = 1;
  const HybridScene scene = scene_of({make_block(Vec3::Zero(), Vec3(0.4, 0.3, 0.5), 0.7, 1.2, 0.6, Vec4(1, 0, 0, 0))}, hs);
  const Camera cam = camera_at(Vec3(0.2, 0.4, 2.5), 24);
  const SplatSet set = attach_scene(scene);
  const RenderOutput a = rasterize(set, cam);
  const RenderOutput b = rasterize_in_order(set, cam, a.state);
  EXPECT_EQ(a.image.rgb.data, b.image.rgb.data);
  EXPECT_EQ(a.image.alpha.data, b.image.alpha.data);
  EXPECT_THROW(rasterize_in_order(SplatSet{}, cam, a.state), Error);
}

TEST(Rasterize, PermutingEqualDepthSplatsIsStable) {
  // Splats with identical depth and identical content: any permutation renders the same.
  const Camera cam = camera_at(Vec3(0, 0, 3), 16);
  const SplatSet a = facing_splats({Vec3(0.05, 0, 0), Vec3(-0.05, 0, 0), Vec3(0, 0.05, 0)}, {0.5, 0.5, 0.5}, 0.1, 0.5);
  const SplatSet b = facing_splats({Vec3(0, 0.05, 0), Vec3(0.05, 0, 0), Vec3(-0.05, 0, 0)}, {0.5, 0.5, 0.5}, 0.1, 0.5);
  const RenderedImage ra = render(a, cam), rb = render(b, cam);
  for (std::size_t i = 0; i < ra.rgb.data.size(); ++i)
    EXPECT_NEAR(ra.rgb.data[i], rb.rgb.data[i], 1e-6);
}

TEST(Rasterize, RigidMotionOfSceneAndCameraIsInvariant) {
  // Degree-0 SH is view independent, so moving splats and camera together changes nothing.
  HybridSettings hs;
  hs.level = 1;
  hs.sh_degree = 0;
  std::mt19937_64 rng(14);
  const HybridScene scene =
      scene_of({make_block(Vec3(0.1, 0, 0), Vec3(0.4, 0.3, 0.5), 0.7, 1.2, 0.6, random_unit_quat(rng))}, hs);
  const Camera cam = camera_at(Vec3(0.2, 0.4, 2.5), 24);
  const SplatSet set = attach_scene(scene);
  SplatSet moved_set = set;
  const Mat3 Rm = quat_to_matrix<double>(random_unit_quat(rng));
  const Vec3 tm(0.3, -0.2, 0.5);
  for (auto &s : moved_set.splats) {
    s.center = Rm * s.center + tm;
    s.frame = Rm * s.frame;
  }
  Camera moved = cam;
  moved.R = cam.R * Rm.transpose();
  moved.t = cam.t - moved.R * tm;
  const RenderedImage a = render(set, cam), b = render(moved_set, moved);
  for (std::size_t i = 0; i < a.rgb.data.size(); ++i)
    EXPECT_NEAR(a.rgb.data[i], b.rgb.data[i], 1e-6);
}

TEST(Project, OnAxisCovarianceAndDepthScaling) {
  Splat s;
  s.frame.col(0) = Vec3::UnitZ();
  s.frame.col(1) = Vec3::UnitX();
  s.frame.col(2) = Vec3::UnitY();
  s.scale2 = s.scale3 = 0.05;
  RenderSettings rs;
  rs.lowpass = 0.0;
  const Camera near = camera_at(Vec3(0, 0, 2), 64), far = camera_at(Vec3(0, 0, 4), 64);
  const std::vector<double> sh(3, 0.0);
  const auto pn = project(s, sh, 0, near, rs), pf = project(s, sh, 0, far, rs);
  ASSERT_TRUE(pn && pf);
  const double expect = 64.0 * 0.05 / 2.0;
  EXPECT_NEAR(pn->cov[0], expect * expect, 1e-9);
  EXPECT_NEAR(pn->cov[2], expect * expect, 1e-9);
  EXPECT_NEAR(pn->cov[1], 0.0, 1e-12);
  EXPECT_NEAR(std::sqrt(pf->cov[0]), 0.5 * std::sqrt(pn->cov[0]), 1e-6);
  s.center = Vec3(0, 0, 5);
  EXPECT_FALSE(project(s, sh, 0, near, rs).has_value());
}

TEST(Sh, DegreeZeroAndParity) {
  std::vector<double> sh0 = {0.3, 0.3, 0.3};
  const Vec3 rgb = eval_sh(sh0, Vec3::UnitX(), 0);
  EXPECT_NEAR(rgb[0], 0.28209479177387814 * 0.3 + 0.5, 1e-15);
  const double white = sh_dc_for(1.0);
  std::vector<double> w = {white, white, white};
  std::mt19937_64 rng(15);
  for (int i = 0; i < 10; ++i) {
    const Vec3 d = random_unit_quat(rng).head<3>().normalized();
    EXPECT_NEAR((eval_sh(w, d, 0) - Vec3::Ones()).norm(), 0.0, 1e-12);
  }
  std::vector<double> sh1(12, 0.0), flipped(12, 0.0);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (int k = 0; k < 12; ++k) {
    sh1[k] = u(rng);
    flipped[k] = k < 3 ? sh1[k] : -sh1[k];
  }
  const Vec3 d = Vec3(0.3, -0.5, 0.8).normalized();
  EXPECT_NEAR((eval_sh(sh1, d, 1) - eval_sh(flipped, -d, 1)).norm(), 0.0, 1e-12);
  EXPECT_THROW(eval_sh(sh0, d, 1), Error);
}

TEST(Backward, ZeroAdjointGivesZeroGradient) {
  HybridSettings hs;
  hs.level = 1;
  HybridScene scene = scene_of({make_block(Vec3::Zero(), Vec3(0.4, 0.3, 0.5), 0.7, 1.2, 0.6, Vec4(1, 0, 0, 0))}, hs);
  const Camera cam = camera_at(Vec3(0.2, 0.4, 2.5), 16);
  const SplatSet bound = attach_scene(scene);
  const RenderOutput out = rasterize(bound, cam);
  const Image zero_rgb(16, 16, 3, 0.0), zero_a(16, 16, 1, 0.0);
  const auto pg = rasterize_backward(out.state, zero_rgb, &zero_a);
  SceneGrad g = SceneGrad::zeros_like(scene);
  backprop_bound(scene, bound, cam, out.state, pg, {}, g);
  for (double v : g.blocks[0].params)
    EXPECT_EQ(v, 0.0);
  for (double v : g.blocks[0].sh)
    EXPECT_EQ(v, 0.0);
  EXPECT_THROW(rasterize_backward(out.state, Image(8, 8, 3), nullptr), Error);
}

TEST(Backward, SplatCentersFollowBlockTranslation) {
  HybridSettings hs;
  hs.level = 1;
  std::mt19937_64 rng(16);
  const HybridScene scene = scene_of({make_block(Vec3(0.1, 0.2, 0), Vec3(0.4, 0.3, 0.5), 0.7, 1.2, 0.6, random_unit_quat(rng))}, hs);
  const auto jp = seed_block_jets<param::kCount>(scene.blocks[0].params);
  const auto verts = world_vertices<BlockJet>(jp, scene.ico);
  const auto &tri = scene.ico.faces[7];
  const auto c = barycentric_point<BlockJet>(scene.blocks[0].bary[14], verts[tri[0]], verts[tri[1]], verts[tri[2]]);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      EXPECT_NEAR(c[a].v[param::kTrans + b], a == b ? 1.0 : 0.0, 1e-12);
}

TEST(Rasterize, ThreadCountDoesNotChangeResults) {
  HybridSettings hs;
  hs.level = 2;
  std::mt19937_64 rng(12);
  HybridScene scene = scene_of({make_block(Vec3(-0.2, 0, 0), Vec3(0.4, 0.3, 0.3), 0.5, 1.0, 0.7, random_unit_quat(rng)),
                                make_block(Vec3(0.3, 0, 0.1), Vec3(0.3, 0.3, 0.4), 1.0, 0.5, 0.8, random_unit_quat(rng), 1)},
                               hs);
  const Camera cam = camera_at(Vec3(0.5, 0.5, 2.5), 40);
  const WeightedProbe probe(40, 40, 13);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    const SplatSet bound = attach_scene(scene);
    const RenderOutput out = rasterize(bound, cam);
    const auto pg = rasterize_backward(out.state, probe.w_rgb, &probe.w_alpha);
    SceneGrad g = SceneGrad::zeros_like(scene);
    backprop_bound(scene, bound, cam, out.state, pg, {}, g);
    return std::make_pair(out.image.rgb.data, g);
  };
  const auto a = run(1);
  const auto b = run(4);
  omp_set_num_threads(omp_get_num_procs());
  EXPECT_EQ(a.first, b.first);
  for (std::size_t i = 0; i < scene.blocks.size(); ++i) {
    EXPECT_EQ(a.second.blocks[i].params, b.second.blocks[i].params);
    EXPECT_EQ(a.second.blocks[i].sh, b.second.blocks[i].sh);
  }
}
