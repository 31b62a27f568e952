#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "gradients.hpp"
#include "kdtree.hpp"

namespace sqgs {

/// Mean nearest-neighbour distance from every point of a to the set b.
inline double mean_nearest(const std::vector<Vec3> &a, const KdTree &b) {
  std::vector<double> d(a.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(a.size()); ++i)
    d[i] = std::sqrt(b.nearest_sq(a[i]));
  double s = 0.0;
  for (double v : d)
    s += v;
  return s / static_cast<double>(a.size());
}

/// Symmetric Chamfer distance: half the sum of both mean nearest-neighbour distances.
inline double chamfer(const std::vector<Vec3> &a, const std::vector<Vec3> &b) {
  require(!a.empty() && !b.empty(), "chamfer: point sets must be non-empty");
  const KdTree ta(a), tb(b);
  return 0.5 * (mean_nearest(a, tb) + mean_nearest(b, ta));
}

inline constexpr double kPsnrCap = 99.0;

inline double psnr(const Image &a, const Image &b) {
  require_same_shape(a, b, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse <= 0.0)
    return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

inline constexpr int kSurfaceSampleLevel = 4;

/**
 * n points on the alive block surfaces, area-weighted over a level-4
 * tessellation. Each sample is mapped back through the superquadric
 * parametrization so it lies exactly on the surface.
 */
inline std::vector<Vec3> sample_representation(const HybridScene &scene, std::size_t n, std::uint64_t seed) {
  require(n > 0, "sample_representation: n must be positive");
  require(scene.alive_count() > 0, "sample_representation: no alive block");
  const Icosphere ico = make_icosphere(kSurfaceSampleLevel);
  struct Face {
    int block;
    int face;
  };
  std::vector<Face> faces;
  std::vector<double> cum;
  std::vector<std::vector<Vec3>> verts(scene.blocks.size());
  double total = 0.0;
  for (std::size_t b = 0; b < scene.blocks.size(); ++b) {
    if (!scene.blocks[b].alive)
      continue;
    verts[b] = world_vertices<double>(scene.blocks[b].params, ico);
    for (std::size_t f = 0; f < ico.num_faces(); ++f) {
      const auto &t = ico.faces[f];
      total += triangle_area(verts[b][t[0]], verts[b][t[1]], verts[b][t[2]]);
      faces.push_back({static_cast<int>(b), static_cast<int>(f)});
      cum.push_back(total);
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double r = uni(rng) * total;
    const std::size_t i =
        std::min(faces.size() - 1, static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), r) - cum.begin()));
    const double r1 = uni(rng);
    const double r2 = uni(rng);
    const Barycentric bc = barycentric_from_uniform(r1, r2);
    const auto &t = ico.faces[faces[i].face];
    const Vec3 u = (bc.a0 * ico.unit[t[0]] + bc.a1 * ico.unit[t[1]] + bc.a2 * ico.unit[t[2]]).normalized();
    const Block &b = scene.blocks[faces[i].block];
    const Pose pose = b.pose();
    out.push_back(pose.rotation() * sq_vertex_trig<double>(trig_from_unit(u), b.shape()) + pose.t);
  }
  return out;
}

/// Splats fainter than this are left out of point-level geometry samples.
inline constexpr double kMinSampleOpacity = 0.1;

/// Centers of sufficiently opaque splats, subsampled without replacement to at most n.
inline std::vector<Vec3> sample_representation(const SplatSet &splats, std::size_t n, std::uint64_t seed) {
  require(n > 0, "sample_representation: n must be positive");
  std::vector<Vec3> pts;
  for (const auto &s : splats.splats)
    if (s.opacity >= kMinSampleOpacity)
      pts.push_back(s.center);
  require(!pts.empty(), "sample_representation: no visible splat");
  if (pts.size() <= n)
    return pts;
  std::vector<std::size_t> idx(pts.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < n; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
    std::swap(idx[k], idx[pick(rng)]);
  }
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k)
    out.push_back(pts[idx[k]]);
  return out;
}

struct MetricsReport {
  std::optional<double> cd;
  double psnr = 0.0;
  double ssim = 0.0;
  int parts = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    if (cd)
      j["cd"] = *cd;
    j["psnr"] = psnr;
    j["ssim"] = ssim;
    j["parts"] = parts;
    return j;
  }
};

/// Mean PSNR and SSIM of renders against masked targets over the given views.
inline std::pair<double, double> image_metrics(const SplatSet &splats, const Dataset &ds, const std::vector<int> &views,
                                               const RenderSettings &rs = {}) {
  require(!views.empty(), "image_metrics: no views");
  double p = 0.0, s = 0.0;
  for (int v : views) {
    const Image img = render(splats, ds.cameras[v], rs).rgb;
    const Image target = ds.masked_target(v);
    p += psnr(img, target);
    s += ssim(img, target);
  }
  return {p / views.size(), s / views.size()};
}

} // namespace sqgs
