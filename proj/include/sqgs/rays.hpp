#pragma once

#include <random>
#include <vector>

#include "camera.hpp"
#include "image.hpp"

namespace sqgs {

/// Labeled rays with a fixed number of stratified samples each.
struct RayBatch {
  int samples_per_ray = 0;
  std::vector<Vec3> origins;
  std::vector<Vec3> directions;
  std::vector<int> labels;    // 1 inside the foreground mask
  std::vector<Vec3> samples;  // ray-major, samples_per_ray per ray
  std::vector<double> depths; // ray parameter of every sample

  std::size_t size() const { return labels.size(); }
  const Vec3 &sample(std::size_t r, int j) const { return samples[r * samples_per_ray + j]; }
};

/// Random 3D points used by the overlap and enter terms.
struct PointSample {
  std::vector<Vec3> points;
  std::vector<int> owner; // optional block id per point
};

/// Slab intersection of a ray with a box; false when it misses.
inline bool intersect_aabb(const Vec3 &o, const Vec3 &d, const Aabb &box, double &t0, double &t1) {
  t0 = 0.0;
  t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < box.lo[a] || o[a] > box.hi[a])
        return false;
      continue;
    }
    double ta = (box.lo[a] - o[a]) / d[a];
    double tb = (box.hi[a] - o[a]) / d[a];
    if (ta > tb)
      std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t1 > t0;
}

/**
 * Casts rays through random pixels of every view. Labels come from the mask;
 * samples are stratified over the ray's intersection with `box`. Rays that
 * miss the box are redrawn.
 */
inline RayBatch sample_rays(const std::vector<Camera> &cams, const std::vector<Image> &masks, int rays_per_view,
                            int samples_per_ray, const Aabb &box, std::uint64_t seed) {
  require(cams.size() == masks.size(), "sample_rays: cameras and masks differ in count");
  require(rays_per_view > 0 && samples_per_ray > 0, "sample_rays: counts must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  RayBatch b;
  b.samples_per_ray = samples_per_ray;
  for (std::size_t v = 0; v < cams.size(); ++v) {
    const Camera &cam = cams[v];
    const Image &mask = masks[v];
    require(mask.width == cam.width && mask.height == cam.height, "sample_rays: mask size differs from camera");
    std::uniform_int_distribution<int> px(0, cam.width - 1), py(0, cam.height - 1);
    int made = 0;
    for (int attempt = 0; made < rays_per_view && attempt < rays_per_view * 100; ++attempt) {
      const int x = px(rng), y = py(rng);
      const Vec3 o = cam.position();
      const Vec3 d = cam.ray_direction(x + 0.5, y + 0.5);
      double t0, t1;
      if (!intersect_aabb(o, d, box, t0, t1))
        continue;
      b.origins.push_back(o);
      b.directions.push_back(d);
      b.labels.push_back(mask.at(x, y) > 0.5 ? 1 : 0);
      for (int j = 0; j < samples_per_ray; ++j) {
        const double t = t0 + (t1 - t0) * (j + uni(rng)) / samples_per_ray;
        b.depths.push_back(t);
        b.samples.push_back(o + t * d);
      }
      ++made;
    }
  }
  return b;
}

inline PointSample sample_points(const Aabb &box, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  PointSample s;
  s.points.reserve(n);
  for (int i = 0; i < n; ++i) {
    const Vec3 u(uni(rng), uni(rng), uni(rng));
    s.points.push_back(box.lo + u.cwiseProduct(box.size()));
  }
  return s;
}

} // namespace sqgs
