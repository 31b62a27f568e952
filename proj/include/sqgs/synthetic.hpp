#pragma once

#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "hybrid.hpp"
#include "render.hpp"

namespace sqgs {

struct Triangle {
  Vec3 a, b, c;
  double area() const { return triangle_area(a, b, c); }
};

/// One ground-truth solid: an oriented box or a superquadric.
struct Primitive {
  std::string kind = "box"; // "box" | "superquadric" | "sphere"
  int part = 0;
  Vec3 center = Vec3::Zero();
  Vec4 rotation{1.0, 0.0, 0.0, 0.0};
  Vec3 half_extents = Vec3::Constant(0.25); // box
  SqShape shape;                            // superquadric and sphere
  Vec3 color = Vec3::Constant(0.8);

  Mat3 R() const { return quat_to_matrix<double>(rotation); }
  Vec3 local(const Vec3 &p) const { return R().transpose() * (p - center); }

  /// True when p lies strictly inside, at least `margin` away from the boundary (box) or below Psi = 1 - margin.
  bool inside(const Vec3 &p, double margin = 1e-9) const {
    const Vec3 q = local(p);
    if (kind == "box")
      return (q.cwiseAbs().array() < half_extents.array() - margin).all();
    return inside_outside<double>(q, shape) < 1.0 - margin;
  }

  /// True when the ray o + t d (t > 0) passes through the solid.
  bool hit_by_ray(const Vec3 &o, const Vec3 &d) const {
    const Vec3 lo = local(o), ld = R().transpose() * d;
    const Vec3 h = kind == "box" ? half_extents : shape.scale;
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      if (std::abs(ld[a]) < 1e-300) {
        if (std::abs(lo[a]) > h[a])
          return false;
        continue;
      }
      double ta = (-h[a] - lo[a]) / ld[a], tb = (h[a] - lo[a]) / ld[a];
      if (ta > tb)
        std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
    if (t0 > t1)
      return false;
    if (kind == "box")
      return true;
    constexpr int kSteps = 1024;
    for (int k = 0; k <= kSteps; ++k)
      if (inside_outside<double>(Vec3(lo + (t0 + (t1 - t0) * k / kSteps) * ld), shape) <= 1.0)
        return true;
    return false;
  }

  double volume_proxy() const {
    if (kind == "box")
      return 8.0 * half_extents.prod();
    return 4.0 / 3.0 * 3.14159265358979323846 * shape.scale.prod();
  }

  /// World-frame surface triangles.
  std::vector<Triangle> triangles() const {
    std::vector<Triangle> out;
    const Mat3 r = R();
    auto world = [&](const Vec3 &q) { return Vec3(r * q + center); };
    if (kind == "box") {
      const Vec3 h = half_extents;
      for (int axis = 0; axis < 3; ++axis)
        for (int sgn : {-1, 1}) {
          const int u = (axis + 1) % 3, v = (axis + 2) % 3;
          Vec3 corner[4];
          const double su[4] = {-1, 1, 1, -1}, sv[4] = {-1, -1, 1, 1};
          for (int k = 0; k < 4; ++k) {
            corner[k][axis] = sgn * h[axis];
            corner[k][u] = su[k] * h[u];
            corner[k][v] = sv[k] * h[v];
          }
          out.push_back({world(corner[0]), world(corner[1]), world(corner[2])});
          out.push_back({world(corner[0]), world(corner[2]), world(corner[3])});
        }
      return out;
    }
    const SqMesh m = tessellate(shape, 4);
    for (const auto &f : m.faces)
      out.push_back({world(m.vertices[f[0]]), world(m.vertices[f[1]]), world(m.vertices[f[2]])});
    return out;
  }
};

struct SyntheticSpec {
  std::string name = "synthetic";
  int views = 20;
  int resolution = 64;
  std::uint64_t seed = 0;
  double camera_radius = 4.0;
  double focal_factor = 1.1; // focal length in units of the image width
  int truth_points = 100000;
  int render_splats = 60000;
  int holdout = 0; // every holdout-th view goes to the test split (0: none)
  std::vector<Primitive> primitives;
};

inline Vec3 json_vec3(const nlohmann::json &j, const char *what) {
  const auto v = j.get<std::vector<double>>();
  require(v.size() == 3, std::string(what) + " needs 3 values");
  return Vec3(v[0], v[1], v[2]);
}

inline Primitive primitive_from_json(const nlohmann::json &j) {
  Primitive p;
  p.kind = j.value("kind", std::string("box"));
  p.part = j.value("part", 0);
  p.center = json_vec3(j.at("center"), "center");
  if (j.contains("rotation")) {
    const auto q = j.at("rotation").get<std::vector<double>>();
    require(q.size() == 4 && Vec4(q[0], q[1], q[2], q[3]).norm() > 0.0, "rotation needs a non-zero quaternion");
    p.rotation = Vec4(q[0], q[1], q[2], q[3]).normalized();
  }
  if (j.contains("color"))
    p.color = json_vec3(j.at("color"), "color");
  if (p.kind == "box") {
    p.half_extents = json_vec3(j.at("half_extents"), "half_extents");
    require((p.half_extents.array() > 0.0).all(), "box half_extents must be positive");
  } else if (p.kind == "sphere") {
    const double r = j.at("radius").get<double>();
    require(r > 0.0, "sphere radius must be positive");
    p.shape.scale = Vec3::Constant(r);
  } else if (p.kind == "superquadric") {
    p.shape.eps1 = j.at("eps1").get<double>();
    p.shape.eps2 = j.at("eps2").get<double>();
    p.shape.scale = json_vec3(j.at("scale"), "scale");
    require(p.shape.eps1 >= kEpsMin && p.shape.eps1 <= kEpsMax && p.shape.eps2 >= kEpsMin && p.shape.eps2 <= kEpsMax,
            "superquadric exponents must lie in [0.1, 1.9]");
    require((p.shape.scale.array() > 0.0).all(), "superquadric scales must be positive");
  } else {
    throw Error("unknown primitive kind '" + p.kind + "'");
  }
  return p;
}

inline nlohmann::json primitive_to_json(const Primitive &p) {
  nlohmann::json j{{"kind", p.kind},
                   {"part", p.part},
                   {"center", {p.center.x(), p.center.y(), p.center.z()}},
                   {"rotation", {p.rotation[0], p.rotation[1], p.rotation[2], p.rotation[3]}},
                   {"color", {p.color.x(), p.color.y(), p.color.z()}}};
  if (p.kind == "box")
    j["half_extents"] = {p.half_extents.x(), p.half_extents.y(), p.half_extents.z()};
  else if (p.kind == "sphere")
    j["radius"] = p.shape.scale.x();
  else {
    j["eps1"] = p.shape.eps1;
    j["eps2"] = p.shape.eps2;
    j["scale"] = {p.shape.scale.x(), p.shape.scale.y(), p.shape.scale.z()};
  }
  return j;
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json &j) {
  SyntheticSpec s;
  try {
    s.name = j.value("name", s.name);
    s.views = j.value("views", s.views);
    s.resolution = j.value("resolution", s.resolution);
    s.seed = j.value("seed", s.seed);
    s.camera_radius = j.value("camera_radius", s.camera_radius);
    s.focal_factor = j.value("focal_factor", s.focal_factor);
    s.truth_points = j.value("truth_points", s.truth_points);
    s.render_splats = j.value("render_splats", s.render_splats);
    s.holdout = j.value("holdout", s.holdout);
    for (const auto &p : j.at("primitives"))
      s.primitives.push_back(primitive_from_json(p));
  } catch (const nlohmann::json::exception &e) {
    throw Error("malformed synthetic spec: " + std::string(e.what()));
  }
  return s;
}

inline nlohmann::json synthetic_spec_to_json(const SyntheticSpec &s) {
  nlohmann::json j{{"name", s.name},
                   {"views", s.views},
                   {"resolution", s.resolution},
                   {"seed", s.seed},
                   {"camera_radius", s.camera_radius},
                   {"focal_factor", s.focal_factor},
                   {"truth_points", s.truth_points},
                   {"render_splats", s.render_splats},
                   {"holdout", s.holdout}};
  j["primitives"] = nlohmann::json::array();
  for (const auto &p : s.primitives)
    j["primitives"].push_back(primitive_to_json(p));
  return j;
}

/// Ground truth of a synthetic scene.
struct SyntheticTruth {
  std::vector<Primitive> primitives;
  std::vector<Vec3> points;
  std::vector<int> labels; // part id per point

  int part_count() const {
    int n = 0;
    for (const auto &p : primitives)
      n = std::max(n, p.part + 1);
    return n;
  }

  /// Volume-weighted center of every part.
  std::vector<Vec3> part_centers() const {
    const int n = part_count();
    std::vector<Vec3> c(n, Vec3::Zero());
    std::vector<double> w(n, 0.0);
    for (const auto &p : primitives) {
      c[p.part] += p.volume_proxy() * p.center;
      w[p.part] += p.volume_proxy();
    }
    for (int i = 0; i < n; ++i)
      c[i] /= w[i];
    return c;
  }
};

/// n area-uniform points on a triangle soup, with the index of the source triangle.
inline std::vector<std::pair<Vec3, int>> sample_triangles(const std::vector<Triangle> &tris, std::size_t n,
                                                          std::mt19937_64 &rng) {
  std::vector<double> cum(tris.size());
  double total = 0.0;
  for (std::size_t i = 0; i < tris.size(); ++i) {
    total += tris[i].area();
    cum[i] = total;
  }
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<std::pair<Vec3, int>> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double r = uni(rng) * total;
    const std::size_t t = std::min(tris.size() - 1, static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), r) - cum.begin()));
    const double r1 = uni(rng);
    const double r2 = uni(rng);
    const Barycentric b = barycentric_from_uniform(r1, r2);
    out.emplace_back(b.a0 * tris[t].a + b.a1 * tris[t].b + b.a2 * tris[t].c, static_cast<int>(t));
  }
  return out;
}

/// Cameras on a Fibonacci sphere around the origin, all looking at it.
inline std::vector<Camera> orbit_cameras(int n, double radius, int resolution, double focal_factor) {
  require(n > 0 && resolution > 0 && radius > 0.0, "orbit_cameras: invalid arguments");
  const double golden = 3.14159265358979323846 * (3.0 - std::sqrt(5.0));
  std::vector<Camera> cams;
  for (int i = 0; i < n; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double phi = golden * i;
    const Vec3 eye = radius * Vec3(r * std::cos(phi), y, r * std::sin(phi));
    cams.push_back(Camera::look_at(eye, Vec3::Zero(), Vec3::UnitY(), focal_factor * resolution, resolution, resolution));
  }
  return cams;
}

/**
 * Renders a synthetic primitive scene with this library's rasterizer. Every
 * primitive's visible surface (the part not buried in another primitive)
 * is covered by dense opaque flat-colored splats. Masks are exact: a pixel
 * is foreground when the ray through its center hits a primitive.
 * Colors are quantized to 8 bits so the dataset survives a PNG round trip.
 * Truth points are area-uniform samples of the same visible surface.
 */
inline std::pair<Dataset, SyntheticTruth> make_synthetic(const SyntheticSpec &spec) {
  require(!spec.primitives.empty(), "synthetic spec has no primitives");
  require(spec.views >= 1 && spec.resolution >= 8, "synthetic spec needs views >= 1 and resolution >= 8");
  require(spec.truth_points > 0 && spec.render_splats > 0, "synthetic point counts must be positive");
  const Aabb unit;
  std::vector<std::vector<Triangle>> tris;
  double total_area = 0.0;
  for (const auto &p : spec.primitives) {
    tris.push_back(p.triangles());
    for (const auto &t : tris.back()) {
      for (const Vec3 &v : {t.a, t.b, t.c})
        require(unit.contains(v, 1e-9), "synthetic primitives must lie inside the [-1, 1]^3 box");
      total_area += t.area();
    }
  }
  auto buried = [&](const Vec3 &x, std::size_t self) {
    for (std::size_t q = 0; q < spec.primitives.size(); ++q)
      if (q != self && spec.primitives[q].inside(x))
        return true;
    return false;
  };

  SyntheticTruth truth;
  truth.primitives = spec.primitives;
  SplatSet splats;
  splats.sh_degree = 0;
  const double sigma = std::sqrt(total_area / spec.render_splats);
  for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
    const Primitive &prim = spec.primitives[i];
    double area = 0.0;
    for (const auto &t : tris[i])
      area += t.area();
    std::mt19937_64 rng(mix_seed(spec.seed, 10 + i));
    const auto n_truth = static_cast<std::size_t>(std::llround(spec.truth_points * area / total_area));
    for (const auto &[x, t] : sample_triangles(tris[i], n_truth, rng))
      if (!buried(x, i)) {
        truth.points.push_back(x);
        truth.labels.push_back(prim.part);
      }
    const auto n_splat = static_cast<std::size_t>(std::llround(spec.render_splats * area / total_area));
    for (const auto &[x, t] : sample_triangles(tris[i], n_splat, rng)) {
      if (buried(x, i))
        continue;
      const auto &tri = tris[i][t];
      const auto ff = face_frame<double>(tri.a, tri.b, tri.c, 1.0);
      Splat s;
      s.center = x;
      s.frame = ff.frame;
      s.scale2 = s.scale3 = sigma;
      s.opacity = 0.99;
      s.block_id = prim.part;
      splats.splats.push_back(s);
      for (int c = 0; c < 3; ++c)
        splats.sh.push_back(sh_dc_for(prim.color[c]));
    }
  }
  splats.face.assign(splats.size(), -1);

  Dataset ds;
  ds.name = spec.name;
  ds.cameras = orbit_cameras(spec.views, spec.camera_radius, spec.resolution, spec.focal_factor);
  for (const auto &cam : ds.cameras) {
    const RenderedImage img = render(splats, cam);
    Image mask(cam.width, cam.height, 1, 0.0);
    const Vec3 eye = cam.position();
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        const Vec3 d = cam.ray_direction(x + 0.5, y + 0.5);
        for (const auto &prim : spec.primitives)
          if (prim.hit_by_ray(eye, d)) {
            mask.at(x, y) = 1.0;
            break;
          }
      }
    Image rgb = img.rgb;
    for (auto &v : rgb.data)
      v = quantize(v) / 255.0;
    ds.images.push_back(std::move(rgb));
    ds.masks.push_back(std::move(mask));
  }
  if (spec.holdout > 0)
    for (int v = 0; v < spec.views; ++v)
      (v % spec.holdout == spec.holdout - 1 ? ds.test : ds.train).push_back(v);
  ds.validate();
  return {std::move(ds), std::move(truth)};
}

/// Convenience overload: primitive list plus the camera rig parameters.
inline std::pair<Dataset, SyntheticTruth> make_synthetic(const std::vector<Primitive> &prims, int n_views,
                                                         int resolution, std::uint64_t seed) {
  SyntheticSpec s;
  s.primitives = prims;
  s.views = n_views;
  s.resolution = resolution;
  s.seed = seed;
  return make_synthetic(s);
}

} // namespace sqgs
