#pragma once

#include <array>
#include <map>
#include <utility>
#include <vector>

#include "common.hpp"

namespace sqgs {

inline constexpr double kEpsMin = 0.1;
inline constexpr double kEpsMax = 1.9;

/// Superquadric shape exponents and axis scales.
template <typename T> struct SqShapeT {
  T eps1{1.0};
  T eps2{1.0};
  Vec3T<T> scale{T(1.0), T(1.0), T(1.0)};
};
using SqShape = SqShapeT<double>;

/// Rigid local-to-world transform; q = (w, x, y, z).
template <typename T> struct PoseT {
  Vec4T<T> q{T(1.0), T(0.0), T(0.0), T(0.0)};
  Vec3T<T> t{T(0.0), T(0.0), T(0.0)};

  Mat3T<T> rotation() const { return quat_to_matrix<T>(q); }
};
using Pose = PoseT<double>;

/// Trigonometric factors of one (theta, phi) direction.
struct AngularTrig {
  double cos_theta, sin_theta, cos_phi, sin_phi;
};

/// sq_vertex evaluated from precomputed trigonometric factors.
template <typename T> Vec3T<T> sq_vertex_trig(const AngularTrig &a, const SqShapeT<T> &s) {
  const T ct = spow(T(a.cos_theta), s.eps1);
  return Vec3T<T>(s.scale[0] * ct * spow(T(a.cos_phi), s.eps2), s.scale[1] * spow(T(a.sin_theta), s.eps1),
                  s.scale[2] * ct * spow(T(a.sin_phi), s.eps2));
}

/**
 * Superquadric surface point at azimuth theta and elevation phi, local frame.
 * The y axis carries the eps1 exponent.
 */
template <typename T> Vec3T<T> sq_vertex(double theta, double phi, const SqShapeT<T> &s) {
  return sq_vertex_trig<T>({std::cos(theta), std::sin(theta), std::cos(phi), std::sin(phi)}, s);
}

/// Inside-outside function: < 1 inside, 1 on the surface, > 1 outside.
template <typename T> T inside_outside(const Vec3T<T> &p, const SqShapeT<T> &s) {
  const T e2 = T(2.0) / s.eps2;
  const T e1 = T(2.0) / s.eps1;
  using std::pow;
  // xz is strictly positive once the coordinates are floored; it is not floored itself.
  const T xz = fpow(T(p[0] / s.scale[0]), e2) + fpow(T(p[2] / s.scale[2]), e2);
  return pow(xz, T(s.eps2 / s.eps1)) + fpow(T(p[1] / s.scale[1]), e1);
}

/// World point expressed in the local frame of `pose`.
template <typename T> Vec3T<T> to_local(const Vec3T<T> &p, const PoseT<T> &pose) {
  return pose.rotation().transpose() * (p - pose.t);
}

/// Approximate signed distance Psi(pose^-1 p) - 1.
template <typename T> T signed_distance(const Vec3T<T> &p, const SqShapeT<T> &s, const PoseT<T> &pose) {
  return inside_outside<T>(to_local<T>(p, pose), s) - T(1.0);
}

/// Unit icosphere used as the tessellation template for every block.
struct Icosphere {
  int level = 0;
  std::vector<Vec3> unit;
  std::vector<AngularTrig> trig;
  std::vector<std::array<int, 3>> faces;

  std::size_t num_vertices() const { return unit.size(); }
  std::size_t num_faces() const { return faces.size(); }
};

inline AngularTrig trig_from_unit(const Vec3 &u) {
  const double r = std::hypot(u.x(), u.z());
  AngularTrig a{};
  a.cos_theta = r;
  a.sin_theta = u.y();
  if (r > 0.0) {
    a.cos_phi = u.x() / r;
    a.sin_phi = u.z() / r;
  } else {
    a.cos_phi = 1.0;
    a.sin_phi = 0.0;
  }
  return a;
}

inline Icosphere make_icosphere(int level) {
  require(level >= 0 && level <= 4, "icosphere level must be in [0, 4], got " + std::to_string(level));
  const double g = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, g, 0}, {1, g, 0}, {-1, -g, 0}, {1, -g, 0}, {0, -1, g}, {0, 1, g},
                         {0, -1, -g}, {0, 1, -g}, {g, 0, -1}, {g, 0, 1}, {-g, 0, -1}, {-g, 0, 1}};
  for (auto &p : v)
    p.normalize();
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end())
        return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      mid.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(f.size() * 4);
    for (const auto &t : f) {
      const int a = midpoint(t[0], t[1]);
      const int b = midpoint(t[1], t[2]);
      const int c = midpoint(t[2], t[0]);
      next.push_back({t[0], a, c});
      next.push_back({t[1], b, a});
      next.push_back({t[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  Icosphere ico;
  ico.level = level;
  ico.unit = std::move(v);
  ico.faces = std::move(f);
  ico.trig.reserve(ico.unit.size());
  for (const auto &u : ico.unit)
    ico.trig.push_back(trig_from_unit(u));
  return ico;
}

/// Tessellated superquadric; vertices in whichever frame the producer chose.
struct SqMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Vec2> angular_coords; // (theta, phi)
};

inline SqMesh tessellate(const SqShape &shape, const Icosphere &ico) {
  SqMesh m;
  m.faces = ico.faces;
  m.vertices.reserve(ico.num_vertices());
  m.angular_coords.reserve(ico.num_vertices());
  for (const auto &a : ico.trig) {
    m.vertices.push_back(sq_vertex_trig<double>(a, shape));
    m.angular_coords.emplace_back(std::atan2(a.sin_theta, a.cos_theta), std::atan2(a.sin_phi, a.cos_phi));
  }
  return m;
}

inline SqMesh tessellate(const SqShape &shape, int level) { return tessellate(shape, make_icosphere(level)); }

inline SqMesh to_world(const SqMesh &mesh, const Pose &pose) {
  SqMesh out = mesh;
  const Mat3 R = pose.rotation();
  for (auto &v : out.vertices)
    v = R * v + pose.t;
  return out;
}

inline double triangle_area(const Vec3 &a, const Vec3 &b, const Vec3 &c) { return 0.5 * (b - a).cross(c - a).norm(); }

// ---------------------------------------------------------------------------
// Free parametrization of one block. Exponents are sigmoid-mapped into
// [kEpsMin, kEpsMax], scales are exp-mapped, the quaternion is stored
// unnormalized and normalized on use.

namespace param {
inline constexpr int kEps1 = 0;
inline constexpr int kEps2 = 1;
inline constexpr int kScale = 2; // 2, 3, 4
inline constexpr int kQuat = 5;  // 5..8
inline constexpr int kTrans = 9; // 9..11
inline constexpr int kOpacity = 12;
inline constexpr int kCount = 13;
} // namespace param

template <typename T> using BlockParamsT = std::array<T, param::kCount>;
using BlockParams = BlockParamsT<double>;

template <typename T> T eps_from_free(const T &a) { return T(kEpsMin) + T(kEpsMax - kEpsMin) * sigmoid(a); }

inline double eps_to_free(double eps) {
  const double u = (eps - kEpsMin) / (kEpsMax - kEpsMin);
  require(u > 0.0 && u < 1.0, "shape exponent outside (eps_min, eps_max)");
  return logit(u);
}

template <typename T> SqShapeT<T> shape_of(const BlockParamsT<T> &p) {
  using std::exp;
  SqShapeT<T> s;
  s.eps1 = eps_from_free(p[param::kEps1]);
  s.eps2 = eps_from_free(p[param::kEps2]);
  for (int i = 0; i < 3; ++i)
    s.scale[i] = exp(p[param::kScale + i]);
  return s;
}

template <typename T> PoseT<T> pose_of(const BlockParamsT<T> &p) {
  PoseT<T> pose;
  for (int i = 0; i < 4; ++i)
    pose.q[i] = p[param::kQuat + i];
  for (int i = 0; i < 3; ++i)
    pose.t[i] = p[param::kTrans + i];
  return pose;
}

template <typename T> T opacity_of(const BlockParamsT<T> &p) { return sigmoid(p[param::kOpacity]); }

inline BlockParams make_block_params(const SqShape &s, const Pose &pose, double tau) {
  BlockParams p{};
  p[param::kEps1] = eps_to_free(s.eps1);
  p[param::kEps2] = eps_to_free(s.eps2);
  for (int i = 0; i < 3; ++i) {
    require(s.scale[i] > 0.0, "superquadric scales must be positive");
    p[param::kScale + i] = std::log(s.scale[i]);
  }
  const Vec4 q = pose.q.normalized();
  for (int i = 0; i < 4; ++i)
    p[param::kQuat + i] = q[i];
  for (int i = 0; i < 3; ++i)
    p[param::kTrans + i] = pose.t[i];
  require(tau > 0.0 && tau < 1.0, "block opacity must be in (0, 1)");
  p[param::kOpacity] = logit(tau);
  return p;
}

/// Seeds every parameter of a double block as an independent Jet variable.
template <int N> BlockParamsT<Jet<N>> seed_block_jets(const BlockParams &p) {
  static_assert(N >= param::kCount);
  BlockParamsT<Jet<N>> out;
  for (int i = 0; i < param::kCount; ++i)
    out[i] = Jet<N>(p[i], i);
  return out;
}

} // namespace sqgs
