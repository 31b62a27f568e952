#pragma once

#include <random>
#include <span>
#include <vector>

#include "sq_core.hpp"

namespace sqgs {

inline int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Weights of the training objective.
struct LossWeights {
  double lambda_ssim = 0.2;
  double cov = 10.0;
  double over = 1.0;
  double par = 0.002;
  double opa = 0.01;
  double enter = 1.0;
  double scale = 1.0;
  double mask = 0.1;
};

struct Barycentric {
  double a0 = 1.0, a1 = 0.0, a2 = 0.0;
};

/// Maps two uniform numbers in [0, 1] to an area-uniform barycentric triple.
inline Barycentric barycentric_from_uniform(double r1, double r2) {
  const double u = std::sqrt(r1);
  return {1.0 - u, u * (1.0 - r2), u * r2};
}

inline std::vector<Barycentric> sample_barycentric(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Barycentric> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r1 = uni(rng);
    const double r2 = uni(rng);
    out.push_back(barycentric_from_uniform(r1, r2));
  }
  return out;
}

/// Tangent frame (columns r1 = normal, r2, r3) and extents of a face.
template <typename T> struct FaceFrameT {
  Mat3T<T> frame;
  T scale2;
  T scale3;
};

inline constexpr double kMinFaceArea = 1e-12;

template <typename T>
FaceFrameT<T> face_frame(const Vec3T<T> &v1, const Vec3T<T> &v2, const Vec3T<T> &v3, double c) {
  using std::abs;
  using std::sqrt;
  const Vec3T<T> n = (v2 - v1).cross(v3 - v1);
  const T n2 = n.squaredNorm();
  if (!(0.5 * std::sqrt(value_of(n2)) > kMinFaceArea))
    throw Error("degenerate face: cannot build a tangent frame");
  const Vec3T<T> m = (v1 + v2 + v3) / T(3.0);
  const Vec3T<T> r1 = n / sqrt(n2);
  const Vec3T<T> d1 = v1 - m;
  const T d1n = sqrt(d1.squaredNorm());
  const Vec3T<T> r2 = d1 / d1n;
  const Vec3T<T> d2 = v2 - m;
  const Vec3T<T> o = d2 - r1 * d2.dot(r1) - r2 * d2.dot(r2);
  const Vec3T<T> r3 = o / sqrt(o.squaredNorm());
  FaceFrameT<T> f;
  f.frame.col(0) = r1;
  f.frame.col(1) = r2;
  f.frame.col(2) = r3;
  f.scale2 = T(c) * d1n;
  f.scale3 = T(c) * abs(d2.dot(r3));
  return f;
}

/// Block tessellation vertices in world coordinates.
template <typename T>
std::vector<Vec3T<T>> world_vertices(const BlockParamsT<T> &p, const Icosphere &ico) {
  const SqShapeT<T> shape = shape_of(p);
  const PoseT<T> pose = pose_of(p);
  const Mat3T<T> R = pose.rotation();
  std::vector<Vec3T<T>> out;
  out.reserve(ico.num_vertices());
  for (const auto &a : ico.trig)
    out.push_back(R * sq_vertex_trig<T>(a, shape) + pose.t);
  return out;
}

template <typename T> Vec3T<T> barycentric_point(const Barycentric &b, const Vec3T<T> &v1, const Vec3T<T> &v2, const Vec3T<T> &v3) {
  return v1 * T(b.a0) + v2 * T(b.a1) + v3 * T(b.a2);
}

struct HybridSettings {
  int level = 2;
  int gaussians_per_face = 4;
  double c = 0.1;
  int sh_degree = 2;
};

/// One superquadric with its attached texture.
struct Block {
  int id = 0;
  BlockParams params{};
  std::vector<double> sh;          // splat-major, then coefficient, then channel
  std::vector<Barycentric> bary;   // faces * gaussians_per_face, fixed at creation
  bool alive = true;

  double tau() const { return opacity_of(params); }
  SqShape shape() const { return shape_of(params); }
  Pose pose() const { return pose_of(params); }
};

/// Geometry-carrying splat; learnable geometry is derived from its owner in the bound stage.
template <typename T> struct SplatGeomT {
  Vec3T<T> center;
  Mat3T<T> frame; // columns r1 (normal), r2, r3
  T scale2;
  T scale3;
  T opacity;
};

struct Splat {
  Vec3 center = Vec3::Zero();
  Mat3 frame = Mat3::Identity();
  double scale2 = 0.0;
  double scale3 = 0.0;
  double opacity = 1.0;
  int block_id = -1;

  SplatGeomT<double> geom() const { return {center, frame, scale2, scale3, opacity}; }
};

/// Flat array of splats with their SH coefficients.
struct SplatSet {
  int sh_degree = 0;
  std::vector<Splat> splats;
  std::vector<double> sh;         // size() * K * 3
  std::vector<int> block_index;   // bound sets: position of the owner in HybridScene::blocks
  std::vector<int> face;          // bound sets: owning face, -1 for free splats

  std::size_t size() const { return splats.size(); }
  int coeffs() const { return sh_coeff_count(sh_degree); }
  std::span<const double> sh_of(std::size_t i) const {
    const std::size_t k = static_cast<std::size_t>(coeffs()) * 3;
    return {sh.data() + i * k, k};
  }
};

struct HybridScene {
  HybridSettings settings;
  Icosphere ico;
  std::vector<Block> blocks;
  LossWeights weights;
  Aabb bbox;

  std::size_t splats_per_block() const { return ico.num_faces() * static_cast<std::size_t>(settings.gaussians_per_face); }
  std::size_t sh_per_block() const { return splats_per_block() * static_cast<std::size_t>(sh_coeff_count(settings.sh_degree)) * 3; }

  int alive_count() const {
    int n = 0;
    for (const auto &b : blocks)
      n += b.alive ? 1 : 0;
    return n;
  }
  std::vector<int> alive_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < blocks.size(); ++i)
      if (blocks[i].alive)
        out.push_back(static_cast<int>(i));
    return out;
  }

  /// Appends a block with zeroed SH and freshly sampled barycentric placement.
  Block &add_block(const BlockParams &p, std::uint64_t bary_seed) {
    Block b;
    b.id = static_cast<int>(blocks.size());
    b.params = p;
    b.sh.assign(sh_per_block(), 0.0);
    b.bary = sample_barycentric(splats_per_block(), bary_seed);
    blocks.push_back(std::move(b));
    return blocks.back();
  }
};

inline HybridScene make_empty_scene(const HybridSettings &settings, const Aabb &bbox) {
  require(settings.gaussians_per_face > 0, "gaussians_per_face must be positive");
  require(settings.sh_degree >= 0 && settings.sh_degree <= 3, "sh_degree must be in [0, 3]");
  require(settings.c > 0.0, "splat size factor c must be positive");
  HybridScene s;
  s.settings = settings;
  s.ico = make_icosphere(settings.level);
  s.bbox = bbox;
  return s;
}

/**
 * Places gaussians_per_face splats on every face of a world-frame block mesh.
 * Splats share the face frame and extents and take the block opacity.
 */
inline SplatSet attach(const Block &block, const SqMesh &world_mesh, int gaussians_per_face, double c, int sh_degree,
                       int block_index = 0) {
  require(gaussians_per_face > 0, "gaussians_per_face must be positive");
  const std::size_t nf = world_mesh.faces.size();
  require(block.bary.size() >= nf * gaussians_per_face, "block barycentric table too small for mesh");
  SplatSet out;
  out.sh_degree = sh_degree;
  const std::size_t k3 = static_cast<std::size_t>(sh_coeff_count(sh_degree)) * 3;
  out.splats.reserve(nf * gaussians_per_face);
  out.sh.reserve(nf * gaussians_per_face * k3);
  const double tau = block.tau();
  for (std::size_t f = 0; f < nf; ++f) {
    const auto &tri = world_mesh.faces[f];
    const Vec3 &v1 = world_mesh.vertices[tri[0]];
    const Vec3 &v2 = world_mesh.vertices[tri[1]];
    const Vec3 &v3 = world_mesh.vertices[tri[2]];
    const FaceFrameT<double> ff = face_frame<double>(v1, v2, v3, c);
    for (int g = 0; g < gaussians_per_face; ++g) {
      const std::size_t slot = f * gaussians_per_face + g;
      Splat s;
      s.center = barycentric_point<double>(block.bary[slot], v1, v2, v3);
      s.frame = ff.frame;
      s.scale2 = ff.scale2;
      s.scale3 = ff.scale3;
      s.opacity = tau;
      s.block_id = block.id;
      out.splats.push_back(s);
      if (block.sh.size() >= (slot + 1) * k3)
        out.sh.insert(out.sh.end(), block.sh.begin() + slot * k3, block.sh.begin() + (slot + 1) * k3);
      else
        out.sh.insert(out.sh.end(), k3, 0.0);
      out.block_index.push_back(block_index);
      out.face.push_back(static_cast<int>(f));
    }
  }
  return out;
}

inline SqMesh world_mesh(const Block &b, const Icosphere &ico) {
  SqMesh m;
  m.faces = ico.faces;
  m.vertices = world_vertices<double>(b.params, ico);
  return m;
}

/// Splats of every alive block (or a single block when only >= 0), in block order.
inline SplatSet attach_scene(const HybridScene &scene, int only = -1) {
  SplatSet out;
  out.sh_degree = scene.settings.sh_degree;
  for (std::size_t i = 0; i < scene.blocks.size(); ++i) {
    const Block &b = scene.blocks[i];
    if (!b.alive || (only >= 0 && static_cast<int>(i) != only))
      continue;
    SplatSet part = attach(b, world_mesh(b, scene.ico), scene.settings.gaussians_per_face, scene.settings.c,
                           scene.settings.sh_degree, static_cast<int>(i));
    out.splats.insert(out.splats.end(), part.splats.begin(), part.splats.end());
    out.sh.insert(out.sh.end(), part.sh.begin(), part.sh.end());
    out.block_index.insert(out.block_index.end(), part.block_index.begin(), part.block_index.end());
    out.face.insert(out.face.end(), part.face.begin(), part.face.end());
  }
  return out;
}

/// tau * sigmoid(-D / gamma).
template <typename T> T soft_occupancy(const Vec3T<T> &p, const BlockParamsT<T> &params, double gamma) {
  const T d = signed_distance<T>(p, shape_of(params), pose_of(params));
  return opacity_of(params) * sigmoid(T(-d / gamma));
}

inline double soft_occupancy(const Vec3 &p, const Block &b, double gamma) {
  require(gamma > 0.0, "occupancy temperature must be positive");
  return soft_occupancy<double>(p, b.params, gamma);
}

/// Signed distance of a world point to a block.
template <typename T> T block_distance(const Vec3T<T> &p, const BlockParamsT<T> &params) {
  return signed_distance<T>(p, shape_of(params), pose_of(params));
}

inline double block_distance(const Vec3 &p, const Block &b) { return block_distance<double>(p, b.params); }

} // namespace sqgs
