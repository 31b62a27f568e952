#pragma once

#include <optional>
#include <vector>

#include "render.hpp"

namespace sqgs {

/// Gradient of a scalar objective w.r.t. one block's free parameters and SH.
struct BlockGrad {
  BlockParams params{};
  std::vector<double> sh;
};

/// Gradients for every block of a scene, indexed like HybridScene::blocks.
struct SceneGrad {
  std::vector<BlockGrad> blocks;

  static SceneGrad zeros_like(const HybridScene &scene) {
    SceneGrad g;
    g.blocks.resize(scene.blocks.size());
    for (std::size_t i = 0; i < scene.blocks.size(); ++i)
      g.blocks[i].sh.assign(scene.blocks[i].sh.size(), 0.0);
    return g;
  }
  void add_params(int block, const Eigen::Matrix<double, param::kCount, 1> &v, double w = 1.0) {
    for (int i = 0; i < param::kCount; ++i)
      blocks[block].params[i] += w * v[i];
  }
};

using BlockJet = Jet<param::kCount>;

/**
 * Chains per-splat screen-space gradients of a bound splat set back to block
 * parameters (through tessellation, face frames and barycentric placement)
 * and to SH coefficients. `bound` must come from attach_scene(scene).
 */
inline void backprop_bound(const HybridScene &scene, const SplatSet &bound, const Camera &cam, const RasterState &st,
                           const std::vector<ProjectedGrad> &pg, const RenderSettings &rs, SceneGrad &out) {
  require(bound.size() == pg.size() && st.proj.size() == pg.size(), "backprop: forward/backward size mismatch");
  const int degree = scene.settings.sh_degree;
  const int gpf = scene.settings.gaussians_per_face;
  const std::size_t k3 = static_cast<std::size_t>(sh_coeff_count(degree)) * 3;
  const std::size_t nf = scene.ico.num_faces();

  std::size_t begin = 0;
  while (begin < bound.size()) {
    const int bi = bound.block_index[begin];
    std::size_t end = begin;
    while (end < bound.size() && bound.block_index[end] == bi)
      ++end;
    const Block &block = scene.blocks[bi];
    require(end - begin == nf * gpf, "backprop: bound splat layout does not match the scene");

    std::vector<char> face_needed(nf, 0);
    bool any = false;
    for (std::size_t s = begin; s < end; ++s)
      if (st.proj[s].valid && !pg[s].zero()) {
        face_needed[bound.face[s]] = 1;
        any = true;
      }
    if (!any) {
      begin = end;
      continue;
    }

    const auto jp = seed_block_jets<param::kCount>(block.params);
    const auto verts = world_vertices<BlockJet>(jp, scene.ico);
    const BlockJet opacity = opacity_of(jp);
    std::vector<std::optional<FaceFrameT<BlockJet>>> frames(nf);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t f = 0; f < static_cast<std::ptrdiff_t>(nf); ++f) {
      if (!face_needed[f])
        continue;
      const auto &tri = scene.ico.faces[f];
      frames[f] = face_frame<BlockJet>(verts[tri[0]], verts[tri[1]], verts[tri[2]], scene.settings.c);
    }

    std::vector<Eigen::Matrix<double, param::kCount, 1>> contrib(end - begin,
                                                                Eigen::Matrix<double, param::kCount, 1>::Zero());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t s = static_cast<std::ptrdiff_t>(begin); s < static_cast<std::ptrdiff_t>(end); ++s) {
      if (!st.proj[s].valid || pg[s].zero())
        continue;
      const int f = bound.face[s];
      const std::size_t slot = static_cast<std::size_t>(s - begin);
      const auto &tri = scene.ico.faces[f];
      SplatGeomT<BlockJet> g;
      g.center = barycentric_point<BlockJet>(block.bary[slot], verts[tri[0]], verts[tri[1]], verts[tri[2]]);
      g.frame = frames[f]->frame;
      g.scale2 = frames[f]->scale2;
      g.scale3 = frames[f]->scale3;
      g.opacity = opacity;
      ProjectedT<BlockJet> pj;
      if (!project_full<BlockJet>(g, bound.sh_of(s), degree, cam, rs, pj))
        continue;
      contrib[slot] = contract<param::kCount>(pj, pg[s]);
    }
    auto &bg = out.blocks[bi];
    for (std::size_t s = begin; s < end; ++s) {
      const std::size_t slot = s - begin;
      for (int i = 0; i < param::kCount; ++i)
        bg.params[i] += contrib[slot][i];
      if (st.proj[s].valid && !pg[s].color.isZero(0.0))
        sh_gradient(bound.splats[s].center, bound.sh_of(s), degree, cam, pg[s].color,
                    std::span<double>(bg.sh.data() + slot * k3, k3));
    }
    begin = end;
  }
}

// ---------------------------------------------------------------------------
// Decoupled splats. Each splat stores its bound-stage state as a base and
// learns residuals on top of it: frame = base_frame * R(dq), scale = base * exp(d).
// With zero residuals the geometry reproduces the bound splat exactly.

namespace free_param {
inline constexpr int kCenter = 0; // 0..2
inline constexpr int kQuat = 3;   // 3..6
inline constexpr int kScale2 = 7;
inline constexpr int kScale3 = 8;
inline constexpr int kOpacity = 9;
inline constexpr int kCount = 10;
} // namespace free_param

template <typename T> using FreeParamsT = std::array<T, free_param::kCount>;
using FreeParams = FreeParamsT<double>;
using FreeJet = Jet<free_param::kCount>;

struct FreeSplat {
  FreeParams params{};
  Mat3 base_frame = Mat3::Identity();
  double base_scale2 = 0.0;
  double base_scale3 = 0.0;
  int block_id = -1; // non-learnable part attribute
};

struct FreeSplats {
  int sh_degree = 0;
  std::vector<FreeSplat> splats;
  std::vector<double> sh;

  std::size_t size() const { return splats.size(); }
  std::size_t k3() const { return static_cast<std::size_t>(sh_coeff_count(sh_degree)) * 3; }
};

template <typename T> SplatGeomT<T> free_geometry(const FreeSplat &s, const FreeParamsT<T> &p) {
  using std::exp;
  SplatGeomT<T> g;
  g.center = Vec3T<T>(p[free_param::kCenter], p[free_param::kCenter + 1], p[free_param::kCenter + 2]);
  const Vec4T<T> q(p[free_param::kQuat], p[free_param::kQuat + 1], p[free_param::kQuat + 2], p[free_param::kQuat + 3]);
  g.frame = s.base_frame.cast<T>() * quat_to_matrix<T>(q);
  g.scale2 = T(s.base_scale2) * exp(p[free_param::kScale2]);
  g.scale3 = T(s.base_scale3) * exp(p[free_param::kScale3]);
  g.opacity = sigmoid(p[free_param::kOpacity]);
  return g;
}

/// Renderable view of free splats.
inline SplatSet to_splat_set(const FreeSplats &fs) {
  SplatSet out;
  out.sh_degree = fs.sh_degree;
  out.sh = fs.sh;
  out.splats.reserve(fs.size());
  for (const auto &s : fs.splats) {
    const auto g = free_geometry<double>(s, s.params);
    Splat sp;
    sp.center = g.center;
    sp.frame = g.frame;
    sp.scale2 = g.scale2;
    sp.scale3 = g.scale3;
    sp.opacity = g.opacity;
    sp.block_id = s.block_id;
    out.splats.push_back(sp);
  }
  out.face.assign(fs.size(), -1);
  return out;
}

/// Gradients of free splats: one parameter vector and one SH slice per splat.
struct FreeGrad {
  std::vector<FreeParams> params;
  std::vector<double> sh;

  static FreeGrad zeros_like(const FreeSplats &fs) {
    FreeGrad g;
    g.params.assign(fs.size(), FreeParams{});
    g.sh.assign(fs.sh.size(), 0.0);
    return g;
  }
};

inline void backprop_free(const FreeSplats &fs, const SplatSet &rendered, const Camera &cam, const RasterState &st,
                          const std::vector<ProjectedGrad> &pg, const RenderSettings &rs, FreeGrad &out) {
  require(fs.size() == pg.size() && st.proj.size() == pg.size(), "backprop: forward/backward size mismatch");
  const int degree = fs.sh_degree;
  const std::size_t k3 = fs.k3();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(fs.size()); ++i) {
    if (!st.proj[i].valid || pg[i].zero())
      continue;
    const FreeSplat &s = fs.splats[i];
    FreeParamsT<FreeJet> jp;
    for (int k = 0; k < free_param::kCount; ++k)
      jp[k] = FreeJet(s.params[k], k);
    const auto g = free_geometry<FreeJet>(s, jp);
    const std::span<const double> sh(fs.sh.data() + i * k3, k3);
    ProjectedT<FreeJet> pj;
    if (!project_full<FreeJet>(g, sh, degree, cam, rs, pj))
      continue;
    const auto c = contract<free_param::kCount>(pj, pg[i]);
    for (int k = 0; k < free_param::kCount; ++k)
      out.params[i][k] += c[k];
    if (!pg[i].color.isZero(0.0))
      sh_gradient(rendered.splats[i].center, sh, degree, cam, pg[i].color, std::span<double>(out.sh.data() + i * k3, k3));
  }
}

/// Turns the bound splats of every alive block into independently learnable splats.
inline FreeSplats decouple(const HybridScene &scene) {
  const SplatSet bound = attach_scene(scene);
  FreeSplats fs;
  fs.sh_degree = bound.sh_degree;
  fs.sh = bound.sh;
  fs.splats.reserve(bound.size());
  for (std::size_t i = 0; i < bound.size(); ++i) {
    const Splat &b = bound.splats[i];
    FreeSplat s;
    s.params[free_param::kCenter] = b.center.x();
    s.params[free_param::kCenter + 1] = b.center.y();
    s.params[free_param::kCenter + 2] = b.center.z();
    s.params[free_param::kQuat] = 1.0;
    s.params[free_param::kScale2] = 0.0;
    s.params[free_param::kScale3] = 0.0;
    s.params[free_param::kOpacity] = scene.blocks[bound.block_index[i]].params[param::kOpacity];
    s.base_frame = b.frame;
    s.base_scale2 = b.scale2;
    s.base_scale3 = b.scale3;
    s.block_id = b.block_id;
    fs.splats.push_back(s);
  }
  return fs;
}

} // namespace sqgs
