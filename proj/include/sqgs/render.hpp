#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "camera.hpp"
#include "hybrid.hpp"
#include "image.hpp"
#include "sh.hpp"

namespace sqgs {

struct RenderSettings {
  double lowpass = 0.3;             // px^2 added to the projected covariance diagonal
  double near = 1e-2;               // splats closer than this are culled
  double alpha_max = 0.999;         // per-splat alpha clamp
  double min_transmittance = 1e-4;  // compositing stops below this
  double cutoff = 18.0;             // a splat is ignored where 0.5 d^T S^-1 d exceeds this
  int tile = 16;
};

/// Screen-space splat. conic holds the inverse covariance as (a, b, c) = [[a, b], [b, c]].
template <typename T> struct ProjectedT {
  Vec2T<T> mean;
  Vec3T<T> cov;   // (xx, xy, yy), low-pass floor included
  Vec3T<T> conic;
  T depth;
  Vec3T<T> color;
  T opacity;
};

struct ProjectedSplat {
  Vec2 mean = Vec2::Zero();
  Vec3 cov = Vec3::Zero();
  Vec3 conic = Vec3::Zero();
  double depth = 0.0;
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
  double radius = 0.0; // px
  bool valid = false;
};

/**
 * Projects splat geometry through the affine approximation of the pinhole
 * model. The flat splat has zero extent along its normal r1, so its camera
 * covariance is s2^2 a2 a2^T + s3^2 a3 a3^T with a_k = J W r_k.
 * Returns false when culled by the near plane.
 */
template <typename T>
bool project_geometry(const SplatGeomT<T> &g, const Camera &cam, const RenderSettings &rs, ProjectedT<T> &out) {
  const Vec3T<T> pc = cam.R.cast<T>() * g.center + cam.t.cast<T>();
  const T z = -pc[2];
  if (value_of(z) < rs.near)
    return false;
  const T iz = T(1.0) / z;
  const T iz2 = iz * iz;
  Eigen::Matrix<T, 2, 3> J;
  J(0, 0) = T(cam.fx) * iz;
  J(0, 1) = T(0.0);
  J(0, 2) = T(cam.fx) * pc[0] * iz2;
  J(1, 0) = T(0.0);
  J(1, 1) = T(-cam.fy) * iz;
  J(1, 2) = T(-cam.fy) * pc[1] * iz2;
  const Eigen::Matrix<T, 2, 3> M = J * cam.R.cast<T>();
  const Vec2T<T> a2 = M * g.frame.col(1);
  const Vec2T<T> a3 = M * g.frame.col(2);
  const T s2 = g.scale2 * g.scale2;
  const T s3 = g.scale3 * g.scale3;
  out.cov[0] = s2 * a2[0] * a2[0] + s3 * a3[0] * a3[0] + T(rs.lowpass);
  out.cov[1] = s2 * a2[0] * a2[1] + s3 * a3[0] * a3[1];
  out.cov[2] = s2 * a2[1] * a2[1] + s3 * a3[1] * a3[1] + T(rs.lowpass);
  const T det = out.cov[0] * out.cov[2] - out.cov[1] * out.cov[1];
  const T idet = T(1.0) / det;
  out.conic = Vec3T<T>(out.cov[2] * idet, -out.cov[1] * idet, out.cov[0] * idet);
  out.mean = Vec2T<T>(T(cam.cx) + T(cam.fx) * pc[0] * iz, T(cam.cy) - T(cam.fy) * pc[1] * iz);
  out.depth = z;
  out.opacity = g.opacity;
  return true;
}

/// Per-channel SH color (clamped at zero) for a splat seen from `cam`.
template <typename T>
Vec3T<T> splat_color(const Vec3T<T> &center, std::span<const double> sh, int degree, const Camera &cam) {
  using std::sqrt;
  const Vec3T<T> d = center - cam.position().cast<T>();
  const Vec3T<T> dir = d / sqrt(d.squaredNorm());
  Vec3T<T> rgb = eval_sh_raw<T>(sh, dir, degree);
  for (int c = 0; c < 3; ++c)
    if (value_of(rgb[c]) < 0.0)
      rgb[c] = T(0.0);
  return rgb;
}

template <typename T>
bool project_full(const SplatGeomT<T> &g, std::span<const double> sh, int degree, const Camera &cam,
                  const RenderSettings &rs, ProjectedT<T> &out) {
  if (!project_geometry<T>(g, cam, rs, out))
    return false;
  out.color = splat_color<T>(g.center, sh, degree, cam);
  return true;
}

/// Projects one splat; std::nullopt when culled.
inline std::optional<ProjectedSplat> project(const Splat &s, std::span<const double> sh, int degree, const Camera &cam,
                                             const RenderSettings &rs = {}) {
  ProjectedT<double> p;
  if (!project_full<double>(s.geom(), sh, degree, cam, rs, p))
    return std::nullopt;
  ProjectedSplat out;
  out.mean = p.mean;
  out.cov = p.cov;
  out.conic = p.conic;
  out.depth = p.depth;
  out.color = p.color;
  out.opacity = p.opacity;
  const double mid = 0.5 * (p.cov[0] + p.cov[2]);
  const double lmax = mid + std::sqrt(std::max(0.1, mid * mid - (p.cov[0] * p.cov[2] - p.cov[1] * p.cov[1])));
  out.radius = std::ceil(std::sqrt(2.0 * rs.cutoff * lmax));
  out.valid = true;
  return out;
}

/// Forward render output.
struct RenderedImage {
  Image rgb;   // H x W x 3
  Image alpha; // H x W x 1
  Image depth; // H x W x 1, alpha-weighted camera depth
};

/// Everything the backward pass needs from the forward pass.
struct RasterState {
  int width = 0, height = 0;
  int tiles_x = 0, tiles_y = 0;
  std::vector<ProjectedSplat> proj;
  std::vector<std::vector<int>> tile_lists; // front-to-back per tile
  std::vector<int> n_used;                  // per pixel: list prefix length touched by compositing
  std::vector<double> final_T;              // per pixel transmittance after compositing
};

struct RenderOutput {
  RenderedImage image;
  RasterState state;
};

inline int render_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace detail {

inline void project_all(const SplatSet &splats, const Camera &cam, const RenderSettings &rs, RasterState &st) {
  const int W = cam.width, H = cam.height, ts = rs.tile;
  st.width = W;
  st.height = H;
  st.tiles_x = (W + ts - 1) / ts;
  st.tiles_y = (H + ts - 1) / ts;
  const std::size_t n = splats.size();
  st.proj.assign(n, ProjectedSplat{});
  const int degree = splats.sh_degree;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    auto p = project(splats.splats[i], splats.sh_of(i), degree, cam, rs);
    if (p && p->mean.x() + p->radius >= 0 && p->mean.x() - p->radius <= W && p->mean.y() + p->radius >= 0 &&
        p->mean.y() - p->radius <= H)
      st.proj[i] = *p;
  }
}

inline void bin_tiles(const RenderSettings &rs, RasterState &st) {
  const int ts = rs.tile;
  const std::size_t n = st.proj.size();
  std::vector<int> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (st.proj[i].valid)
      order.push_back(static_cast<int>(i));
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (st.proj[a].depth != st.proj[b].depth)
      return st.proj[a].depth < st.proj[b].depth;
    return a < b;
  });
  st.tile_lists.assign(static_cast<std::size_t>(st.tiles_x) * st.tiles_y, {});
  for (int i : order) {
    const auto &p = st.proj[i];
    const int x0 = std::max(0, static_cast<int>(std::floor((p.mean.x() - p.radius) / ts)));
    const int x1 = std::min(st.tiles_x - 1, static_cast<int>(std::floor((p.mean.x() + p.radius) / ts)));
    const int y0 = std::max(0, static_cast<int>(std::floor((p.mean.y() - p.radius) / ts)));
    const int y1 = std::min(st.tiles_y - 1, static_cast<int>(std::floor((p.mean.y() + p.radius) / ts)));
    for (int ty = y0; ty <= y1; ++ty)
      for (int tx = x0; tx <= x1; ++tx)
        st.tile_lists[static_cast<std::size_t>(ty) * st.tiles_x + tx].push_back(i);
  }
}

// `stop`, when given, replaces the transmittance test with a fixed per-pixel list prefix.
inline void composite(const RenderSettings &rs, RasterState &st, RenderedImage &img,
                      const std::vector<int> *stop = nullptr) {
  const int W = st.width, H = st.height, ts = rs.tile;
  img.rgb = Image(W, H, 3, 0.0);
  img.alpha = Image(W, H, 1, 0.0);
  img.depth = Image(W, H, 1, 0.0);
  st.n_used.assign(static_cast<std::size_t>(W) * H, 0);
  st.final_T.assign(static_cast<std::size_t>(W) * H, 1.0);

  const int ntiles = st.tiles_x * st.tiles_y;
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < ntiles; ++t) {
    const int tx = t % st.tiles_x, ty = t / st.tiles_x;
    const auto &list = st.tile_lists[t];
    for (int y = ty * ts; y < std::min(H, (ty + 1) * ts); ++y)
      for (int x = tx * ts; x < std::min(W, (tx + 1) * ts); ++x) {
        const double px = x + 0.5, py = y + 0.5;
        double T = 1.0;
        Vec3 C = Vec3::Zero();
        double D = 0.0;
        const std::size_t pix = static_cast<std::size_t>(y) * W + x;
        int used = static_cast<int>(list.size());
        const std::size_t end = stop ? static_cast<std::size_t>((*stop)[pix]) : list.size();
        for (std::size_t k = 0; k < end; ++k) {
          const auto &p = st.proj[list[k]];
          if (!p.valid)
            continue;
          const double dx = px - p.mean.x(), dy = py - p.mean.y();
          const double q = 0.5 * (p.conic[0] * dx * dx + 2.0 * p.conic[1] * dx * dy + p.conic[2] * dy * dy);
          if (q > rs.cutoff)
            continue;
          const double alpha = std::min(rs.alpha_max, p.opacity * std::exp(-q));
          const double nextT = T * (1.0 - alpha);
          if (!stop && nextT < rs.min_transmittance) {
            used = static_cast<int>(k);
            break;
          }
          C += p.color * (alpha * T);
          D += p.depth * alpha * T;
          T = nextT;
        }
        if (stop)
          used = static_cast<int>(end);
        st.n_used[pix] = used;
        st.final_T[pix] = T;
        for (int c = 0; c < 3; ++c)
          img.rgb.at(x, y, c) = C[c];
        img.alpha.at(x, y) = 1.0 - T;
        img.depth.at(x, y) = D;
      }
  }
}

} // namespace detail

/**
 * Tile-based front-to-back alpha compositing over a black background.
 * Ties in depth are broken by splat index so output is order-independent.
 */
inline RenderOutput rasterize(const SplatSet &splats, const Camera &cam, const RenderSettings &rs = {}) {
  cam.validate();
  RenderOutput out;
  detail::project_all(splats, cam, rs, out.state);
  detail::bin_tiles(rs, out.state);
  detail::composite(rs, out.state, out.image);
  return out;
}

/**
 * Renders with the per-tile splat order and per-pixel early-stop points of an
 * earlier forward pass instead of recomputing them, so the image stays smooth
 * in the splat parameters near `reference` (a re-sort jumps when two
 * overlapping splats swap depth). Used by finite-difference checks.
 */
inline RenderOutput rasterize_in_order(const SplatSet &splats, const Camera &cam, const RasterState &reference,
                                       const RenderSettings &rs = {}) {
  cam.validate();
  require(reference.proj.size() == splats.size(), "rasterize_in_order: reference has a different splat count");
  RenderOutput out;
  detail::project_all(splats, cam, rs, out.state);
  out.state.tile_lists = reference.tile_lists;
  detail::composite(rs, out.state, out.image, &reference.n_used);
  return out;
}

/// Gradient of the loss w.r.t. one projected splat.
struct ProjectedGrad {
  Vec2 mean = Vec2::Zero();
  Vec3 conic = Vec3::Zero();
  double opacity = 0.0;
  Vec3 color = Vec3::Zero();

  bool zero() const {
    return mean.isZero(0.0) && conic.isZero(0.0) && opacity == 0.0 && color.isZero(0.0);
  }
  ProjectedGrad &operator+=(const ProjectedGrad &o) {
    mean += o.mean;
    conic += o.conic;
    opacity += o.opacity;
    color += o.color;
    return *this;
  }
};

/**
 * Reverse pass of the compositor. d_rgb (H x W x 3) and d_alpha (H x W x 1,
 * optional) are the loss adjoints of the rendered color and accumulated alpha.
 * Per-tile buffers are merged in tile order, so results do not depend on the
 * thread count.
 */
inline std::vector<ProjectedGrad> rasterize_backward(const RasterState &st, const Image &d_rgb, const Image *d_alpha,
                                                     const RenderSettings &rs = {}) {
  require(d_rgb.width == st.width && d_rgb.height == st.height && d_rgb.channels == 3,
          "backward: color adjoint does not match the forward render");
  if (d_alpha)
    require(d_alpha->width == st.width && d_alpha->height == st.height && d_alpha->channels == 1,
            "backward: alpha adjoint does not match the forward render");
  const int W = st.width, H = st.height, ts = rs.tile;
  const int ntiles = st.tiles_x * st.tiles_y;
  std::vector<std::vector<ProjectedGrad>> buffers(ntiles);

#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < ntiles; ++t) {
    const int tx = t % st.tiles_x, ty = t / st.tiles_x;
    const auto &list = st.tile_lists[t];
    auto &buf = buffers[t];
    buf.assign(list.size(), ProjectedGrad{});
    for (int y = ty * ts; y < std::min(H, (ty + 1) * ts); ++y)
      for (int x = tx * ts; x < std::min(W, (tx + 1) * ts); ++x) {
        const std::size_t pix = static_cast<std::size_t>(y) * W + x;
        const Vec3 g(d_rgb.at(x, y, 0), d_rgb.at(x, y, 1), d_rgb.at(x, y, 2));
        const double ga = d_alpha ? d_alpha->at(x, y) : 0.0;
        if (g.isZero(0.0) && ga == 0.0)
          continue;
        const double px = x + 0.5, py = y + 0.5;
        double T = st.final_T[pix];
        Vec3 acc = Vec3::Zero();
        double acc_a = 0.0;
        for (int k = st.n_used[pix] - 1; k >= 0; --k) {
          const auto &p = st.proj[list[k]];
          if (!p.valid)
            continue;
          const double dx = px - p.mean.x(), dy = py - p.mean.y();
          const double q = 0.5 * (p.conic[0] * dx * dx + 2.0 * p.conic[1] * dx * dy + p.conic[2] * dy * dy);
          if (q > rs.cutoff)
            continue;
          const double e = std::exp(-q);
          const double raw = p.opacity * e;
          const double alpha = std::min(rs.alpha_max, raw);
          T /= (1.0 - alpha);
          ProjectedGrad &pg = buf[k];
          pg.color += g * (alpha * T);
          const double dalpha = T * (g.dot(p.color - acc) + ga * (1.0 - acc_a));
          acc = alpha * p.color + (1.0 - alpha) * acc;
          acc_a = alpha + (1.0 - alpha) * acc_a;
          if (raw > rs.alpha_max)
            continue;
          pg.opacity += e * dalpha;
          const double dq = -raw * dalpha;
          // q = 0.5 (a dx^2 + 2 b dx dy + c dy^2), d = pixel - mean
          pg.mean.x() += -dq * (p.conic[0] * dx + p.conic[1] * dy);
          pg.mean.y() += -dq * (p.conic[1] * dx + p.conic[2] * dy);
          pg.conic[0] += dq * 0.5 * dx * dx;
          pg.conic[1] += dq * dx * dy;
          pg.conic[2] += dq * 0.5 * dy * dy;
        }
      }
  }

  std::vector<ProjectedGrad> grads(st.proj.size());
  for (int t = 0; t < ntiles; ++t) {
    const auto &list = st.tile_lists[t];
    for (std::size_t k = 0; k < list.size(); ++k)
      grads[list[k]] += buffers[t][k];
  }
  return grads;
}

/// Contracts a projected-splat gradient with the Jet derivatives of the projection.
template <int N> Eigen::Matrix<double, N, 1> contract(const ProjectedT<Jet<N>> &p, const ProjectedGrad &g) {
  Eigen::Matrix<double, N, 1> out = g.mean[0] * p.mean[0].v + g.mean[1] * p.mean[1].v;
  for (int i = 0; i < 3; ++i)
    out += g.conic[i] * p.conic[i].v + g.color[i] * p.color[i].v;
  out += g.opacity * p.opacity.v;
  return out;
}

/// d loss / d SH coefficients of one splat, given the gradient of its color.
inline void sh_gradient(const Vec3 &center, std::span<const double> sh, int degree, const Camera &cam,
                        const Vec3 &d_color, std::span<double> out) {
  const Vec3 dir = (center - cam.position()).normalized();
  double basis[16];
  sh_basis<double>(dir, degree, basis);
  const Vec3 raw = eval_sh_raw<double>(sh, dir, degree);
  const int K = sh_coeff_count(degree);
  for (int k = 0; k < K; ++k)
    for (int c = 0; c < 3; ++c)
      out[k * 3 + c] += raw[c] < 0.0 ? 0.0 : d_color[c] * basis[k];
}

/// Composites splats of one set as seen from `cam`, returning only the image.
inline RenderedImage render(const SplatSet &splats, const Camera &cam, const RenderSettings &rs = {}) {
  return rasterize(splats, cam, rs).image;
}

} // namespace sqgs
