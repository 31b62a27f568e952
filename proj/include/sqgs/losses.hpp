#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include <json.hpp>

#include "gradients.hpp"
#include "rays.hpp"

namespace sqgs {

inline constexpr double kProbClamp = 1e-6;

/// Per-term values of one objective evaluation.
struct LossReport {
  int iter = 0;
  double ren = 0.0, cov = 0.0, over = 0.0, par = 0.0, opa = 0.0;
  double enter = 0.0, scale = 0.0, mask = 0.0;
  double total = 0.0;

  nlohmann::json to_json() const {
    return {{"iter", iter}, {"ren", ren},     {"cov", cov},     {"over", over}, {"par", par},
            {"opa", opa},   {"enter", enter}, {"scale", scale}, {"mask", mask}, {"total", total}};
  }
  static LossReport from_json(const nlohmann::json &j) {
    LossReport r;
    r.iter = j.at("iter").get<int>();
    r.ren = j.at("ren").get<double>();
    r.cov = j.at("cov").get<double>();
    r.over = j.at("over").get<double>();
    r.par = j.at("par").get<double>();
    r.opa = j.at("opa").get<double>();
    r.enter = j.at("enter").get<double>();
    r.scale = j.at("scale").get<double>();
    r.mask = j.at("mask").get<double>();
    r.total = j.at("total").get<double>();
    return r;
  }
};

/// Cached double-precision distance field of one alive block.
struct BlockField {
  int index = 0;
  SqShape shape;
  Mat3 Rt;
  Vec3 t;
  double tau = 0.0;

  double distance(const Vec3 &p) const { return inside_outside<double>(Rt * (p - t), shape) - 1.0; }
};

inline std::vector<BlockField> alive_fields(const HybridScene &scene) {
  std::vector<BlockField> out;
  for (std::size_t i = 0; i < scene.blocks.size(); ++i) {
    const Block &b = scene.blocks[i];
    if (!b.alive)
      continue;
    const Pose pose = b.pose();
    out.push_back({static_cast<int>(i), b.shape(), pose.rotation().transpose(), pose.t, b.tau()});
  }
  return out;
}

/// d D_i(x) / d params_i.
inline Eigen::Matrix<double, param::kCount, 1> distance_gradient(const Vec3 &x, const Block &b) {
  const auto jp = seed_block_jets<param::kCount>(b.params);
  const BlockJet d = block_distance<BlockJet>(x.cast<BlockJet>(), jp);
  return d.v;
}

/// d O_i(x) / d params_i.
inline Eigen::Matrix<double, param::kCount, 1> occupancy_gradient(const Vec3 &x, const Block &b, double gamma) {
  const auto jp = seed_block_jets<param::kCount>(b.params);
  const BlockJet o = soft_occupancy<BlockJet>(x.cast<BlockJet>(), jp, gamma);
  return o.v;
}

// ---------------------------------------------------------------------------
// Image terms

/// (1 - lambda) L1 + lambda (1 - SSIM) / 2; d_rgb receives d loss / d rendered.
inline double rendering_loss(const Image &rendered, const Image &target, double lambda, Image *d_rgb = nullptr) {
  require_same_shape(rendered, target, "rendering_loss");
  const std::size_t n = rendered.data.size();
  double l1 = 0.0;
  if (d_rgb)
    *d_rgb = Image(rendered.width, rendered.height, rendered.channels, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = rendered.data[i] - target.data[i];
    l1 += std::abs(d);
    if (d_rgb)
      d_rgb->data[i] = (1.0 - lambda) * ((d > 0.0) - (d < 0.0)) / static_cast<double>(n);
  }
  l1 /= static_cast<double>(n);
  double loss = (1.0 - lambda) * l1;
  if (lambda > 0.0) {
    Image gs;
    const double s = ssim(rendered, target, d_rgb ? &gs : nullptr);
    loss += lambda * 0.5 * (1.0 - s);
    if (d_rgb)
      for (std::size_t i = 0; i < n; ++i)
        d_rgb->data[i] += -0.5 * lambda * gs.data[i];
  }
  return loss;
}

/// Mean binary cross-entropy between accumulated alpha and a {0,1} mask.
inline double mask_loss(const Image &alpha, const Image &mask, Image *d_alpha = nullptr) {
  require_same_shape(alpha, mask, "mask_loss");
  const std::size_t n = alpha.data.size();
  if (d_alpha)
    *d_alpha = Image(alpha.width, alpha.height, 1, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double raw = alpha.data[i];
    const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    const double m = mask.data[i] > 0.5 ? 1.0 : 0.0;
    loss += -(m * std::log(p) + (1.0 - m) * std::log(1.0 - p));
    if (d_alpha && raw > kProbClamp && raw < 1.0 - kProbClamp)
      d_alpha->data[i] = (-m / p + (1.0 - m) / (1.0 - p)) / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Block-field terms. Each accepts an optional gradient sink and a weight that
// scales what is written into it.

/**
 * Mean over rays of ReLU(min D) for foreground rays and ReLU(max -D) for
 * background rays, min/max taken over alive blocks and ray samples.
 */
inline double coverage_loss(const RayBatch &batch, const HybridScene &scene, SceneGrad *grad = nullptr,
                            double weight = 1.0) {
  const auto fields = alive_fields(scene);
  require(!fields.empty(), "coverage_loss: no alive blocks");
  const std::size_t R = batch.size();
  if (R == 0)
    return 0.0;
  std::vector<double> value(R, 0.0);
  std::vector<int> arg_block(R, -1);
  std::vector<int> arg_sample(R, -1);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(R); ++r) {
    const bool inside = batch.labels[r] == 1;
    double best = inside ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    int bb = -1, bs = -1;
    for (const auto &f : fields)
      for (int j = 0; j < batch.samples_per_ray; ++j) {
        const double d = f.distance(batch.sample(r, j));
        const double v = inside ? d : -d;
        if (inside ? v < best : v > best) {
          best = v;
          bb = f.index;
          bs = j;
        }
      }
    if (best > 0.0) {
      value[r] = best;
      arg_block[r] = bb;
      arg_sample[r] = bs;
    }
  }
  double loss = 0.0;
  for (std::size_t r = 0; r < R; ++r)
    loss += value[r];
  loss /= static_cast<double>(R);
  if (grad) {
    const double w = weight / static_cast<double>(R);
    for (std::size_t r = 0; r < R; ++r) {
      if (arg_block[r] < 0)
        continue;
      const auto g = distance_gradient(batch.sample(r, arg_sample[r]), scene.blocks[arg_block[r]]);
      grad->add_params(arg_block[r], g, batch.labels[r] == 1 ? w : -w);
    }
  }
  return loss;
}

/// Mean over points of ReLU(sum_i O_i(x) - k).
inline double overlap_loss(const PointSample &pts, const HybridScene &scene, double gamma, double k,
                           SceneGrad *grad = nullptr, double weight = 1.0) {
  require(gamma > 0.0, "overlap_loss: gamma must be positive");
  const auto fields = alive_fields(scene);
  const std::size_t N = pts.points.size();
  if (N == 0)
    return 0.0;
  std::vector<double> value(N, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(N); ++i) {
    double s = 0.0;
    for (const auto &f : fields)
      s += f.tau * sigmoid(-f.distance(pts.points[i]) / gamma);
    value[i] = std::max(0.0, s - k);
  }
  double loss = 0.0;
  for (double v : value)
    loss += v;
  loss /= static_cast<double>(N);
  if (grad) {
    const double w = weight / static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
      if (value[i] <= 0.0)
        continue;
      for (const auto &f : fields)
        grad->add_params(f.index, occupancy_gradient(pts.points[i], scene.blocks[f.index], gamma), w);
    }
  }
  return loss;
}

/// (1/M) sum sqrt(tau_i) over alive blocks.
inline double parsimony_loss(const HybridScene &scene, SceneGrad *grad = nullptr, double weight = 1.0) {
  const auto alive = scene.alive_indices();
  if (alive.empty())
    return 0.0;
  const double M = static_cast<double>(alive.size());
  double loss = 0.0;
  for (int i : alive) {
    const double tau = scene.blocks[i].tau();
    loss += std::sqrt(tau);
    if (grad)
      grad->blocks[i].params[param::kOpacity] += weight / M * 0.5 / std::sqrt(tau) * tau * (1.0 - tau);
  }
  return loss / M;
}

/**
 * Cross-entropy between the ray label and the largest soft occupancy found
 * at ray samples lying inside some block. Rays without such samples are
 * skipped; the mean runs over the remaining rays.
 */
inline double opacity_entropy_loss(const RayBatch &batch, const HybridScene &scene, double gamma,
                                   SceneGrad *grad = nullptr, double weight = 1.0) {
  require(gamma > 0.0, "opacity_entropy_loss: gamma must be positive");
  const auto fields = alive_fields(scene);
  const std::size_t R = batch.size();
  std::vector<double> prob(R, -1.0);
  std::vector<int> arg_block(R, -1), arg_sample(R, -1);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(R); ++r) {
    std::vector<double> d(fields.size());
    double best = -1.0;
    int bb = -1, bs = -1;
    for (int j = 0; j < batch.samples_per_ray; ++j) {
      const Vec3 &x = batch.sample(r, j);
      bool interior = false;
      for (std::size_t f = 0; f < fields.size(); ++f) {
        d[f] = fields[f].distance(x);
        interior = interior || d[f] <= 0.0;
      }
      if (!interior)
        continue;
      for (std::size_t f = 0; f < fields.size(); ++f) {
        const double o = fields[f].tau * sigmoid(-d[f] / gamma);
        if (o > best) {
          best = o;
          bb = fields[f].index;
          bs = j;
        }
      }
    }
    if (bb >= 0) {
      prob[r] = best;
      arg_block[r] = bb;
      arg_sample[r] = bs;
    }
  }
  double loss = 0.0;
  int counted = 0;
  for (std::size_t r = 0; r < R; ++r) {
    if (arg_block[r] < 0)
      continue;
    const double p = std::clamp(prob[r], kProbClamp, 1.0 - kProbClamp);
    const double l = batch.labels[r];
    loss += -(l * std::log(p) + (1.0 - l) * std::log(1.0 - p));
    ++counted;
  }
  if (counted == 0)
    return 0.0;
  if (grad) {
    const double w = weight / counted;
    for (std::size_t r = 0; r < R; ++r) {
      if (arg_block[r] < 0)
        continue;
      const double raw = prob[r];
      if (raw <= kProbClamp || raw >= 1.0 - kProbClamp)
        continue;
      const double l = batch.labels[r];
      const double dp = -l / raw + (1.0 - l) / (1.0 - raw);
      grad->add_params(arg_block[r],
                       occupancy_gradient(batch.sample(r, arg_sample[r]), scene.blocks[arg_block[r]], gamma), w * dp);
    }
  }
  return loss / counted;
}

// ---------------------------------------------------------------------------
// Point-level terms

/**
 * (1/N) sum over sampled splats of sum_{m != owner} ReLU(-D_m(center)).
 * `subset` selects the splats (all when empty); d_centers receives
 * gradients w.r.t. splat centers, indexed like `splats`.
 */
inline double enter_loss(const SplatSet &splats, const HybridScene &scene, const std::vector<int> &subset = {},
                         std::vector<Vec3> *d_centers = nullptr, double weight = 1.0) {
  const auto fields = alive_fields(scene);
  std::vector<int> idx = subset;
  if (idx.empty()) {
    idx.resize(splats.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
      idx[i] = static_cast<int>(i);
  }
  if (idx.empty())
    return 0.0;
  const double N = static_cast<double>(idx.size());
  std::vector<double> value(idx.size(), 0.0);
  std::vector<Vec3> g(idx.size(), Vec3::Zero());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(idx.size()); ++k) {
    const Splat &s = splats.splats[idx[k]];
    for (const auto &f : fields) {
      if (f.index == s.block_id)
        continue;
      const double d = f.distance(s.center);
      if (d >= 0.0)
        continue;
      value[k] += -d;
      if (d_centers) {
        const Vec3T<Jet<3>> x(Jet<3>(s.center.x(), 0), Jet<3>(s.center.y(), 1), Jet<3>(s.center.z(), 2));
        const Jet<3> dj = inside_outside<Jet<3>>(f.Rt.cast<Jet<3>>() * (x - f.t.cast<Jet<3>>()), [&] {
          SqShapeT<Jet<3>> sh;
          sh.eps1 = Jet<3>(f.shape.eps1);
          sh.eps2 = Jet<3>(f.shape.eps2);
          sh.scale = f.shape.scale.cast<Jet<3>>();
          return sh;
        }());
        g[k] -= dj.v;
      }
    }
  }
  double loss = 0.0;
  for (double v : value)
    loss += v;
  if (d_centers) {
    d_centers->resize(splats.size(), Vec3::Zero());
    for (std::size_t k = 0; k < idx.size(); ++k)
      (*d_centers)[idx[k]] += weight / N * g[k];
  }
  return loss / N;
}

/// Mean over splats of ReLU(max(scale2, scale3) - s_max); d_scales gets (d/d scale2, d/d scale3).
inline double scale_regularization(const SplatSet &splats, double s_max, std::vector<Vec2> *d_scales = nullptr,
                                   double weight = 1.0) {
  const std::size_t n = splats.size();
  if (d_scales)
    d_scales->assign(n, Vec2::Zero());
  if (n == 0)
    return 0.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Splat &s = splats.splats[i];
    const double m = std::max(s.scale2, s.scale3);
    if (m <= s_max)
      continue;
    loss += m - s_max;
    if (d_scales) {
      if (s.scale2 >= s.scale3)
        (*d_scales)[i].x() += weight / n;
      else
        (*d_scales)[i].y() += weight / n;
    }
  }
  return loss / static_cast<double>(n);
}

/// Weighted sum of the block-level terms; fills report.total.
inline double combine_block_terms(LossReport &r, const LossWeights &w) {
  r.total = r.ren + w.cov * r.cov + w.over * r.over + w.par * r.par + w.opa * r.opa;
  return r.total;
}

/// Weighted sum of the point-level terms; fills report.total.
inline double combine_point_terms(LossReport &r, const LossWeights &w) {
  r.total = r.ren + w.enter * r.enter + w.scale * r.scale + w.mask * r.mask;
  return r.total;
}

} // namespace sqgs
