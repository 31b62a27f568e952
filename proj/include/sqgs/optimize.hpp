#pragma once

#include <chrono>
#include <functional>
#include <random>
#include <vector>

#include <json.hpp>

#include "adam.hpp"
#include "cluster.hpp"
#include "dataset.hpp"
#include "losses.hpp"

namespace sqgs {

/// Per-group learning rates of the block-level stage.
struct BlockRates {
  double translation = 1.6e-3;
  double rotation = 1e-3;
  double shape = 5e-3; // exponent and scale logits
  double opacity = 5e-2;
  double sh = 2.5e-3;
};

/// Per-group learning rates of the point-level stage.
struct PointRates {
  double center = 1.6e-4;
  double rotation = 1e-3;
  double scale = 5e-3;
  double opacity = 5e-2;
  double sh = 2.5e-3;
};

struct OptimConfig {
  int m_init = 8;
  int m_max = 16;
  int iters_block = 30000;
  int iters_point = 30000;
  std::vector<int> add_iters{5000, 10000};
  double prune_tau = 0.1;
  double gamma = 0.005;
  double k_overlap = 1.95;
  double dbscan_eps = 0.04; // fraction of the bbox diagonal
  int dbscan_min_pts = 10;
  int rays_per_view = 32;
  int samples_per_ray = 64;
  int overlap_points = 2048;
  int enter_points = 4096;
  double s_max = 0.02; // fraction of the bbox diagonal
  int init_points = 20000;
  int checkpoint_every = 5000;
  std::uint64_t seed = 0;
  BlockRates lr;
  PointRates lr_point;
  HybridSettings hybrid;
  LossWeights weights;
  RenderSettings render;

  void validate() const {
    require(m_init > 0 && m_max >= m_init, "m_init must be positive and at most m_max");
    require(iters_block >= 0 && iters_point >= 0, "iteration budgets must be non-negative");
    require(prune_tau > 0.0 && prune_tau < 1.0, "prune_tau must lie in (0, 1)");
    require(gamma > 0.0, "gamma must be positive");
    for (int a : add_iters)
      require(a >= 0 && (iters_block == 0 || a < iters_block), "add_iters must lie in [0, iters_block)");
    require(dbscan_eps > 0.0 && dbscan_min_pts > 0, "DBSCAN parameters must be positive");
    require(rays_per_view > 0 && samples_per_ray > 0 && overlap_points > 0 && enter_points > 0,
            "sample counts must be positive");
    const LossWeights &w = weights;
    for (double v : {w.lambda_ssim, w.cov, w.over, w.par, w.opa, w.enter, w.scale, w.mask})
      require(v >= 0.0, "loss weights must be non-negative");
    require(w.lambda_ssim <= 1.0, "lambda_ssim must be at most 1");
  }
};

struct FitReport {
  std::string stage;
  std::vector<LossReport> records;
  int parts = 0;
  double seconds = 0.0;
  std::vector<int> part_trace; // alive count after every iteration

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["stage"] = stage;
    j["parts"] = parts;
    j["seconds"] = seconds;
    j["records"] = nlohmann::json::array();
    for (const auto &r : records)
      j["records"].push_back(r.to_json());
    j["part_trace"] = part_trace;
    return j;
  }
};

/// Called with (iteration, scene) every checkpoint_every iterations and at the end.
using BlockCheckpointFn = std::function<void(int, const HybridScene &)>;

inline double initial_block_scale(const Aabb &bbox, int m) { return bbox.diagonal() / (4.0 * std::cbrt(double(m))); }

inline Vec4 random_quaternion(std::mt19937_64 &rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec4 q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q[0] < 0 ? Vec4(-q) : q;
}

/**
 * Scene with m_init spheres at tau = 0.5, random rotations, centers uniform
 * in the central 60% of the bbox, or at k-means centers of init_points.
 */
inline HybridScene init_scene(const OptimConfig &cfg, const Aabb &bbox, const std::vector<Vec3> &init_points = {}) {
  cfg.validate();
  require(!bbox.degenerate(), "init_scene: degenerate bounding box");
  HybridScene scene = make_empty_scene(cfg.hybrid, bbox);
  scene.weights = cfg.weights;
  std::mt19937_64 rng(mix_seed(cfg.seed, 1));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Vec3> centers;
  if (!init_points.empty() && init_points.size() >= static_cast<std::size_t>(cfg.m_init)) {
    centers = kmeans(init_points, cfg.m_init, mix_seed(cfg.seed, 2));
  } else {
    for (int i = 0; i < cfg.m_init; ++i) {
      const Vec3 u(uni(rng), uni(rng), uni(rng));
      centers.push_back(bbox.center() + 0.6 * (u - Vec3::Constant(0.5)).cwiseProduct(bbox.size()));
    }
  }
  const double s = initial_block_scale(bbox, cfg.m_init);
  for (int i = 0; i < cfg.m_init; ++i) {
    SqShape shape;
    shape.eps1 = shape.eps2 = 1.0;
    shape.scale = Vec3::Constant(s);
    Pose pose;
    pose.q = random_quaternion(rng);
    pose.t = centers[i];
    scene.add_block(make_block_params(shape, pose, 0.5), mix_seed(cfg.seed, 100 + i));
  }
  return scene;
}

/// Marks blocks with tau < prune_tau dead; returns the number removed.
inline int prune_blocks(HybridScene &scene, double prune_tau) {
  int removed = 0;
  for (auto &b : scene.blocks)
    if (b.alive && b.tau() < prune_tau) {
      b.alive = false;
      ++removed;
    }
  return removed;
}

/// Points whose distance to every alive block is positive.
inline std::vector<Vec3> uncovered_points(const HybridScene &scene, const std::vector<Vec3> &pts) {
  const auto fields = alive_fields(scene);
  std::vector<char> keep(pts.size(), 0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(pts.size()); ++i) {
    bool covered = false;
    for (const auto &f : fields)
      covered = covered || f.distance(pts[i]) <= 0.0;
    keep[i] = !covered;
  }
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (keep[i])
      out.push_back(pts[i]);
  return out;
}

/**
 * Clusters uncovered points with DBSCAN and adds one block per cluster at
 * its centroid (sphere, random rotation and scale, tau = 0.5), up to m_max
 * blocks in total. Returns the number added.
 */
inline int add_blocks(HybridScene &scene, const std::vector<Vec3> &uncovered, const OptimConfig &cfg,
                      std::uint64_t seed) {
  if (uncovered.empty())
    return 0;
  const auto labels = dbscan(uncovered, cfg.dbscan_eps * scene.bbox.diagonal(), cfg.dbscan_min_pts);
  const auto centroids = cluster_centroids(uncovered, labels);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.75, 1.25);
  const double s = initial_block_scale(scene.bbox, cfg.m_init);
  int added = 0;
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    if (static_cast<int>(scene.blocks.size()) >= cfg.m_max)
      break;
    SqShape shape;
    shape.eps1 = shape.eps2 = 1.0;
    shape.scale = Vec3(s * jitter(rng), s * jitter(rng), s * jitter(rng));
    Pose pose;
    pose.q = random_quaternion(rng);
    pose.t = centroids[c];
    scene.add_block(make_block_params(shape, pose, 0.5), mix_seed(seed, 1000 + c));
    ++added;
  }
  return added;
}

/**
 * Uniform bbox samples whose projections fall inside the mask of every
 * training view that sees them (a visual hull). Used as the reference point
 * cloud for block adding.
 */
inline std::vector<Vec3> visual_hull_points(const Dataset &ds, int n, std::uint64_t seed) {
  const auto views = ds.train_views();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Vec3> out;
  const int batch = 4096;
  for (int round = 0; round < 200 && static_cast<int>(out.size()) < n; ++round) {
    std::vector<Vec3> cand(batch);
    for (auto &p : cand)
      p = ds.bbox.lo + Vec3(uni(rng), uni(rng), uni(rng)).cwiseProduct(ds.bbox.size());
    std::vector<char> keep(batch, 0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < batch; ++i) {
      int seen = 0;
      bool ok = true;
      for (int v : views) {
        const Camera &cam = ds.cameras[v];
        Vec2 uv;
        if (!cam.project(cand[i], uv))
          continue;
        const int x = static_cast<int>(std::floor(uv.x())), y = static_cast<int>(std::floor(uv.y()));
        if (x < 0 || y < 0 || x >= cam.width || y >= cam.height)
          continue;
        ++seen;
        if (ds.masks[v].at(x, y) < 0.5) {
          ok = false;
          break;
        }
      }
      keep[i] = ok && seen > 0;
    }
    for (int i = 0; i < batch && static_cast<int>(out.size()) < n; ++i)
      if (keep[i])
        out.push_back(cand[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Block-level objective

/// Random inputs of one block-level step.
struct BlockBatch {
  int view = 0;
  RayBatch rays;
  PointSample points;
};

inline BlockBatch draw_block_batch(const Dataset &ds, const OptimConfig &cfg, int iter) {
  const auto views = ds.train_views();
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x10000 + static_cast<std::uint64_t>(iter)));
  BlockBatch b;
  b.view = views[std::uniform_int_distribution<std::size_t>(0, views.size() - 1)(rng)];
  std::vector<Camera> cams;
  std::vector<Image> masks;
  for (int v : views) {
    cams.push_back(ds.cameras[v]);
    masks.push_back(ds.masks[v]);
  }
  b.rays = sample_rays(cams, masks, cfg.rays_per_view, cfg.samples_per_ray, ds.bbox, rng());
  b.points = sample_points(ds.bbox, cfg.overlap_points, rng());
  return b;
}

/**
 * Block-level objective for one view: rendering loss against the masked
 * target plus the weighted coverage, overlap, parsimony and opacity terms.
 * Accumulates the gradient into `grad` when given.
 */
inline LossReport evaluate_block_objective(const HybridScene &scene, const Camera &cam, const Image &target,
                                           const RayBatch &rays, const PointSample &pts, const OptimConfig &cfg,
                                           SceneGrad *grad = nullptr) {
  const LossWeights &w = scene.weights;
  LossReport r;
  const SplatSet bound = attach_scene(scene);
  const RenderOutput out = rasterize(bound, cam, cfg.render);
  Image d_rgb;
  r.ren = rendering_loss(out.image.rgb, target, w.lambda_ssim, grad ? &d_rgb : nullptr);
  if (grad) {
    const auto pg = rasterize_backward(out.state, d_rgb, nullptr, cfg.render);
    backprop_bound(scene, bound, cam, out.state, pg, cfg.render, *grad);
  }
  r.cov = coverage_loss(rays, scene, grad, w.cov);
  r.over = overlap_loss(pts, scene, cfg.gamma, cfg.k_overlap, grad, w.over);
  r.par = parsimony_loss(scene, grad, w.par);
  r.opa = opacity_entropy_loss(rays, scene, cfg.gamma, grad, w.opa);
  combine_block_terms(r, w);
  return r;
}

/// Adam states of one block, created lazily when blocks are added.
struct BlockOptimizer {
  std::vector<Adam> params, sh;
  std::array<double, param::kCount> rates{};

  explicit BlockOptimizer(const BlockRates &lr) {
    for (int i = 0; i < param::kCount; ++i) {
      double r = lr.shape;
      if (i >= param::kQuat && i < param::kQuat + 4)
        r = lr.rotation;
      else if (i >= param::kTrans && i < param::kTrans + 3)
        r = lr.translation;
      else if (i == param::kOpacity)
        r = lr.opacity;
      rates[i] = r;
    }
  }

  void step(HybridScene &scene, const SceneGrad &g, double sh_rate) {
    while (params.size() < scene.blocks.size()) {
      params.emplace_back(param::kCount);
      sh.emplace_back(scene.blocks[sh.size()].sh.size());
    }
    for (std::size_t i = 0; i < scene.blocks.size(); ++i) {
      Block &b = scene.blocks[i];
      if (!b.alive)
        continue;
      params[i].step(b.params, g.blocks[i].params, rates);
      sh[i].step(b.sh, g.blocks[i].sh, sh_rate);
      Vec4 q(b.params[param::kQuat], b.params[param::kQuat + 1], b.params[param::kQuat + 2], b.params[param::kQuat + 3]);
      q.normalize();
      for (int k = 0; k < 4; ++k)
        b.params[param::kQuat + k] = q[k];
    }
  }
};

inline void check_finite(const HybridScene &scene) {
  for (const auto &b : scene.blocks) {
    if (!b.alive)
      continue;
    for (double v : b.params)
      require(std::isfinite(v), "optimizer produced a non-finite block parameter");
  }
}

/**
 * Block-level stage: one view, ray batch and point sample per iteration,
 * Adam update of every alive block, pruning after every step and block
 * adding at cfg.add_iters from the uncovered part of `reference`.
 */
inline FitReport block_level_fit(HybridScene &scene, const Dataset &ds, const OptimConfig &cfg,
                                 const std::vector<Vec3> &reference = {}, const BlockCheckpointFn &checkpoint = {}) {
  cfg.validate();
  require(ds.train_views().size() >= 2, "block_level_fit: need at least two training views");
  require(scene.alive_count() > 0, "block_level_fit: scene has no alive block");
  const auto t0 = std::chrono::steady_clock::now();
  FitReport rep;
  rep.stage = "block";
  BlockOptimizer opt(cfg.lr);
  std::vector<Image> targets(ds.size());
  for (std::size_t v = 0; v < ds.size(); ++v)
    targets[v] = ds.masked_target(static_cast<int>(v));

  for (int it = 0; it < cfg.iters_block; ++it) {
    if (std::find(cfg.add_iters.begin(), cfg.add_iters.end(), it) != cfg.add_iters.end() && !reference.empty())
      add_blocks(scene, uncovered_points(scene, reference), cfg, mix_seed(cfg.seed, 0x20000 + it));
    const BlockBatch batch = draw_block_batch(ds, cfg, it);
    SceneGrad grad = SceneGrad::zeros_like(scene);
    LossReport r = evaluate_block_objective(scene, ds.cameras[batch.view], targets[batch.view], batch.rays,
                                            batch.points, cfg, &grad);
    r.iter = it;
    rep.records.push_back(r);
    opt.step(scene, grad, cfg.lr.sh);
    check_finite(scene);
    prune_blocks(scene, cfg.prune_tau);
    if (scene.alive_count() == 0)
      throw Error("every block was pruned at iteration " + std::to_string(it) +
                  "; lower prune_tau or lambda_par, or check the masks");
    rep.part_trace.push_back(scene.alive_count());
    if (checkpoint && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.iters_block)
      checkpoint(it + 1, scene);
  }
  if (checkpoint)
    checkpoint(cfg.iters_block, scene);
  rep.parts = scene.alive_count();
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Point-level objective

inline double scale_limit(const Aabb &bbox, const OptimConfig &cfg) { return cfg.s_max * bbox.diagonal(); }

inline std::vector<int> draw_enter_subset(std::size_t n, const OptimConfig &cfg, int iter) {
  std::vector<int> idx;
  if (n == 0)
    return idx;
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x30000 + static_cast<std::uint64_t>(iter)));
  if (n <= static_cast<std::size_t>(cfg.enter_points)) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      idx[i] = static_cast<int>(i);
    return idx;
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  idx.resize(cfg.enter_points);
  for (auto &i : idx)
    i = static_cast<int>(pick(rng));
  return idx;
}

/**
 * Point-level objective for one view: rendering loss plus weighted enter,
 * scale and mask terms. Blocks only provide the fixed containment fields.
 */
inline LossReport evaluate_point_objective(const FreeSplats &fs, const HybridScene &scene, const Camera &cam,
                                           const Image &target, const Image &mask, const std::vector<int> &subset,
                                           const OptimConfig &cfg, FreeGrad *grad = nullptr) {
  const LossWeights &w = scene.weights;
  LossReport r;
  const SplatSet set = to_splat_set(fs);
  const RenderOutput out = rasterize(set, cam, cfg.render);
  Image d_rgb, d_alpha;
  r.ren = rendering_loss(out.image.rgb, target, w.lambda_ssim, grad ? &d_rgb : nullptr);
  r.mask = mask_loss(out.image.alpha, mask, grad ? &d_alpha : nullptr);
  std::vector<Vec3> d_centers;
  r.enter = subset.empty() ? 0.0 : enter_loss(set, scene, subset, grad ? &d_centers : nullptr, w.enter);
  std::vector<Vec2> d_scales;
  r.scale = scale_regularization(set, scale_limit(scene.bbox, cfg), grad ? &d_scales : nullptr, w.scale);
  combine_point_terms(r, w);
  if (grad) {
    for (auto &v : d_alpha.data)
      v *= w.mask;
    const auto pg = rasterize_backward(out.state, d_rgb, &d_alpha, cfg.render);
    backprop_free(fs, set, cam, out.state, pg, cfg.render, *grad);
    for (std::size_t i = 0; i < d_centers.size(); ++i)
      for (int k = 0; k < 3; ++k)
        grad->params[i][free_param::kCenter + k] += d_centers[i][k];
    for (std::size_t i = 0; i < d_scales.size(); ++i) {
      grad->params[i][free_param::kScale2] += d_scales[i].x() * set.splats[i].scale2;
      grad->params[i][free_param::kScale3] += d_scales[i].y() * set.splats[i].scale3;
    }
  }
  return r;
}

using PointCheckpointFn = std::function<void(int, const FreeSplats &)>;

/// Mean training-view rendering loss of a splat set.
inline double training_render_loss(const SplatSet &set, const Dataset &ds, const OptimConfig &cfg) {
  double sum = 0.0;
  const auto views = ds.train_views();
  for (int v : views)
    sum += rendering_loss(render(set, ds.cameras[v], cfg.render).rgb, ds.masked_target(v), cfg.weights.lambda_ssim);
  return sum / static_cast<double>(views.size());
}

/**
 * Point-level stage: Adam over every free splat's center, rotation residual,
 * log-scale residuals, opacity logit and SH; block parameters stay fixed.
 */
inline FitReport point_level_refine(FreeSplats &fs, const HybridScene &scene, const Dataset &ds, const OptimConfig &cfg,
                                    const PointCheckpointFn &checkpoint = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  FitReport rep;
  rep.stage = "point";
  const std::size_t n = fs.size();
  std::vector<double> rates(n * free_param::kCount);
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < free_param::kCount; ++k) {
      double r = cfg.lr_point.center;
      if (k >= free_param::kQuat && k < free_param::kQuat + 4)
        r = cfg.lr_point.rotation;
      else if (k == free_param::kScale2 || k == free_param::kScale3)
        r = cfg.lr_point.scale;
      else if (k == free_param::kOpacity)
        r = cfg.lr_point.opacity;
      rates[i * free_param::kCount + k] = r;
    }
  Adam opt_params(n * free_param::kCount), opt_sh(fs.sh.size());
  std::vector<double> flat(n * free_param::kCount), gflat(n * free_param::kCount);
  const auto views = ds.train_views();
  std::vector<Image> targets(ds.size());
  for (std::size_t v = 0; v < ds.size(); ++v)
    targets[v] = ds.masked_target(static_cast<int>(v));

  for (int it = 0; it < cfg.iters_point; ++it) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x40000 + static_cast<std::uint64_t>(it)));
    const int view = views[std::uniform_int_distribution<std::size_t>(0, views.size() - 1)(rng)];
    const auto subset = draw_enter_subset(n, cfg, it);
    FreeGrad grad = FreeGrad::zeros_like(fs);
    LossReport r =
        evaluate_point_objective(fs, scene, ds.cameras[view], targets[view], ds.masks[view], subset, cfg, &grad);
    r.iter = it;
    rep.records.push_back(r);
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < free_param::kCount; ++k) {
        flat[i * free_param::kCount + k] = fs.splats[i].params[k];
        gflat[i * free_param::kCount + k] = grad.params[i][k];
      }
    opt_params.step(flat, gflat, rates);
    opt_sh.step(fs.sh, grad.sh, cfg.lr_point.sh);
    for (std::size_t i = 0; i < n; ++i) {
      auto &p = fs.splats[i].params;
      for (int k = 0; k < free_param::kCount; ++k) {
        p[k] = flat[i * free_param::kCount + k];
        require(std::isfinite(p[k]), "optimizer produced a non-finite splat parameter");
      }
      Vec4 q(p[free_param::kQuat], p[free_param::kQuat + 1], p[free_param::kQuat + 2], p[free_param::kQuat + 3]);
      q.normalize();
      for (int k = 0; k < 4; ++k)
        p[free_param::kQuat + k] = q[k];
    }
    rep.part_trace.push_back(scene.alive_count());
    if (checkpoint && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.iters_point)
      checkpoint(it + 1, fs);
  }
  if (checkpoint)
    checkpoint(cfg.iters_point, fs);
  rep.parts = scene.alive_count();
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

} // namespace sqgs
