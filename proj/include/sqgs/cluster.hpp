#pragma once

#include <array>
#include <limits>
#include <random>
#include <unordered_map>
#include <vector>

#include "common.hpp"

namespace sqgs {

namespace detail {

/// Uniform hash grid with cell size equal to the query radius.
class RadiusGrid {
public:
  RadiusGrid(const std::vector<Vec3> &pts, double radius) : pts_(pts), r_(radius) {
    for (std::size_t i = 0; i < pts.size(); ++i)
      cells_[key(cell_of(pts[i]))].push_back(static_cast<int>(i));
  }

  /// Indices within `r_` of point i (including i itself), ascending within each cell.
  std::vector<int> neighbors(int i) const {
    std::vector<int> out;
    const auto c = cell_of(pts_[i]);
    const double r2 = r_ * r_;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
          if (it == cells_.end())
            continue;
          for (int j : it->second)
            if ((pts_[j] - pts_[i]).squaredNorm() <= r2)
              out.push_back(j);
        }
    return out;
  }

private:
  std::array<long, 3> cell_of(const Vec3 &p) const {
    return {static_cast<long>(std::floor(p.x() / r_)), static_cast<long>(std::floor(p.y() / r_)),
            static_cast<long>(std::floor(p.z() / r_))};
  }
  static std::uint64_t key(const std::array<long, 3> &c) {
    return (static_cast<std::uint64_t>(c[0] & 0x1FFFFF) << 42) | (static_cast<std::uint64_t>(c[1] & 0x1FFFFF) << 21) |
           static_cast<std::uint64_t>(c[2] & 0x1FFFFF);
  }

  const std::vector<Vec3> &pts_;
  double r_;
  std::unordered_map<std::uint64_t, std::vector<int>> cells_;
};

} // namespace detail

inline constexpr int kNoise = -1;

/**
 * DBSCAN: points with at least min_pts neighbours within eps (itself
 * included) are core points; clusters are the connected components of core
 * points plus their border points. Returns a label per point, kNoise for noise.
 */
inline std::vector<int> dbscan(const std::vector<Vec3> &pts, double eps, int min_pts) {
  require(eps > 0.0 && min_pts > 0, "dbscan: eps and min_pts must be positive");
  constexpr int kUnvisited = -2;
  std::vector<int> label(pts.size(), kUnvisited);
  if (pts.empty())
    return label;
  const detail::RadiusGrid grid(pts, eps);
  int cluster = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (label[i] != kUnvisited)
      continue;
    auto seeds = grid.neighbors(static_cast<int>(i));
    if (static_cast<int>(seeds.size()) < min_pts) {
      label[i] = kNoise;
      continue;
    }
    label[i] = cluster;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const int j = seeds[k];
      if (label[j] == kNoise)
        label[j] = cluster;
      if (label[j] != kUnvisited)
        continue;
      label[j] = cluster;
      auto nb = grid.neighbors(j);
      if (static_cast<int>(nb.size()) >= min_pts)
        seeds.insert(seeds.end(), nb.begin(), nb.end());
    }
    ++cluster;
  }
  return label;
}

/// Centroids of DBSCAN clusters, in label order.
inline std::vector<Vec3> cluster_centroids(const std::vector<Vec3> &pts, const std::vector<int> &labels) {
  int n = 0;
  for (int l : labels)
    n = std::max(n, l + 1);
  std::vector<Vec3> sum(n, Vec3::Zero());
  std::vector<int> count(n, 0);
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (labels[i] >= 0) {
      sum[labels[i]] += pts[i];
      ++count[labels[i]];
    }
  for (int c = 0; c < n; ++c)
    sum[c] /= count[c];
  return sum;
}

/// Lloyd's k-means with k-means++ seeding; keeps the best of `restarts` runs.
inline std::vector<Vec3> kmeans(const std::vector<Vec3> &pts, int k, std::uint64_t seed, int restarts = 4,
                                int max_iter = 100) {
  require(k > 0 && static_cast<std::size_t>(k) <= pts.size(), "kmeans: need at least k points");
  std::mt19937_64 rng(seed);
  std::vector<Vec3> best;
  double best_cost = std::numeric_limits<double>::infinity();
  const std::size_t n = pts.size();
  for (int rep = 0; rep < restarts; ++rep) {
    std::vector<Vec3> c;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    c.push_back(pts[pick(rng)]);
    std::vector<double> d2(n);
    while (static_cast<int>(c.size()) < k) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double m = std::numeric_limits<double>::infinity();
        for (const auto &cc : c)
          m = std::min(m, (pts[i] - cc).squaredNorm());
        d2[i] = m;
        total += m;
      }
      if (total <= 0.0) {
        c.push_back(pts[pick(rng)]);
        continue;
      }
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      std::size_t chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        r -= d2[i];
        if (r <= 0.0) {
          chosen = i;
          break;
        }
      }
      c.push_back(pts[chosen]);
    }
    std::vector<int> assign(n, -1);
    double cost = 0.0;
    for (int it = 0; it < max_iter; ++it) {
      bool changed = false;
      cost = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        int bi = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) {
          const double d = (pts[i] - c[j]).squaredNorm();
          if (d < bd) {
            bd = d;
            bi = j;
          }
        }
        cost += bd;
        if (assign[i] != bi) {
          assign[i] = bi;
          changed = true;
        }
      }
      std::vector<Vec3> sum(k, Vec3::Zero());
      std::vector<int> cnt(k, 0);
      for (std::size_t i = 0; i < n; ++i) {
        sum[assign[i]] += pts[i];
        ++cnt[assign[i]];
      }
      for (int j = 0; j < k; ++j)
        if (cnt[j] > 0)
          c[j] = sum[j] / cnt[j];
      if (!changed)
        break;
    }
    if (cost < best_cost) {
      best_cost = cost;
      best = c;
    }
  }
  return best;
}

} // namespace sqgs
