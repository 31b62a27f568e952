#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "common.hpp"

namespace sqgs {

/// Static 3-d tree for exact nearest-neighbour queries.
class KdTree {
public:
  explicit KdTree(std::vector<Vec3> pts) : pts_(std::move(pts)), idx_(pts_.size()) {
    std::iota(idx_.begin(), idx_.end(), 0);
    if (!pts_.empty())
      build(0, static_cast<int>(idx_.size()), 0);
  }

  std::size_t size() const { return pts_.size(); }

  /// Squared distance to the closest stored point (infinity when empty).
  double nearest_sq(const Vec3 &q) const {
    double best = std::numeric_limits<double>::infinity();
    if (!pts_.empty())
      search(0, static_cast<int>(idx_.size()), 0, q, best);
    return best;
  }

private:
  void build(int lo, int hi, int depth) {
    if (hi - lo <= kLeaf)
      return;
    const int axis = depth % 3;
    const int mid = (lo + hi) / 2;
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                     [&](int a, int b) { return pts_[a][axis] < pts_[b][axis]; });
    build(lo, mid, depth + 1);
    build(mid + 1, hi, depth + 1);
  }

  void search(int lo, int hi, int depth, const Vec3 &q, double &best) const {
    if (hi - lo <= kLeaf) {
      for (int i = lo; i < hi; ++i)
        best = std::min(best, (pts_[idx_[i]] - q).squaredNorm());
      return;
    }
    const int axis = depth % 3;
    const int mid = (lo + hi) / 2;
    const Vec3 &p = pts_[idx_[mid]];
    best = std::min(best, (p - q).squaredNorm());
    const double diff = q[axis] - p[axis];
    if (diff < 0) {
      search(lo, mid, depth + 1, q, best);
      if (diff * diff < best)
        search(mid + 1, hi, depth + 1, q, best);
    } else {
      search(mid + 1, hi, depth + 1, q, best);
      if (diff * diff < best)
        search(lo, mid, depth + 1, q, best);
    }
  }

  static constexpr int kLeaf = 8;
  std::vector<Vec3> pts_;
  std::vector<int> idx_;
};

} // namespace sqgs
