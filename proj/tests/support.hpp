#pragma once

#include <filesystem>
#include <functional>
#include <random>

#include <sqgs/sqgs.hpp>

namespace sqgs::testing {

/// Relative error of a gradient vector against a reference, guarded for tiny norms.
inline double rel_error(const std::vector<double> &got, const std::vector<double> &want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num += (got[i] - want[i]) * (got[i] - want[i]);
    den += want[i] * want[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-8);
}

/// Central difference of f with respect to *x.
inline double central_difference(const std::function<double()> &f, double *x, double h = 1e-4) {
  const double x0 = *x;
  *x = x0 + h;
  const double fp = f();
  *x = x0 - h;
  const double fm = f();
  *x = x0;
  return (fp - fm) / (2.0 * h);
}

inline Camera camera_at(const Vec3 &eye, int size, double focal_factor = 1.0) {
  return Camera::look_at(eye, Vec3::Zero(), Vec3::UnitY(), focal_factor * size, size, size);
}

inline Block make_block(const Vec3 &t, const Vec3 &s, double eps1, double eps2, double tau, const Vec4 &q,
                        int id = 0) {
  SqShape shape;
  shape.eps1 = eps1;
  shape.eps2 = eps2;
  shape.scale = s;
  Pose pose;
  pose.q = q;
  pose.t = t;
  Block b;
  b.id = id;
  b.params = make_block_params(shape, pose, tau);
  return b;
}

/// Scene with the given blocks, SH zeroed except a random DC term, barycentrics seeded per block.
inline HybridScene scene_of(const std::vector<Block> &blocks, HybridSettings hs = {}, std::uint64_t seed = 1) {
  HybridScene s = make_empty_scene(hs, Aabb{});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (const auto &b : blocks) {
    Block &nb = s.add_block(b.params, mix_seed(seed, s.blocks.size()));
    for (auto &v : nb.sh)
      v = 0.2 * u(rng);
  }
  return s;
}

inline Vec4 random_unit_quat(std::mt19937_64 &rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec4 q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized();
}

inline std::filesystem::path temp_dir(const std::string &name) {
  auto p = std::filesystem::temp_directory_path() / ("sqgs_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

} // namespace sqgs::testing
