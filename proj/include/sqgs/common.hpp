#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <ceres/jet.h>

namespace sqgs {

template <typename T> using Vec2T = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3T = Eigen::Matrix<T, 3, 1>;
template <typename T> using Vec4T = Eigen::Matrix<T, 4, 1>;
template <typename T> using Mat3T = Eigen::Matrix<T, 3, 3>;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

/// Forward-mode dual number carrying N partial derivatives.
template <int N> using Jet = ceres::Jet<double, N>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string &msg) {
  if (!cond)
    throw Error(msg);
}

template <typename T> struct is_jet : std::false_type {};
template <typename S, int N> struct is_jet<ceres::Jet<S, N>> : std::true_type {};

inline double value_of(double x) { return x; }
template <typename S, int N> double value_of(const ceres::Jet<S, N> &x) { return x.a; }

/// Smallest magnitude allowed as the base of a fractional power.
inline constexpr double kPowFloor = 1e-8;

/// sign(x) * max(|x|, floor)^e; exactly zero at x == 0.
template <typename T, typename E> T spow(const T &x, const E &e) {
  using std::abs;
  using std::pow;
  const double xv = value_of(x);
  if (xv == 0.0)
    return T(0.0);
  T ax = abs(x);
  if (value_of(ax) < kPowFloor)
    ax = T(kPowFloor);
  T r = pow(ax, T(e));
  return xv < 0.0 ? T(-r) : r;
}

/// max(|x|, floor)^e, used by the inside-outside function.
template <typename T, typename E> T fpow(const T &x, const E &e) {
  using std::abs;
  using std::pow;
  T ax = abs(x);
  if (value_of(ax) < kPowFloor)
    ax = T(kPowFloor);
  return pow(ax, T(e));
}

template <typename T> T sigmoid(const T &x) {
  using std::exp;
  if (value_of(x) >= 0.0)
    return T(1.0) / (T(1.0) + exp(-x));
  const T e = exp(x);
  return e / (T(1.0) + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Rotation matrix of the (normalized) quaternion q = (w, x, y, z).
template <typename T> Mat3T<T> quat_to_matrix(const Vec4T<T> &q_in) {
  using std::sqrt;
  const T n = sqrt(q_in.squaredNorm());
  const Vec4T<T> q = q_in / n;
  const T &w = q[0], &x = q[1], &y = q[2], &z = q[3];
  Mat3T<T> R;
  R(0, 0) = T(1.0) - T(2.0) * (y * y + z * z);
  R(0, 1) = T(2.0) * (x * y - w * z);
  R(0, 2) = T(2.0) * (x * z + w * y);
  R(1, 0) = T(2.0) * (x * y + w * z);
  R(1, 1) = T(1.0) - T(2.0) * (x * x + z * z);
  R(1, 2) = T(2.0) * (y * z - w * x);
  R(2, 0) = T(2.0) * (x * z - w * y);
  R(2, 1) = T(2.0) * (y * z + w * x);
  R(2, 2) = T(1.0) - T(2.0) * (x * x + y * y);
  return R;
}

/// Quaternion (w, x, y, z) of a proper rotation matrix, w >= 0.
inline Vec4 matrix_to_quat(const Mat3 &R) {
  Eigen::Quaterniond q(R);
  q.normalize();
  Vec4 out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < 0)
    out = -out;
  return out;
}

/// Axis-aligned scene bounds.
struct Aabb {
  Vec3 lo{-1.0, -1.0, -1.0};
  Vec3 hi{1.0, 1.0, 1.0};

  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 size() const { return hi - lo; }
  double diagonal() const { return size().norm(); }
  /// Largest side length.
  double extent() const { return size().maxCoeff(); }
  bool contains(const Vec3 &p, double tol = 0.0) const {
    return (p.array() >= lo.array() - tol).all() && (p.array() <= hi.array() + tol).all();
  }
  bool degenerate() const { return !((hi - lo).array() > 1e-12).all(); }
};

/// Mixes a seed with a stream index so sub-generators stay independent.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

} // namespace sqgs
