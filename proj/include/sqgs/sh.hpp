#pragma once

#include <span>

#include "common.hpp"

namespace sqgs {

// Real spherical-harmonic basis constants, degrees 0..3.
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr double kShC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                                    0.5462742152960396};
inline constexpr double kShC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                                    -0.4570457994644658, 1.445305721320277,  -0.5900435899266435};

/// Writes the (degree + 1)^2 basis values for unit direction d into out.
template <typename T> void sh_basis(const Vec3T<T> &d, int degree, T *out) {
  out[0] = T(kShC0);
  if (degree < 1)
    return;
  const T &x = d[0], &y = d[1], &z = d[2];
  out[1] = T(-kShC1) * y;
  out[2] = T(kShC1) * z;
  out[3] = T(-kShC1) * x;
  if (degree < 2)
    return;
  const T xx = x * x, yy = y * y, zz = z * z, xy = x * y, yz = y * z, xz = x * z;
  out[4] = T(kShC2[0]) * xy;
  out[5] = T(kShC2[1]) * yz;
  out[6] = T(kShC2[2]) * (T(2.0) * zz - xx - yy);
  out[7] = T(kShC2[3]) * xz;
  out[8] = T(kShC2[4]) * (xx - yy);
  if (degree < 3)
    return;
  out[9] = T(kShC3[0]) * y * (T(3.0) * xx - yy);
  out[10] = T(kShC3[1]) * xy * z;
  out[11] = T(kShC3[2]) * y * (T(4.0) * zz - xx - yy);
  out[12] = T(kShC3[3]) * z * (T(2.0) * zz - T(3.0) * xx - T(3.0) * yy);
  out[13] = T(kShC3[4]) * x * (T(4.0) * zz - xx - yy);
  out[14] = T(kShC3[5]) * z * (xx - yy);
  out[15] = T(kShC3[6]) * x * (xx - T(3.0) * yy);
}

/// Raw (unclamped) color: sum_k sh[k, c] * Y_k(d) + 0.5.
template <typename T> Vec3T<T> eval_sh_raw(std::span<const double> sh, const Vec3T<T> &view_dir, int degree) {
  T basis[16];
  sh_basis<T>(view_dir, degree, basis);
  const int K = (degree + 1) * (degree + 1);
  Vec3T<T> rgb(T(0.5), T(0.5), T(0.5));
  for (int k = 0; k < K; ++k)
    for (int c = 0; c < 3; ++c)
      rgb[c] += basis[k] * T(sh[k * 3 + c]);
  return rgb;
}

/// View-dependent RGB, clamped below at zero.
inline Vec3 eval_sh(std::span<const double> sh, const Vec3 &view_dir, int degree) {
  require(sh.size() >= static_cast<std::size_t>((degree + 1) * (degree + 1) * 3), "too few SH coefficients");
  Vec3 rgb = eval_sh_raw<double>(sh, view_dir, degree);
  return rgb.cwiseMax(0.0);
}

/// Degree-0 coefficient that produces a flat color.
inline double sh_dc_for(double color) { return (color - 0.5) / kShC0; }

} // namespace sqgs
