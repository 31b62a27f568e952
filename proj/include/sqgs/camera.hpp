#pragma once

#include <array>

#include "common.hpp"

namespace sqgs {

/**
 * Pinhole camera. Right-handed camera frame: x right, y up, looking down -z.
 * Pixel (col, row) has its center at (col + 0.5, row + 0.5); image rows grow
 * downwards, so v = cy - fy * y / depth.
 */
struct Camera {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  Mat3 R = Mat3::Identity(); // world-to-camera rotation
  Vec3 t = Vec3::Zero();     // world-to-camera translation

  Vec3 position() const { return -R.transpose() * t; }
  Vec3 to_camera(const Vec3 &p) const { return R * p + t; }

  void validate() const {
    require(fx > 0.0 && fy > 0.0, "camera focal lengths must be positive");
    require(width > 0 && height > 0, "camera image size must be positive");
    require(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height, "principal point outside the image");
    require((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6 && R.determinant() > 0.0,
            "camera rotation is not orthonormal");
  }

  /// Projects a world point; returns false when it lies behind `near`.
  bool project(const Vec3 &p, Vec2 &uv, double near = 1e-2) const {
    const Vec3 c = to_camera(p);
    const double depth = -c.z();
    if (depth < near)
      return false;
    uv = Vec2(cx + fx * c.x() / depth, cy - fy * c.y() / depth);
    return true;
  }

  /// World-space unit direction through continuous pixel coordinates (u, v).
  Vec3 ray_direction(double u, double v) const {
    const Vec3 d((u - cx) / fx, -(v - cy) / fy, -1.0);
    return (R.transpose() * d).normalized();
  }

  /// 4x4 row-major world-to-camera matrix.
  std::array<double, 16> w2c() const {
    std::array<double, 16> m{};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c)
        m[r * 4 + c] = R(r, c);
      m[r * 4 + 3] = t[r];
    }
    m[15] = 1.0;
    return m;
  }

  static Camera look_at(const Vec3 &eye, const Vec3 &target, Vec3 up, double focal, int width, int height) {
    const Vec3 f = (target - eye).normalized();
    if (std::abs(f.dot(up.normalized())) > 0.999)
      up = std::abs(f.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    const Vec3 s = f.cross(up).normalized();
    const Vec3 u = s.cross(f);
    Camera cam;
    cam.R.row(0) = s.transpose();
    cam.R.row(1) = u.transpose();
    cam.R.row(2) = -f.transpose();
    cam.t = -cam.R * eye;
    cam.fx = cam.fy = focal;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    return cam;
  }
};

} // namespace sqgs
