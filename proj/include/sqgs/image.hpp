#pragma once

#include <array>
#include <vector>

#include "common.hpp"

namespace sqgs {

/// Interleaved float64 image, row-major, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  double &at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int x, int y, int c = 0) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool same_shape(const Image &o) const { return width == o.width && height == o.height && channels == o.channels; }
  bool empty() const { return data.empty(); }
};

inline void require_same_shape(const Image &a, const Image &b, const char *what) {
  if (!a.same_shape(b))
    throw Error(std::string(what) + ": image dimensions differ");
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

inline std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (auto &v : g)
    v /= sum;
  return g;
}

namespace detail {

/// Zero-padded separable Gaussian filtering of one plane (size-preserving).
inline std::vector<double> gaussian_filter(const std::vector<double> &src, int w, int h) {
  static const auto g = ssim_kernel();
  constexpr int r = kSsimWindow / 2;
  std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx >= 0 && xx < w)
          s += g[k + r] * src[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy >= 0 && yy < h)
          s += g[k + r] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
  return out;
}

} // namespace detail

/**
 * Mean local SSIM (11x11 Gaussian window, sigma 1.5, zero padding), averaged
 * over pixels and channels. When grad_a is given it receives d SSIM / d a.
 */
inline double ssim(const Image &a, const Image &b, Image *grad_a = nullptr) {
  require_same_shape(a, b, "ssim");
  require(!a.empty(), "ssim: empty image");
  const int w = a.width, h = a.height, C = a.channels;
  const std::size_t n = a.pixels();
  if (grad_a)
    *grad_a = Image(w, h, C, 0.0);
  double total = 0.0;
  std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
  for (int c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      pa[i] = a.data[i * C + c];
      pb[i] = b.data[i * C + c];
      paa[i] = pa[i] * pa[i];
      pbb[i] = pb[i] * pb[i];
      pab[i] = pa[i] * pb[i];
    }
    const auto ma = detail::gaussian_filter(pa, w, h);
    const auto mb = detail::gaussian_filter(pb, w, h);
    const auto eaa = detail::gaussian_filter(paa, w, h);
    const auto ebb = detail::gaussian_filter(pbb, w, h);
    const auto eab = detail::gaussian_filter(pab, w, h);
    std::vector<double> dm(n), daa(n), dab(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double sa = eaa[i] - ma[i] * ma[i];
      const double sb = ebb[i] - mb[i] * mb[i];
      const double sab = eab[i] - ma[i] * mb[i];
      const double A1 = 2.0 * ma[i] * mb[i] + kSsimC1;
      const double A2 = 2.0 * sab + kSsimC2;
      const double B1 = ma[i] * ma[i] + mb[i] * mb[i] + kSsimC1;
      const double B2 = sa + sb + kSsimC2;
      const double s = (A1 * A2) / (B1 * B2);
      total += s;
      if (grad_a) {
        dm[i] = s * (2.0 * mb[i] / A1 - 2.0 * mb[i] / A2 - 2.0 * ma[i] / B1 + 2.0 * ma[i] / B2);
        daa[i] = -s / B2;
        dab[i] = 2.0 * s / A2;
      }
    }
    if (grad_a) {
      // The symmetric zero-padded filter is self-adjoint.
      const auto gm = detail::gaussian_filter(dm, w, h);
      const auto gaa = detail::gaussian_filter(daa, w, h);
      const auto gab = detail::gaussian_filter(dab, w, h);
      const double norm = 1.0 / static_cast<double>(n * C);
      for (std::size_t i = 0; i < n; ++i)
        grad_a->data[i * C + c] = norm * (gm[i] + 2.0 * pa[i] * gaa[i] + pb[i] * gab[i]);
    }
  }
  return total / static_cast<double>(n * C);
}

} // namespace sqgs
