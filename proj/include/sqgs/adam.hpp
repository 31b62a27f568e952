#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "common.hpp"

namespace sqgs {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
};

/// Moment estimates for one parameter group; bias correction uses its own step count.
class Adam {
public:
  Adam() = default;
  explicit Adam(std::size_t n, AdamHyper h = {}) : h_(h), m_(n, 0.0), v_(n, 0.0) {}

  std::size_t size() const { return m_.size(); }
  long steps() const { return t_; }

  /// One update with per-entry learning rates (lr.size() == 1 broadcasts).
  void step(std::span<double> x, std::span<const double> g, std::span<const double> lr) {
    require(x.size() == m_.size() && g.size() == m_.size(), "adam: parameter/gradient size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(h_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(h_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m_[i] = h_.beta1 * m_[i] + (1.0 - h_.beta1) * g[i];
      v_[i] = h_.beta2 * v_[i] + (1.0 - h_.beta2) * g[i] * g[i];
      const double mh = m_[i] / c1;
      const double vh = v_[i] / c2;
      const double rate = lr.size() == 1 ? lr[0] : lr[i];
      x[i] -= rate * mh / (std::sqrt(vh) + h_.eps);
    }
  }

  void step(std::span<double> x, std::span<const double> g, double lr) { step(x, g, std::span<const double>(&lr, 1)); }

private:
  AdamHyper h_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

} // namespace sqgs
