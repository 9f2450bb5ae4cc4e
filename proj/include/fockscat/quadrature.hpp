#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "fockscat/core.hpp"

namespace fockscat {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::size_t size() const noexcept { return nodes.size(); }
};

/// n-point Gauss-Legendre rule on [-1, 1] (Newton on P_n from Chebyshev
/// starting guesses).
inline QuadratureRule gauss_legendre(std::size_t n) {
  if (n == 0) throw ValidationError("quadrature.nodes", "need at least one node");
  QuadratureRule q;
  q.nodes.resize(n);
  q.weights.resize(n);
  const std::size_t half = (n + 1) / 2;
  for (std::size_t i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = pk;
      }
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    q.nodes[i] = -x;
    q.nodes[n - 1 - i] = x;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    q.weights[i] = w;
    q.weights[n - 1 - i] = w;
  }
  return q;
}

/// The rule mapped to [a, b].
inline QuadratureRule map_rule(const QuadratureRule& ref, double a, double b) {
  QuadratureRule q;
  const double h = 0.5 * (b - a), c = 0.5 * (a + b);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    q.nodes.push_back(c + h * ref.nodes[i]);
    q.weights.push_back(h * ref.weights[i]);
  }
  return q;
}

/// Composite rule: `panels` equal panels on [a, b], `per_panel` nodes each.
inline QuadratureRule composite_gauss_legendre(double a, double b, std::size_t panels, std::size_t per_panel) {
  const auto ref = gauss_legendre(per_panel);
  QuadratureRule q;
  const double w = (b - a) / static_cast<double>(panels);
  for (std::size_t p = 0; p < panels; ++p) {
    auto part = map_rule(ref, a + w * static_cast<double>(p), a + w * static_cast<double>(p + 1));
    q.nodes.insert(q.nodes.end(), part.nodes.begin(), part.nodes.end());
    q.weights.insert(q.weights.end(), part.weights.begin(), part.weights.end());
  }
  return q;
}

}  // namespace fockscat
