#pragma once

// Interaction-picture generator, Dyson terms by nested Gauss-Legendre
// quadrature, interaction-picture propagators and the Born-level S-matrix.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fockscat/evolution.hpp"
#include "fockscat/hamiltonian.hpp"
#include "fockscat/quadrature.hpp"

namespace fockscat {

/// A_i(t) = e^{iA0 t} (A - A0) e^{-iA0 t}, kept as its n x n block.
class InteractionPictureGenerator {
 public:
  explicit InteractionPictureGenerator(const RegularizedHamiltonian& h)
      : block_(h.interaction_block()), dimension_(h.dimension()) {
    energies_.assign(h.basis().energies().begin(),
                     h.basis().energies().begin() + static_cast<std::ptrdiff_t>(h.interaction_rank()));
  }

  /// Generator from an explicit block and its free energies (toy models).
  InteractionPictureGenerator(DenseMatrix block, std::vector<double> energies, std::size_t dimension = 0)
      : block_(std::move(block)), energies_(std::move(energies)), dimension_(dimension) {
    if (block_.rows() != block_.cols() || static_cast<std::size_t>(block_.rows()) != energies_.size())
      throw ValidationError("generator", "block and energy list sizes disagree");
    if (dimension_ == 0) dimension_ = energies_.size();
    if (dimension_ < energies_.size()) throw ValidationError("generator", "dimension smaller than block");
  }

  std::size_t rank() const noexcept { return energies_.size(); }
  std::size_t dimension() const noexcept { return dimension_; }
  const DenseMatrix& block() const noexcept { return block_; }
  const std::vector<double>& energies() const noexcept { return energies_; }

  /// Block entries B[u,v] e^{i(E_u - E_v)t}.
  DenseMatrix block_at(double t) const {
    const auto n = static_cast<Eigen::Index>(rank());
    Vector ph(n);
    for (Eigen::Index i = 0; i < n; ++i) ph(i) = std::exp(imag_unit * (energies_[static_cast<std::size_t>(i)] * t));
    return ph.asDiagonal() * block_ * ph.conjugate().asDiagonal();
  }

  /// Full dimension x dimension matrix A_i(t).
  DenseMatrix at(double t) const { return embed(block_at(t), false); }

  /// Places an n x n block in the top-left corner; the rest is zero or identity.
  DenseMatrix embed(const DenseMatrix& blk, bool identity_outside) const {
    const auto d = static_cast<Eigen::Index>(dimension_);
    DenseMatrix out = DenseMatrix::Zero(d, d);
    if (identity_outside) out.setIdentity();
    out.topLeftCorner(blk.rows(), blk.cols()) = blk;
    return out;
  }

 private:
  DenseMatrix block_;
  std::vector<double> energies_;
  std::size_t dimension_;
};

inline DenseMatrix generator_at(const InteractionPictureGenerator& g, double t) { return g.at(t); }

struct DysonQuadrature {
  /// Gauss-Legendre nodes per nesting level; 0 selects by doubling.
  std::size_t nodes_per_level = 0;
  /// Target for the doubling check.
  double tolerance = 1e-12;
  std::size_t max_nodes = 256;
  std::size_t workers = 1;
};

namespace detail {

/// F_m(tau) X = int_{t'}^{tau} dt1 A(t1) F_{m-1}(t1) X, F_0 X = X.
inline DenseMatrix nested_simplex(const InteractionPictureGenerator& g, int m, double tau, double t0,
                                  const DenseMatrix& x, const QuadratureRule& ref) {
  if (m == 0) return x;
  DenseMatrix acc = DenseMatrix::Zero(x.rows(), x.cols());
  if (tau == t0) return acc;
  const auto q = map_rule(ref, t0, tau);
  for (std::size_t i = 0; i < q.size(); ++i)
    acc += q.weights[i] * (g.block_at(q.nodes[i]) * nested_simplex(g, m - 1, q.nodes[i], t0, x, ref));
  return acc;
}

inline DenseMatrix cube_recursive(const InteractionPictureGenerator& g, int m, double t, double t0,
                                  std::vector<double>& times, const QuadratureRule& ref) {
  const auto n = static_cast<Eigen::Index>(g.rank());
  if (static_cast<int>(times.size()) == m) {
    std::vector<double> sorted = times;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    DenseMatrix prod = DenseMatrix::Identity(n, n);
    for (double s : sorted) prod = prod * g.block_at(s);
    return prod;
  }
  // Split [t0, t] at the times already chosen so each piece has a fixed order.
  std::vector<double> cuts = {t0, t};
  for (double s : times) cuts.push_back(s);
  std::sort(cuts.begin(), cuts.end());
  DenseMatrix acc = DenseMatrix::Zero(n, n);
  for (std::size_t p = 0; p + 1 < cuts.size(); ++p) {
    if (cuts[p + 1] <= cuts[p]) continue;
    const auto q = map_rule(ref, cuts[p], cuts[p + 1]);
    for (std::size_t i = 0; i < q.size(); ++i) {
      times.push_back(q.nodes[i]);
      acc += q.weights[i] * cube_recursive(g, m, t, t0, times, ref);
      times.pop_back();
    }
  }
  return acc;
}

inline cplx minus_i_power(int m) {
  static const cplx cycle[4] = {{1, 0}, {0, -1}, {-1, 0}, {0, 1}};
  return cycle[m % 4];
}

}  // namespace detail

/// Smallest node count (doubling from 4) at which the first-order term is
/// stable to the requested tolerance.
inline std::size_t choose_dyson_nodes(const InteractionPictureGenerator& g, double t, double t0,
                                      const DysonQuadrature& quad, double* achieved = nullptr) {
  if (quad.nodes_per_level > 0) return quad.nodes_per_level;
  const auto n = static_cast<Eigen::Index>(g.rank());
  const DenseMatrix id = DenseMatrix::Identity(n, n);
  std::size_t nodes = 4;
  DenseMatrix prev = detail::nested_simplex(g, 1, t, t0, id, gauss_legendre(nodes));
  const double scale = std::max(1.0, max_abs(prev));
  double diff = 0.0;
  while (nodes * 2 <= quad.max_nodes) {
    DenseMatrix cur = detail::nested_simplex(g, 1, t, t0, id, gauss_legendre(nodes * 2));
    diff = max_abs(cur - prev);
    nodes *= 2;
    prev = std::move(cur);
    if (diff <= quad.tolerance * scale) {
      if (achieved) *achieved = diff;
      return nodes;
    }
  }
  if (achieved) *achieved = diff;
  throw ConvergenceError("dyson quadrature: first-order term not stable at " + std::to_string(nodes) + " nodes",
                         diff);
}

/// Order-m Dyson term (-i)^m int_{t'}^{t} dt1 ... int_{t'}^{t_{m-1}} dt_m A(t1)...A(tm),
/// as a dimension x dimension matrix (zero outside the interaction block).
inline DenseMatrix dyson_term(const InteractionPictureGenerator& g, int m, double t, double t0,
                              const DysonQuadrature& quad = {}) {
  if (m < 1) throw ValidationError("order", "must be at least 1");
  if (t < t0) throw ValidationError("t", "must satisfy t >= t'");
  const std::size_t nodes = choose_dyson_nodes(g, t, t0, quad);
  const auto ref = gauss_legendre(nodes);
  const auto n = static_cast<Eigen::Index>(g.rank());
  const DenseMatrix id = DenseMatrix::Identity(n, n);
  DenseMatrix acc = DenseMatrix::Zero(n, n);
  if (t > t0) {
    // Outermost level in parallel, summed in node order.
    const auto q = map_rule(ref, t0, t);
    std::vector<DenseMatrix> parts(q.size());
    parallel_for(q.size(), quad.workers, [&](std::size_t i) {
      parts[i] = q.weights[i] * (g.block_at(q.nodes[i]) * detail::nested_simplex(g, m - 1, q.nodes[i], t0, id, ref));
    });
    for (const auto& p : parts) acc += p;
  }
  return g.embed(detail::minus_i_power(m) * acc, false);
}

/// <u| term_m |v> by contracting the nested integrals with a single vector.
inline cplx dyson_term_element(const InteractionPictureGenerator& g, int m, double t, double t0, std::size_t u,
                               std::size_t v, const DysonQuadrature& quad = {}) {
  if (m < 1) throw ValidationError("order", "must be at least 1");
  if (t < t0) throw ValidationError("t", "must satisfy t >= t'");
  if (u >= g.rank() || v >= g.rank()) return 0.0;
  const std::size_t nodes = choose_dyson_nodes(g, t, t0, quad);
  DenseMatrix x = DenseMatrix::Zero(static_cast<Eigen::Index>(g.rank()), 1);
  x(static_cast<Eigen::Index>(v), 0) = 1.0;
  const DenseMatrix col = detail::nested_simplex(g, m, t, t0, x, gauss_legendre(nodes));
  return detail::minus_i_power(m) * col(static_cast<Eigen::Index>(u), 0);
}

/// (-i)^m / m! times the time-ordered integral over the full cube [t', t]^m.
inline DenseMatrix dyson_term_cube(const InteractionPictureGenerator& g, int m, double t, double t0,
                                   const DysonQuadrature& quad = {}) {
  if (m < 1) throw ValidationError("order", "must be at least 1");
  if (t < t0) throw ValidationError("t", "must satisfy t >= t'");
  const std::size_t nodes = choose_dyson_nodes(g, t, t0, quad);
  std::vector<double> times;
  DenseMatrix acc = detail::cube_recursive(g, m, t, t0, times, gauss_legendre(nodes));
  double fact = 1.0;
  for (int i = 2; i <= m; ++i) fact *= i;
  return g.embed(detail::minus_i_power(m) * acc / fact, false);
}

struct DysonExpansion {
  int order = 0;
  /// partial_sums[k] = sum of terms 0..k (identity outside the block).
  std::vector<DenseMatrix> partial_sums;
  std::vector<DenseMatrix> terms;
  std::size_t nodes_per_level = 0;
  /// Simplex versus (1/m!) time-ordered cube at order `spot_order`.
  int spot_order = 0;
  double symmetrized_difference = 0.0;
};

inline DysonExpansion time_ordered_exponential(const InteractionPictureGenerator& g, double t, double t0, int order,
                                               const DysonQuadrature& quad = {}, int max_materialized = 4) {
  if (order < 0) throw ValidationError("order", "must be nonnegative");
  if (order > max_materialized)
    throw ValidationError("order", "orders above " + std::to_string(max_materialized) +
                                       " are not materialized; use dyson_term_element");
  if (t < t0) throw ValidationError("t", "must satisfy t >= t'");
  DysonQuadrature q = quad;
  q.nodes_per_level = choose_dyson_nodes(g, t, t0, quad);
  DysonExpansion out;
  out.order = order;
  out.nodes_per_level = q.nodes_per_level;
  const auto d = static_cast<Eigen::Index>(g.dimension());
  out.terms.push_back(DenseMatrix::Identity(d, d));
  out.partial_sums.push_back(out.terms.back());
  for (int m = 1; m <= order; ++m) {
    out.terms.push_back(dyson_term(g, m, t, t0, q));
    out.partial_sums.push_back(out.partial_sums.back() + out.terms.back());
  }
  if (order >= 1) {
    out.spot_order = std::min(order, 2);
    const DenseMatrix cube = dyson_term_cube(g, out.spot_order, t, t0, q);
    out.symmetrized_difference = max_abs(cube - out.terms[static_cast<std::size_t>(out.spot_order)]);
  }
  return out;
}

/// U(t, t') = e^{iA0 t} e^{-iH(t - t')} e^{-iA0 t'}, full dimension.
inline DenseMatrix propagator_interaction_picture(const RegularizedHamiltonian& h, const Propagator& prop, double t,
                                                  double t0, std::size_t workers = 1) {
  const auto d = static_cast<Eigen::Index>(h.dimension());
  const auto& e = h.basis().energies();
  DenseMatrix u(d, d);
  parallel_for(static_cast<std::size_t>(d), workers, [&](std::size_t j) {
    Vector x = Vector::Zero(d);
    x(static_cast<Eigen::Index>(j)) = std::exp(-imag_unit * (e[j] * t0));
    Vector y = prop.evolve(x, t - t0);
    for (Eigen::Index i = 0; i < d; ++i) y(i) *= std::exp(imag_unit * (e[static_cast<std::size_t>(i)] * t));
    u.col(static_cast<Eigen::Index>(j)) = y;
  });
  return u;
}

inline DenseMatrix propagator_interaction_picture(const RegularizedHamiltonian& h, double t, double t0,
                                                  PropagatorOptions popt = {}, std::size_t workers = 1) {
  Propagator prop(h.full(), popt);
  return propagator_interaction_picture(h, prop, t, t0, workers);
}

/// First-order damped S-matrix term: -i B[u,v] 2 eps / ((E_u - E_v)^2 + eps^2)
/// on the interaction block, zero elsewhere. The Born S-matrix is I plus this.
inline DenseMatrix smatrix_first_order(const InteractionPictureGenerator& g, double eps) {
  if (!(eps > 0.0)) throw ValidationError("eps", "must be positive");
  const auto n = static_cast<Eigen::Index>(g.rank());
  DenseMatrix blk(n, n);
  const auto& e = g.energies();
  for (Eigen::Index u = 0; u < n; ++u)
    for (Eigen::Index v = 0; v < n; ++v) {
      const double de = e[static_cast<std::size_t>(u)] - e[static_cast<std::size_t>(v)];
      blk(u, v) = -imag_unit * g.block()(u, v) * (2.0 * eps / (de * de + eps * eps));
    }
  return g.embed(blk, false);
}

inline DenseMatrix smatrix_first_order(const RegularizedHamiltonian& h, double eps) {
  return smatrix_first_order(InteractionPictureGenerator(h), eps);
}

/// 4 x the distance from E_channel to the nearest distinct free level.
inline double default_damping(const std::vector<double>& energies, std::size_t channel) {
  const double ec = energies.at(channel);
  double gap = std::numeric_limits<double>::infinity();
  for (double e : energies)
    if (std::abs(e - ec) > 1e-12) gap = std::min(gap, std::abs(e - ec));
  if (!std::isfinite(gap)) throw ValidationError("damping", "no distinct free level to set a default");
  return 4.0 * gap;
}

struct DampedPropagatorOptions {
  /// Horizon T; nonpositive selects ln(1/truncation_tol) / eps.
  double horizon = 0.0;
  double truncation_tol = 1e-10;
  /// Step size; nonpositive selects 0.25 / max(1, largest block frequency).
  double step = 0.0;
};

struct DampedPropagatorResult {
  DenseMatrix u;
  double eps = 0.0;
  double horizon = 0.0;
  double step = 0.0;
  std::size_t steps = 0;
};

/// U_eps(T, -T) for the damped generator e^{-eps |s|} A_i(s), integrated with
/// fourth-order two-point exponential steps (unitary by construction).
inline DampedPropagatorResult damped_interaction_propagator(const InteractionPictureGenerator& g, double eps,
                                                            DampedPropagatorOptions opt = {}) {
  if (!(eps > 0.0)) throw ValidationError("eps", "must be positive");
  const auto n = static_cast<Eigen::Index>(g.rank());
  double omega = 1.0;
  const auto& e = g.energies();
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = 0; j < e.size(); ++j) omega = std::max(omega, std::abs(e[i] - e[j]));
  DampedPropagatorResult r;
  r.eps = eps;
  r.horizon = opt.horizon > 0.0 ? opt.horizon : std::log(1.0 / opt.truncation_tol) / eps;
  const double h_target = opt.step > 0.0 ? opt.step : 0.25 / omega;
  // Even number of steps so s = 0 (the kink of e^{-eps|s|}) is a step boundary.
  r.steps = 2 * static_cast<std::size_t>(std::ceil(r.horizon / h_target));
  r.step = 2.0 * r.horizon / static_cast<double>(r.steps);
  const double h = r.step;
  const double c1 = 0.5 - std::sqrt(3.0) / 6.0, c2 = 0.5 + std::sqrt(3.0) / 6.0;
  auto gen = [&](double s) { return (std::exp(-eps * std::abs(s)) * g.block_at(s)).eval(); };
  DenseMatrix u = DenseMatrix::Identity(n, n);
  for (std::size_t k = 0; k < r.steps; ++k) {
    const double s0 = -r.horizon + h * static_cast<double>(k);
    const DenseMatrix g1 = gen(s0 + c1 * h), g2 = gen(s0 + c2 * h);
    DenseMatrix kmat = 0.5 * h * (g1 + g2) - imag_unit * (std::sqrt(3.0) / 12.0 * h * h) * (g2 * g1 - g1 * g2);
    kmat = 0.5 * (kmat + kmat.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<DenseMatrix> es(kmat);
    Vector ph(n);
    for (Eigen::Index i = 0; i < n; ++i) ph(i) = std::exp(-imag_unit * es.eigenvalues()(i));
    u = (es.eigenvectors() * ph.asDiagonal() * es.eigenvectors().adjoint()) * u;
  }
  r.u = g.embed(u, true);
  return r;
}

}  // namespace fockscat
