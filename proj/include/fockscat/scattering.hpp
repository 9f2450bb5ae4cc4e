#pragma once

// Moller wave operators by time plateau and by Abel damping, range
// projections, intertwining and isometry diagnostics, and S = W-^dagger W+.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "fockscat/evolution.hpp"
#include "fockscat/hamiltonian.hpp"
#include "fockscat/quadrature.hpp"

namespace fockscat {

/// plus: limit t -> -infinity; minus: t -> +infinity.
enum class Direction { plus, minus };

inline std::string to_string(Direction d) { return d == Direction::plus ? "plus" : "minus"; }

/// Sign s with t = -s * |t| along the limit: +1 for plus, -1 for minus.
inline double direction_sign(Direction d) { return d == Direction::plus ? 1.0 : -1.0; }

inline SparseOperator ac_projection(const FockBasis& basis) {
  const auto dim = static_cast<Eigen::Index>(basis.size());
  SparseOperator p(dim, dim);
  std::vector<Eigen::Triplet<cplx>> trips;
  for (Eigen::Index i = 1; i < dim; ++i) trips.emplace_back(i, i, 1.0);
  p.setFromTriplets(trips.begin(), trips.end());
  return p;
}

/// Omega(t) psi = e^{iHt} e^{-i A0 t} P_ac psi.
inline Vector omega_apply(const Propagator& prop, const std::vector<double>& energies, double t, const Vector& psi) {
  Vector x = psi;
  if (x.size() > 0) x(0) = 0.0;
  for (Eigen::Index i = 1; i < x.size(); ++i) x(i) *= std::exp(-imag_unit * (energies[static_cast<std::size_t>(i)] * t));
  return prop.evolve(x, -t);
}

struct WaveOperatorResult {
  DenseMatrix w;
  Direction direction = Direction::plus;
  std::string method;
  /// Plateau time (time-plateau method); NaN otherwise.
  double plateau_time = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> damping_sequence;
  double isometry_defect = 0.0;
  double intertwining_defect = 0.0;
  bool converged = false;
  bool recurrence_detected = false;
  double recurrence_time = std::numeric_limits<double>::quiet_NaN();
  /// Window drift at the returned iterate (time plateau).
  double final_drift = 0.0;
  /// Window drift per grid time (NaN before the first full window).
  std::vector<double> drift_history;
  /// Adiabatic: estimated quadrature error and extrapolation disagreement.
  double quadrature_error = 0.0;
  double extrapolation_disagreement = 0.0;
  double tolerance = 0.0;
};

/// max |(W^dagger W - I)| over the AC block.
inline double isometry_defect(const DenseMatrix& w) {
  const Eigen::Index n = w.cols();
  if (n <= 1) return 0.0;
  DenseMatrix g = w.rightCols(n - 1).adjoint() * w.rightCols(n - 1);
  g -= DenseMatrix::Identity(n - 1, n - 1);
  return max_abs(g);
}

/// max |(H W - W A0) P_ac|.
inline double intertwining_defect(const RegularizedHamiltonian& h, const DenseMatrix& w) {
  const Eigen::Index n = w.cols();
  if (n <= 1) return 0.0;
  DenseMatrix hw = h.full() * w.rightCols(n - 1);
  for (Eigen::Index c = 1; c < n; ++c) hw.col(c - 1) -= w.col(c) * h.basis().energy(static_cast<std::size_t>(c));
  return max_abs(hw);
}

inline double intertwining_defect(const RegularizedHamiltonian& h, const WaveOperatorResult& w) {
  return intertwining_defect(h, w.w);
}

namespace detail {

inline void override_vacuum_column(DenseMatrix& w) {
  if (w.cols() == 0) return;
  w.col(0).setZero();
  w(0, 0) = 1.0;
}

inline void finish_wave_result(const RegularizedHamiltonian& h, WaveOperatorResult& r) {
  override_vacuum_column(r.w);
  r.isometry_defect = isometry_defect(r.w);
  r.intertwining_defect = intertwining_defect(h, r.w);
}

inline void check_dense(const RegularizedHamiltonian& h, std::size_t dense_limit) {
  if (h.dimension() > dense_limit)
    throw ValidationError("waveops", "dimension " + std::to_string(h.dimension()) + " exceeds dense limit " +
                                         std::to_string(dense_limit) + "; use omega_apply on selected states");
}

}  // namespace detail

struct PlateauOptions {
  std::size_t window = 2;
  double tol = 1e-5;
  std::size_t workers = 1;
  std::size_t dense_limit = 2000;
};

/// Omega(t) = e^{iHt} e^{-iA0 t} P_ac along t = -s (plus) or t = +s (minus)
/// for s on the grid. Converged at the first grid time where every column's
/// drift over the trailing window is below tol.
inline WaveOperatorResult wave_operator_time_plateau(const RegularizedHamiltonian& h, const Propagator& prop,
                                                     Direction direction, const std::vector<double>& time_grid,
                                                     PlateauOptions opt = {}) {
  if (time_grid.empty()) throw ValidationError("time_grid", "must be nonempty");
  for (std::size_t i = 0; i < time_grid.size(); ++i)
    if (!(time_grid[i] > 0.0) || (i > 0 && !(time_grid[i] > time_grid[i - 1])))
      throw ValidationError("time_grid", "must be increasing positive times");
  if (opt.window < 2) throw ValidationError("window", "must be at least 2");
  if (!(opt.tol > 0.0)) throw ValidationError("tol", "must be positive");
  detail::check_dense(h, opt.dense_limit);

  const auto dim = static_cast<Eigen::Index>(h.dimension());
  const std::size_t ng = time_grid.size();
  const double sigma = direction_sign(direction);
  const auto& energies = h.basis().energies();

  // Pass 1: per-column consecutive drifts along the grid.
  std::vector<std::vector<double>> step_drift(static_cast<std::size_t>(dim), std::vector<double>(ng, 0.0));
  parallel_for(static_cast<std::size_t>(std::max<Eigen::Index>(dim - 1, 0)), opt.workers, [&](std::size_t j) {
    const Eigen::Index c = static_cast<Eigen::Index>(j) + 1;
    const double e = energies[static_cast<std::size_t>(c)];
    Vector psi = Vector::Zero(dim);
    psi(c) = 1.0;
    // psi(s) = e^{-i sigma H s} e_c; Omega(-sigma s) e_c = e^{i sigma E s} psi(s).
    double s_prev = 0.0;
    Vector prev;
    for (std::size_t k = 0; k < ng; ++k) {
      const double s = time_grid[k];
      psi = prop.evolve(psi, sigma * (s - s_prev));
      s_prev = s;
      Vector cur = psi * std::exp(imag_unit * (sigma * e * s));
      if (k > 0) step_drift[static_cast<std::size_t>(c)][k] = (cur - prev).norm();
      prev = std::move(cur);
    }
  });

  WaveOperatorResult r;
  r.direction = direction;
  r.method = "time-plateau";
  r.tolerance = opt.tol;
  r.drift_history.assign(ng, std::numeric_limits<double>::quiet_NaN());
  std::optional<std::size_t> plateau;
  std::size_t best = 0;
  double best_drift = std::numeric_limits<double>::infinity();
  double running_min = std::numeric_limits<double>::infinity();
  bool decreased = false;
  for (std::size_t k = opt.window - 1; k < ng; ++k) {
    double d = 0.0;
    for (Eigen::Index c = 1; c < dim; ++c)
      for (std::size_t j = k + 2 - opt.window; j <= k; ++j) d = std::max(d, step_drift[static_cast<std::size_t>(c)][j]);
    r.drift_history[k] = d;
    if (k >= opt.window && d < 0.99 * r.drift_history[k - 1]) decreased = true;
    if (decreased && d > 1.01 * running_min && d >= opt.tol && !r.recurrence_detected) {
      r.recurrence_detected = true;
      r.recurrence_time = time_grid[k];
    }
    running_min = std::min(running_min, d);
    if (d < best_drift) {
      best_drift = d;
      best = k;
    }
    if (!plateau && d < opt.tol) plateau = k;
  }
  if (ng < opt.window) best = ng - 1;
  const std::size_t chosen = plateau.value_or(best);
  r.converged = plateau.has_value();
  r.plateau_time = time_grid[chosen];
  r.final_drift = std::isfinite(best_drift) ? r.drift_history[chosen] : std::numeric_limits<double>::infinity();

  // Pass 2: columns at the chosen time.
  const double t = -sigma * r.plateau_time;
  r.w = DenseMatrix::Zero(dim, dim);
  parallel_for(static_cast<std::size_t>(std::max<Eigen::Index>(dim - 1, 0)), opt.workers, [&](std::size_t j) {
    const Eigen::Index c = static_cast<Eigen::Index>(j) + 1;
    Vector e = Vector::Zero(dim);
    e(c) = 1.0;
    r.w.col(c) = omega_apply(prop, energies, t, e);
  });
  detail::finish_wave_result(h, r);
  return r;
}

inline WaveOperatorResult wave_operator_time_plateau(const RegularizedHamiltonian& h, Direction direction,
                                                     const std::vector<double>& time_grid, std::size_t window,
                                                     double tol, PropagatorOptions popt = {},
                                                     std::size_t workers = 1) {
  Propagator prop(h.full(), popt);
  return wave_operator_time_plateau(h, prop, direction, time_grid, PlateauOptions{window, tol, workers});
}

struct AdiabaticOptions {
  /// Truncation of the damped integral: e^{-eps S} = truncation_tol at the smallest eps.
  double truncation_tol = 1e-12;
  std::size_t nodes_per_panel = 16;
  /// Tolerance for the quadrature error estimate and for the extrapolation check.
  double tol = 1e-4;
  std::size_t workers = 1;
  std::size_t dense_limit = 2000;
};

/// W(eps) = eps * int_0^inf e^{-eps s} Omega(-sigma s) P_ac ds for every eps,
/// then linear Richardson extrapolation eps -> 0 on the last two values.
inline WaveOperatorResult wave_operator_adiabatic(const RegularizedHamiltonian& h, const Propagator& prop,
                                                  Direction direction, const std::vector<double>& eps_sequence,
                                                  AdiabaticOptions opt = {}) {
  if (eps_sequence.empty()) throw ValidationError("eps_sequence", "must be nonempty");
  for (std::size_t i = 0; i < eps_sequence.size(); ++i)
    if (!(eps_sequence[i] > 0.0) || (i > 0 && !(eps_sequence[i] < eps_sequence[i - 1])))
      throw ValidationError("eps_sequence", "must be positive and strictly decreasing");
  if (!(opt.truncation_tol > 0.0 && opt.truncation_tol < 1.0))
    throw ValidationError("truncation_tol", "must lie in (0, 1)");
  if (opt.nodes_per_panel < 2) throw ValidationError("nodes_per_panel", "must be at least 2");
  detail::check_dense(h, opt.dense_limit);

  const auto dim = static_cast<Eigen::Index>(h.dimension());
  const double sigma = direction_sign(direction);
  const auto& energies = h.basis().energies();
  const double eps_min = eps_sequence.back();
  const double horizon = std::log(1.0 / opt.truncation_tol) / eps_min;
  const auto [lo, hi] = prop.interval();
  const double emax = energies.empty() ? 0.0 : *std::max_element(energies.begin(), energies.end());
  const double omega = std::max({1.0, std::abs(lo) + emax, std::abs(hi) + emax});
  const auto panels = static_cast<std::size_t>(std::ceil(horizon * omega / 2.0));

  // Fine and coarse Gauss-Legendre on the same panels; their difference
  // estimates the quadrature error.
  const auto fine = composite_gauss_legendre(0.0, horizon, panels, opt.nodes_per_panel);
  const auto coarse = composite_gauss_legendre(0.0, horizon, panels, opt.nodes_per_panel / 2);
  struct Node {
    double s;
    double wf;
    double wc;
  };
  std::vector<Node> nodes;
  for (std::size_t i = 0; i < fine.size(); ++i) nodes.push_back({fine.nodes[i], fine.weights[i], 0.0});
  for (std::size_t i = 0; i < coarse.size(); ++i) nodes.push_back({coarse.nodes[i], 0.0, coarse.weights[i]});
  std::sort(nodes.begin(), nodes.end(), [](const Node& a, const Node& b) { return a.s < b.s; });

  const std::size_t ne = eps_sequence.size();
  std::vector<DenseMatrix> w_eps(ne, DenseMatrix::Zero(dim, dim));
  std::vector<double> col_quad_err(static_cast<std::size_t>(dim), 0.0);
  parallel_for(static_cast<std::size_t>(std::max<Eigen::Index>(dim - 1, 0)), opt.workers, [&](std::size_t j) {
    const Eigen::Index c = static_cast<Eigen::Index>(j) + 1;
    const double e = energies[static_cast<std::size_t>(c)];
    Vector psi = Vector::Zero(dim);
    psi(c) = 1.0;
    std::vector<Vector> acc_f(ne, Vector::Zero(dim)), acc_c(ne, Vector::Zero(dim));
    double s_prev = 0.0;
    for (const auto& nd : nodes) {
      psi = prop.evolve(psi, sigma * (nd.s - s_prev));
      s_prev = nd.s;
      const Vector val = psi * std::exp(imag_unit * (sigma * e * nd.s));
      for (std::size_t q = 0; q < ne; ++q) {
        const double damp = eps_sequence[q] * std::exp(-eps_sequence[q] * nd.s);
        if (nd.wf != 0.0) acc_f[q] += (damp * nd.wf) * val;
        if (nd.wc != 0.0) acc_c[q] += (damp * nd.wc) * val;
      }
    }
    double err = 0.0;
    for (std::size_t q = 0; q < ne; ++q) {
      w_eps[q].col(c) = acc_f[q];
      err = std::max(err, max_abs(acc_f[q] - acc_c[q]));
    }
    col_quad_err[static_cast<std::size_t>(c)] = err;
  });

  auto richardson = [&](std::size_t a, std::size_t b) -> DenseMatrix {
    const double ea = eps_sequence[a], eb = eps_sequence[b];
    return (ea * w_eps[b] - eb * w_eps[a]) / (ea - eb);
  };

  WaveOperatorResult r;
  r.direction = direction;
  r.method = "adiabatic";
  r.damping_sequence = eps_sequence;
  r.tolerance = opt.tol;
  r.quadrature_error = *std::max_element(col_quad_err.begin(), col_quad_err.end());
  // The truncated tail contributes at most truncation_tol per column.
  r.quadrature_error += opt.truncation_tol;
  if (ne == 1) {
    r.w = w_eps[0];
    r.extrapolation_disagreement = std::numeric_limits<double>::infinity();
  } else {
    r.w = richardson(ne - 2, ne - 1);
    r.extrapolation_disagreement =
        ne >= 3 ? max_abs(r.w - richardson(ne - 3, ne - 2)) : max_abs(r.w - w_eps[ne - 1]);
  }
  r.converged = r.quadrature_error <= opt.tol && r.extrapolation_disagreement <= opt.tol;
  r.final_drift = r.extrapolation_disagreement;
  detail::finish_wave_result(h, r);
  return r;
}

inline WaveOperatorResult wave_operator_adiabatic(const RegularizedHamiltonian& h, Direction direction,
                                                  const std::vector<double>& eps_sequence,
                                                  PropagatorOptions popt = {}, AdiabaticOptions opt = {}) {
  Propagator prop(h.full(), popt);
  return wave_operator_adiabatic(h, prop, direction, eps_sequence, opt);
}

struct RangeProjection {
  SparseOperator projector;
  std::size_t rank = 0;
  std::vector<double> singular_values;
  bool rank_deficient = false;
  DenseMatrix orthonormal_basis;
};

/// Orthogonal projection onto the column span of W via SVD on the numerical rank.
inline RangeProjection range_projection(const DenseMatrix& w, double rank_tol = 1e-8) {
  RangeProjection out;
  if (w.size() == 0) return out;
  Eigen::JacobiSVD<DenseMatrix> svd(w, Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() ? sv(0) : 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    out.singular_values.push_back(sv(i));
    if (sv(i) > rank_tol * std::max(1.0, smax)) ++out.rank;
  }
  out.rank_deficient = out.rank < static_cast<std::size_t>(std::min(w.rows(), w.cols()));
  out.orthonormal_basis = svd.matrixU().leftCols(static_cast<Eigen::Index>(out.rank));
  DenseMatrix p = out.orthonormal_basis * out.orthonormal_basis.adjoint();
  p = 0.5 * (p + p.adjoint()).eval();
  out.projector = to_sparse(p, 1e-15);
  return out;
}

inline RangeProjection range_projection(const WaveOperatorResult& w, double rank_tol = 1e-8) {
  return range_projection(w.w, rank_tol);
}

/// Principal angles (radians, ascending) between two column spans.
inline std::vector<double> principal_angles(const RangeProjection& a, const RangeProjection& b) {
  std::vector<double> out;
  if (a.rank == 0 || b.rank == 0) return out;
  DenseMatrix m = a.orthonormal_basis.adjoint() * b.orthonormal_basis;
  Eigen::JacobiSVD<DenseMatrix> svd(m);
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
    out.push_back(std::acos(std::clamp(svd.singularValues()(i), 0.0, 1.0)));
  std::sort(out.begin(), out.end());
  return out;
}

struct ScatteringReport {
  DenseMatrix s_matrix;
  double unitarity_defect = 0.0;
  cplx vacuum_persistence{1.0, 0.0};
  /// probabilities(u, v) = |<u|S|v>|^2, in-state v, out-state u.
  Eigen::MatrixXd channel_probabilities;
  std::vector<std::string> warnings;
};

/// max |S^dagger S - I| over the AC block.
inline double unitarity_defect(const DenseMatrix& s) {
  const Eigen::Index n = s.cols();
  if (n <= 1) return 0.0;
  DenseMatrix blk = s.bottomRightCorner(n - 1, n - 1);
  return max_abs(DenseMatrix(blk.adjoint() * blk) - DenseMatrix::Identity(n - 1, n - 1));
}

/// Forces the vacuum row and column of S to the unit vector.
inline void force_vacuum(DenseMatrix& s) {
  if (s.size() == 0) return;
  s.row(0).setZero();
  s.col(0).setZero();
  s(0, 0) = 1.0;
}

inline ScatteringReport scattering_operator(const WaveOperatorResult& wp, const WaveOperatorResult& wm) {
  if (wp.w.rows() != wm.w.rows() || wp.w.cols() != wm.w.cols())
    throw ValidationError("scattering", "wave operators have different shapes");
  ScatteringReport r;
  if (wp.direction != Direction::plus || wm.direction != Direction::minus)
    r.warnings.push_back("wave operator directions are not (plus, minus)");
  if (wp.method != wm.method) r.warnings.push_back("method mismatch: " + wp.method + " vs " + wm.method);
  r.s_matrix = wm.w.adjoint() * wp.w;
  force_vacuum(r.s_matrix);
  r.vacuum_persistence = r.s_matrix.size() ? r.s_matrix(0, 0) : cplx{1.0, 0.0};
  r.unitarity_defect = unitarity_defect(r.s_matrix);
  r.channel_probabilities = r.s_matrix.cwiseAbs2();
  return r;
}

}  // namespace fockscat
