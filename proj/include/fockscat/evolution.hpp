#pragma once

// Unitary propagation e^{-iHt} for sparse hermitian H: adaptive Lanczos
// stepping, Chebyshev expansion, and a cached dense eigendecomposition.

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fockscat/fock.hpp"

namespace fockscat {

enum class PropagationMethod { krylov, chebyshev, dense };

inline std::string to_string(PropagationMethod m) {
  switch (m) {
    case PropagationMethod::krylov: return "krylov";
    case PropagationMethod::chebyshev: return "chebyshev";
    case PropagationMethod::dense: return "dense";
  }
  return "?";
}

inline PropagationMethod parse_propagation_method(const std::string& s) {
  if (s == "krylov") return PropagationMethod::krylov;
  if (s == "chebyshev") return PropagationMethod::chebyshev;
  if (s == "dense") return PropagationMethod::dense;
  throw ValidationError("propagation.method", "unknown method '" + s + "' (krylov, chebyshev, dense)");
}

struct PropagatorOptions {
  PropagationMethod method = PropagationMethod::krylov;
  /// Error allowed per unit time.
  double tolerance = 1e-12;
  /// Largest single step; infinity means unbounded.
  double step_cap = std::numeric_limits<double>::infinity();
  int krylov_dim = 30;
  std::size_t max_steps = 100000;
  std::size_t dense_limit = 2000;
};

/// Gershgorin enclosure [lo, hi] of the spectrum of a hermitian matrix.
inline std::pair<double, double> spectral_interval(const SparseOperator& h) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Eigen::Index r = 0; r < h.outerSize(); ++r) {
    double diag = 0.0, radius = 0.0;
    for (SparseOperator::InnerIterator it(h, r); it; ++it) {
      if (it.col() == r)
        diag = it.value().real();
      else
        radius += std::abs(it.value());
    }
    lo = std::min(lo, diag - radius);
    hi = std::max(hi, diag + radius);
  }
  if (h.rows() == 0) return {0.0, 0.0};
  return {lo, hi};
}

/// J_0(x) .. J_kmax(x) for x >= 0 by Miller's backward recurrence,
/// normalized with J_0 + 2 sum J_2k = 1. Stable for orders far above x.
inline std::vector<double> bessel_j_sequence(double x, int kmax) {
  std::vector<double> out(static_cast<std::size_t>(kmax) + 1, 0.0);
  if (x == 0.0) {
    out[0] = 1.0;
    return out;
  }
  const double top = std::max(static_cast<double>(kmax), x);
  int start = static_cast<int>(top + 30.0 + std::sqrt(40.0 * top));
  start += start % 2;
  double next = 0.0, cur = 1e-280, norm = 0.0;
  for (int n = start; n >= 1; --n) {
    const double prev = 2.0 * n / x * cur - next;
    next = cur;
    cur = prev;
    if (n - 1 <= kmax) out[static_cast<std::size_t>(n - 1)] = cur;
    if ((n - 1) % 2 == 0 && n - 1 > 0) norm += 2.0 * cur;
    if (std::abs(cur) > 1e250) {
      cur *= 1e-250;
      next *= 1e-250;
      norm *= 1e-250;
      for (auto& o : out) o *= 1e-250;
    }
  }
  norm += cur;
  for (auto& o : out) o /= norm;
  return out;
}

class Propagator {
 public:
  explicit Propagator(SparseOperator h, PropagatorOptions options = {})
      : h_(std::make_shared<const SparseOperator>(std::move(h))), options_(options) {
    if (h_->rows() != h_->cols()) throw ValidationError("propagation", "hamiltonian must be square");
    if (!(options_.tolerance > 0.0)) throw ValidationError("propagation.tolerance", "must be positive");
    if (!(options_.step_cap > 0.0)) throw ValidationError("propagation.step_cap", "must be positive");
    if (options_.krylov_dim < 2) throw ValidationError("propagation.krylov_dim", "must be at least 2");
    interval_ = spectral_interval(*h_);
    if (options_.method == PropagationMethod::dense) {
      if (static_cast<std::size_t>(h_->rows()) > options_.dense_limit)
        throw ValidationError("propagation.method", "dense propagation above the dense limit of " +
                                                        std::to_string(options_.dense_limit));
      Eigen::SelfAdjointEigenSolver<DenseMatrix> es(to_dense(*h_));
      if (es.info() != Eigen::Success) throw Error("eigendecomposition failed");
      eigvals_ = es.eigenvalues();
      eigvecs_ = es.eigenvectors();
    }
  }

  const SparseOperator& hamiltonian() const noexcept { return *h_; }
  const PropagatorOptions& options() const noexcept { return options_; }
  PropagationMethod method() const noexcept { return options_.method; }
  std::pair<double, double> interval() const noexcept { return interval_; }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(h_->rows()); }

  /// e^{-iHt} v.
  Vector evolve(const Vector& v, double t) const {
    if (v.size() != h_->rows())
      throw ValidationError("state", "dimension " + std::to_string(v.size()) + " does not match operator " +
                                         std::to_string(h_->rows()));
    if (!std::isfinite(t)) throw ValidationError("t", "must be finite");
    if (t == 0.0 || v.size() == 0) return v;
    switch (options_.method) {
      case PropagationMethod::dense: return evolve_dense(v, t);
      case PropagationMethod::chebyshev: return evolve_chebyshev(v, t);
      case PropagationMethod::krylov: break;
    }
    return evolve_krylov(v, t);
  }

  /// e^{-iHt} applied to every column.
  DenseMatrix evolve_columns(const DenseMatrix& m, double t, std::size_t workers = 1) const {
    DenseMatrix out(m.rows(), m.cols());
    parallel_for(static_cast<std::size_t>(m.cols()), workers, [&](std::size_t c) {
      out.col(static_cast<Eigen::Index>(c)) = evolve(m.col(static_cast<Eigen::Index>(c)), t);
    });
    return out;
  }

 private:
  Vector evolve_dense(const Vector& v, double t) const {
    Vector c = eigvecs_.adjoint() * v;
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) *= std::exp(-imag_unit * (eigvals_(i) * t));
    return eigvecs_ * c;
  }

  Vector evolve_krylov(const Vector& v0, double t) const {
    const SparseOperator& h = *h_;
    const Eigen::Index dim = h.rows();
    const double scale = std::max({1.0, std::abs(interval_.first), std::abs(interval_.second)});
    Vector w = v0;
    double done = 0.0;
    const double sign = t > 0 ? 1.0 : -1.0;
    const double total = std::abs(t);
    double tau = std::min({total, options_.step_cap, 1.0 / scale});
    std::size_t steps = 0;
    double worst = 0.0;

    while (done < total) {
      const double beta = w.norm();
      if (beta == 0.0) return w;
      const int mmax = static_cast<int>(std::min<Eigen::Index>(options_.krylov_dim, dim));
      DenseMatrix basis(dim, mmax + 1);
      Eigen::MatrixXd tri = Eigen::MatrixXd::Zero(mmax + 1, mmax);
      basis.col(0) = w / beta;
      int m = mmax;
      double h_next = 0.0;
      for (int j = 0; j < mmax; ++j) {
        Vector z = h * basis.col(j);
        // Full reorthogonalization, two passes.
        for (int pass = 0; pass < 2; ++pass) {
          for (int i = 0; i <= j; ++i) {
            const cplx c = basis.col(i).dot(z);
            z -= c * basis.col(i);
            if (pass == 0 && i >= j - 1) tri(i, j) += c.real();
          }
        }
        const double nz = z.norm();
        tri(j + 1, j) = nz;
        if (nz <= 1e-13 * scale) {
          m = j + 1;
          h_next = 0.0;
          break;
        }
        h_next = nz;
        if (j + 1 < mmax + 1) basis.col(j + 1) = z / nz;
      }
      Eigen::MatrixXd tm = tri.topLeftCorner(m, m);
      tm = 0.5 * (tm + tm.transpose()).eval();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tm);
      const Eigen::VectorXd theta = es.eigenvalues();
      const Eigen::MatrixXd q = es.eigenvectors();

      const double remaining = total - done;
      if (h_next == 0.0) tau = remaining;  // invariant subspace: exact for any step
      tau = std::min({tau, remaining, options_.step_cap});

      for (;;) {
        // Small exponential and the phi_1 error estimate from the eigenpairs of T_m.
        Eigen::VectorXcd small = Eigen::VectorXcd::Zero(m);
        cplx phi_last = 0.0;
        for (int k = 0; k < m; ++k) {
          const cplx z = -imag_unit * (sign * tau * theta(k));
          const cplx e = std::exp(z);
          const cplx phi1 = std::abs(z) < 1e-8 ? 1.0 + 0.5 * z : (e - 1.0) / z;
          small += q.col(k).cast<cplx>() * (q(0, k) * e);
          phi_last += q(m - 1, k) * q(0, k) * phi1;
        }
        const double err = beta * h_next * tau * std::abs(phi_last);
        const double allowed = options_.tolerance * tau;
        if (err <= allowed || h_next == 0.0) {
          w = beta * (basis.leftCols(m) * small);
          done += tau;
          worst = std::max(worst, err);
          if (remaining - tau <= 0.0) done = total;
          const double grow = err > 0.0 ? 0.9 * std::pow(allowed / err, 1.0 / m) : 2.0;
          tau = tau * std::clamp(grow, 0.5, 2.0);
          break;
        }
        tau *= std::clamp(0.9 * std::pow(allowed / err, 1.0 / m), 0.1, 0.5);
        if (tau < 1e-14 * total)
          throw ConvergenceError("krylov step size underflow", err);
      }
      if (++steps > options_.max_steps) throw ConvergenceError("krylov step cap reached", worst);
    }
    return w;
  }

  Vector evolve_chebyshev(const Vector& v, double t) const {
    const double center = 0.5 * (interval_.first + interval_.second);
    const double radius = 0.5 * (interval_.second - interval_.first);
    if (radius <= 0.0) return v * std::exp(-imag_unit * (center * t));
    const double cap = std::isfinite(options_.step_cap) ? options_.step_cap : std::abs(t);
    const auto pieces = static_cast<std::size_t>(std::ceil(std::abs(t) / cap));
    const double dt = t / static_cast<double>(std::max<std::size_t>(1, pieces));
    Vector w = v;
    for (std::size_t p = 0; p < std::max<std::size_t>(1, pieces); ++p) w = chebyshev_step(w, dt, center, radius);
    return w;
  }

  Vector chebyshev_step(const Vector& v, double t, double center, double radius) const {
    const double x = radius * t;
    const double ax = std::abs(x);
    const int kmax = static_cast<int>(ax) + 400;
    const auto jseq = bessel_j_sequence(ax, kmax);
    auto bessel = [&](int k) {
      const double j = jseq[static_cast<std::size_t>(k)];
      return (x < 0 && (k % 2)) ? -j : j;
    };
    const SparseOperator& h = *h_;
    auto apply_scaled = [&](const Vector& u) -> Vector { return (h * u - center * u) / radius; };
    Vector t_prev = v;
    Vector t_cur = apply_scaled(v);
    Vector acc = bessel(0) * v + 2.0 * (-imag_unit) * bessel(1) * t_cur;
    const double cutoff = options_.tolerance * 1e-3;
    int small_run = 0;
    cplx phase = -imag_unit;
    for (int k = 2; k <= kmax; ++k) {
      Vector t_next = 2.0 * apply_scaled(t_cur) - t_prev;
      phase *= -imag_unit;
      const double jk = bessel(k);
      acc += 2.0 * phase * jk * t_next;
      t_prev = std::move(t_cur);
      t_cur = std::move(t_next);
      if (k > ax && std::abs(jk) < cutoff) {
        if (++small_run >= 2) return std::exp(-imag_unit * (center * t)) * acc;
      } else {
        small_run = 0;
      }
    }
    throw ConvergenceError("chebyshev series did not converge", std::abs(bessel(kmax)));
  }

  std::shared_ptr<const SparseOperator> h_;
  PropagatorOptions options_;
  std::pair<double, double> interval_{0.0, 0.0};
  Eigen::VectorXd eigvals_;
  DenseMatrix eigvecs_;
};

/// Exact phases e^{-i E_u t} on each basis component.
inline Vector evolve_free_diagonal(const FockBasis& basis, const Vector& state, double t) {
  if (static_cast<std::size_t>(state.size()) != basis.size())
    throw ValidationError("state", "dimension does not match basis");
  Vector out(state.size());
  for (Eigen::Index i = 0; i < state.size(); ++i)
    out(i) = state(i) * std::exp(-imag_unit * (basis.energy(static_cast<std::size_t>(i)) * t));
  return out;
}

/// Phases e^{-i E t} for a vector of energies.
inline Vector free_phases(const std::vector<double>& energies, double t) {
  Vector out(static_cast<Eigen::Index>(energies.size()));
  for (std::size_t i = 0; i < energies.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = std::exp(-imag_unit * (energies[i] * t));
  return out;
}

/// U = V e^{-i Lambda t} V^dagger from a full eigendecomposition.
inline DenseMatrix dense_oracle_exponential(const DenseMatrix& h, double t, std::size_t limit = 400) {
  if (static_cast<std::size_t>(h.rows()) > limit)
    throw ValidationError("oracle", "dimension " + std::to_string(h.rows()) + " exceeds oracle limit " +
                                        std::to_string(limit));
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(h);
  if (es.info() != Eigen::Success) throw Error("oracle eigensolve failed");
  const auto& vecs = es.eigenvectors();
  Vector ph(h.rows());
  for (Eigen::Index i = 0; i < h.rows(); ++i) ph(i) = std::exp(-imag_unit * (es.eigenvalues()(i) * t));
  DenseMatrix u = vecs * ph.asDiagonal() * vecs.adjoint();
  const double defect = max_abs(u.adjoint() * u - DenseMatrix::Identity(h.rows(), h.cols()));
  if (defect > 1e-10) throw Error("oracle exponential not unitary (defect " + std::to_string(defect) + ")");
  return u;
}

}  // namespace fockscat
