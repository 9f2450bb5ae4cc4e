#pragma once

// Independent reference computations and shared model instances for the
// unit tests and the acceptance binary.

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "fockscat/fockscat.hpp"

namespace fockscat::testing {

/// V from explicit products of ladder matrices, summed over every orbital
/// assignment of every vertex, then compressed to the first n states.
inline DenseMatrix brute_force_interaction(const InteractionSpec& spec, const FockBasis& basis, std::size_t n) {
  const auto dim = static_cast<Eigen::Index>(basis.size());
  const auto norb = basis.orbitals().size();
  std::vector<SparseOperator> raise(norb), lower(norb);
  for (std::size_t o = 0; o < norb; ++o) {
    raise[o] = ladder_matrix(basis, o, LadderKind::raise);
    lower[o] = ladder_matrix(basis, o, LadderKind::lower);
  }
  DenseMatrix v = DenseMatrix::Zero(dim, dim);
  for (const Vertex* vx : spec.all_vertices()) {
    const double g = spec.coupling_value(vx->coupling);
    const std::size_t m = vx->legs.size();
    std::vector<std::size_t> pick(m, 0);
    std::vector<std::size_t> assign(m);
    // Odometer over candidate orbitals per leg.
    std::vector<std::vector<std::size_t>> cand(m);
    for (std::size_t i = 0; i < m; ++i) {
      auto span = basis.orbitals_of(vx->legs[i].particle);
      cand[i].assign(span.begin(), span.end());
    }
    for (;;) {
      for (std::size_t i = 0; i < m; ++i) assign[i] = cand[i][pick[i]];
      bool conserved = true;
      if (vx->momentum_conserving) {
        const auto d = static_cast<std::size_t>(basis.grid().dimension());
        for (std::size_t c = 0; c < d && conserved; ++c) {
          long bal = 0;
          for (std::size_t i = 0; i < m; ++i) {
            const long k = basis.grid().points()[basis.orbitals()[assign[i]].point][c];
            bal += vx->legs[i].kind == LadderKind::raise ? k : -k;
          }
          conserved = bal == 0;
        }
      }
      if (conserved) {
        const cplx k = vx->kernel(basis, assign);
        if (k != cplx{}) {
          SparseOperator prod(dim, dim);
          prod.setIdentity();
          for (std::size_t i = 0; i < m; ++i) {
            const auto& op = vx->legs[i].kind == LadderKind::raise ? raise[assign[i]] : lower[assign[i]];
            prod = SparseOperator(prod * op);
          }
          v += (g * k) * DenseMatrix(prod);
        }
      }
      std::size_t i = 0;
      while (i < m && ++pick[i] == cand[i].size()) pick[i++] = 0;
      if (i == m) break;
    }
  }
  const auto nn = static_cast<Eigen::Index>(n);
  DenseMatrix out = DenseMatrix::Zero(dim, dim);
  out.topLeftCorner(nn, nn) = v.topLeftCorner(nn, nn);
  return out;
}

/// Closed form of eps * int_0^inf e^{-eps s} Omega(-sigma s) P_ac ds from the
/// eigendecomposition of H: column u picks up eps / (eps + i sigma (lambda - E_u)).
inline DenseMatrix adiabatic_closed_form(const DenseMatrix& h, const std::vector<double>& e, double sigma,
                                         double eps) {
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(h);
  const auto& u = es.eigenvectors();
  const auto& lam = es.eigenvalues();
  const auto dim = h.rows();
  DenseMatrix ov = u.adjoint();
  ov.col(0).setZero();
  for (Eigen::Index a = 0; a < dim; ++a)
    for (Eigen::Index c = 0; c < dim; ++c)
      ov(a, c) *= eps / (eps + imag_unit * sigma * (lam(a) - e[static_cast<std::size_t>(c)]));
  return u * ov;
}

inline DenseMatrix random_hermitian(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, 1.0);
  DenseMatrix a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = cplx(nd(rng), nd(rng));
  return scale * 0.5 * (a + a.adjoint());
}

inline Vector random_unit(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = cplx(nd(rng), nd(rng));
  return v / v.norm();
}

struct Instance {
  ParticleSystem system;
  std::shared_ptr<const FockBasis> basis;
  InteractionSpec spec;

  RegularizedHamiltonian assemble(std::size_t rank) const { return assemble_regularized(spec, basis, rank); }
  RegularizedHamiltonian assemble() const { return assemble(basis->size()); }
};

/// Self-conjugate scalar, m = 1, modes k in {-1, 0, 1}, at most 4 quanta and
/// free energy <= 5.3: a 30-state basis with a phi^4 coupling "lambda".
inline Instance phi4_instance(double lambda) {
  Instance in;
  const std::vector<ParticleEntry> table{{"phi", Statistics::boson, 1.0, "phi"}};
  in.system = build_particle_system(table);
  ModeGrid grid(in.system, GridSpec{1, 1.0, 1.0, {}});
  in.basis = std::make_shared<const FockBasis>(enumerate_basis(in.system, grid, BasisOptions{4, 5.3, 200000}));
  in.spec.vertices = phi_power_vertices(in.system, "phi", 4, "lambda");
  in.spec.couplings["lambda"] = lambda;
  return in;
}

/// phi^3 plus a quadratic mass counterterm on the same grid, 3 quanta.
inline Instance phi3_instance(double g, double dm2) {
  Instance in;
  const std::vector<ParticleEntry> table{{"phi", Statistics::boson, 1.0, "phi"}};
  in.system = build_particle_system(table);
  ModeGrid grid(in.system, GridSpec{1, 1.0, 1.0, {}});
  in.basis = std::make_shared<const FockBasis>(enumerate_basis(in.system, grid, BasisOptions{3, std::nullopt, 200000}));
  in.spec.vertices = phi_power_vertices(in.system, "phi", 3, "g");
  in.spec.counterterms = mass_counterterm_vertices(in.system, "phi", "dm2");
  in.spec.couplings = {{"g", g}, {"dm2", dm2}};
  return in;
}

/// Fermion b (m = 0.5) with antiparticle bbar and a scalar phi (m = 1.5),
/// modes k in {-1, 0, 1}, at most 3 quanta and energy <= 4.5, with a
/// Yukawa-type b^dagger bbar^dagger phi + h.c. coupling "g".
inline Instance yukawa_instance(double g, int n_max = 3, double cap = 4.5) {
  Instance in;
  const std::vector<ParticleEntry> table{{"b", Statistics::fermion, 0.5, "bbar"},
                                         {"bbar", Statistics::fermion, 0.5, "b"},
                                         {"phi", Statistics::boson, 1.5, "phi"}};
  in.system = build_particle_system(table);
  ModeGrid grid(in.system, GridSpec{1, 1.0, 1.0, {}});
  in.basis = std::make_shared<const FockBasis>(enumerate_basis(in.system, grid, BasisOptions{n_max, cap, 200000}));
  in.spec.vertices = yukawa_vertices(in.system, "b", "phi", "g");
  in.spec.couplings["g"] = g;
  return in;
}

}  // namespace fockscat::testing
