#include <gtest/gtest.h>

#include <numbers>

#include "fockscat/quadrature.hpp"
#include "oracles.hpp"

using namespace fockscat;
using namespace fockscat::testing;

namespace {

const PropagationMethod kMethods[] = {PropagationMethod::krylov, PropagationMethod::chebyshev,
                                      PropagationMethod::dense};

SparseOperator pauli_x() {
  DenseMatrix x(2, 2);
  x << 0, 1, 1, 0;
  return to_sparse(x);
}

}  // namespace

TEST(Propagator, PauliXQuarterPeriod) {
  for (auto m : kMethods) {
    Propagator p(pauli_x(), PropagatorOptions{m});
    Vector up(2);
    up << 1, 0;
    Vector out = p.evolve(up, std::numbers::pi / 2);
    EXPECT_NEAR(std::abs(out(0)), 0.0, 1e-12) << to_string(m);
    EXPECT_NEAR(out(1).real(), 0.0, 1e-12) << to_string(m);
    EXPECT_NEAR(out(1).imag(), -1.0, 1e-12) << to_string(m);
  }
}

TEST(Propagator, MatchesDenseOracleOnPhi4) {
  auto h = phi4_instance(0.8).assemble();
  std::mt19937_64 rng(7);
  const DenseMatrix hd = to_dense(h.full());
  for (double t : {0.3, 4.0, -17.5}) {
    const DenseMatrix u = dense_oracle_exponential(hd, t);
    for (auto m : kMethods) {
      Propagator p(h.full(), PropagatorOptions{m});
      Vector v = random_unit(hd.rows(), rng);
      EXPECT_LE((p.evolve(v, t) - u * v).norm(), 1e-12 * std::max(1.0, std::abs(t)) * 10) << to_string(m) << " t=" << t;
    }
  }
}

TEST(Propagator, RandomHermitianAgainstOracle) {
  std::mt19937_64 rng(11);
  const DenseMatrix hd = random_hermitian(40, rng, 3.0);
  const Vector v = random_unit(40, rng);
  const DenseMatrix u = dense_oracle_exponential(hd, 2.5);
  for (auto m : kMethods) {
    Propagator p(to_sparse(hd), PropagatorOptions{m});
    EXPECT_LE((p.evolve(v, 2.5) - u * v).norm(), 1e-10) << to_string(m);
  }
}

TEST(Propagator, GroupLawNormAndEnergy) {
  auto h = yukawa_instance(0.6).assemble();
  std::mt19937_64 rng(3);
  const Vector v = random_unit(static_cast<Eigen::Index>(h.dimension()), rng);
  const double e0 = (v.adjoint() * (h.full() * v))(0).real();
  for (auto m : kMethods) {
    Propagator p(h.full(), PropagatorOptions{m});
    const Vector a = p.evolve(p.evolve(v, 1.7), 2.9);
    const Vector b = p.evolve(v, 4.6);
    EXPECT_LE((a - b).norm(), 1e-10) << to_string(m);
    EXPECT_NEAR(b.norm(), 1.0, 1e-11) << to_string(m);
    const double e1 = (b.adjoint() * (h.full() * b))(0).real();
    EXPECT_NEAR(e1, e0, 1e-10 * std::max(1.0, std::abs(e0))) << to_string(m);
    // Backward evolution undoes forward evolution.
    EXPECT_LE((p.evolve(b, -4.6) - v).norm(), 1e-10) << to_string(m);
  }
}

TEST(Propagator, StepCapDoesNotChangeResult) {
  auto h = phi4_instance(0.5).assemble();
  std::mt19937_64 rng(5);
  const Vector v = random_unit(static_cast<Eigen::Index>(h.dimension()), rng);
  PropagatorOptions capped{PropagationMethod::krylov};
  capped.step_cap = 0.1;
  Propagator a(h.full(), capped), b(h.full());
  EXPECT_LE((a.evolve(v, 3.0) - b.evolve(v, 3.0)).norm(), 1e-10);
}

TEST(Propagator, StepBudgetExhaustionRaises) {
  auto h = phi4_instance(0.5).assemble();
  PropagatorOptions o{PropagationMethod::krylov};
  o.step_cap = 0.01;
  o.max_steps = 5;
  Propagator p(h.full(), o);
  Vector v = Vector::Zero(static_cast<Eigen::Index>(h.dimension()));
  v(3) = 1.0;
  EXPECT_THROW(p.evolve(v, 10.0), ConvergenceError);
}

TEST(Propagator, InvalidInputsRejected) {
  EXPECT_THROW(Propagator(pauli_x(), PropagatorOptions{PropagationMethod::krylov, -1.0}), ValidationError);
  Propagator p(pauli_x());
  EXPECT_THROW(p.evolve(Vector::Zero(3), 1.0), ValidationError);
  EXPECT_THROW(p.evolve(Vector::Zero(2), std::numeric_limits<double>::infinity()), ValidationError);
  EXPECT_THROW(parse_propagation_method("euler"), ValidationError);
  PropagatorOptions dense{PropagationMethod::dense};
  dense.dense_limit = 1;
  EXPECT_THROW(Propagator(pauli_x(), dense), ValidationError);
}

TEST(Bessel, SequenceMatchesStandardLibrary) {
  for (double x : {0.1, 1.0, 7.5, 30.0, 120.0}) {
    const auto j = bessel_j_sequence(x, 60);
    for (int k = 0; k <= 60; ++k)
      EXPECT_NEAR(j[static_cast<std::size_t>(k)], std::cyl_bessel_j(static_cast<double>(k), x), 1e-13) << x << " " << k;
  }
  // Far above the argument the terms stay finite and tiny.
  const auto far = bessel_j_sequence(250.0, 700);
  EXPECT_TRUE(std::isfinite(far[700]));
  EXPECT_LT(std::abs(far[700]), 1e-100);
  EXPECT_EQ(bessel_j_sequence(0.0, 3), (std::vector<double>{1.0, 0.0, 0.0, 0.0}));
}

TEST(Propagator, LongChebyshevStepMatchesOracle) {
  std::mt19937_64 rng(20240101);
  const DenseMatrix hd = random_hermitian(180, rng, 3.0);
  const Vector v = random_unit(180, rng);
  Propagator p(to_sparse(hd), PropagatorOptions{PropagationMethod::chebyshev});
  EXPECT_LE((p.evolve(v, 9.7) - dense_oracle_exponential(hd, 9.7) * v).norm(), 1e-10);
}

TEST(Propagator, GershgorinEnclosesSpectrum) {
  auto h = phi3_instance(0.7, 0.1).assemble();
  auto [lo, hi] = spectral_interval(h.full());
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(to_dense(h.full()));
  EXPECT_LE(lo, es.eigenvalues().minCoeff());
  EXPECT_GE(hi, es.eigenvalues().maxCoeff());
}

TEST(FreeEvolution, DiagonalPhasesMatchPropagator) {
  auto in = phi4_instance(0.0);
  auto h = in.assemble();
  std::mt19937_64 rng(1);
  const Vector v = random_unit(static_cast<Eigen::Index>(h.dimension()), rng);
  Propagator p(h.full());
  EXPECT_LE((evolve_free_diagonal(*in.basis, v, 12.0) - p.evolve(v, 12.0)).norm(), 1e-11);
  // Occupation probabilities are conserved exactly.
  const Vector w = evolve_free_diagonal(*in.basis, v, 12.0);
  EXPECT_LE((w.cwiseAbs() - v.cwiseAbs()).norm(), 1e-15);
}

TEST(Quadrature, GaussLegendreExactForPolynomials) {
  for (std::size_t n : {1u, 2u, 5u, 16u, 33u}) {
    auto q = gauss_legendre(n);
    double wsum = 0.0;
    for (double w : q.weights) wsum += w;
    EXPECT_NEAR(wsum, 2.0, 1e-14);
    // Exact for degree 2n-1.
    const int deg = static_cast<int>(2 * n - 1);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += q.weights[i] * std::pow(q.nodes[i], deg - 1);
    const double exact = ((deg - 1) % 2 == 0) ? 2.0 / deg : 0.0;
    EXPECT_NEAR(s, exact, 1e-13) << n;
  }
  EXPECT_THROW(gauss_legendre(0), ValidationError);
}

TEST(Quadrature, CompositeRuleIntegratesOscillation) {
  auto q = composite_gauss_legendre(0.0, 20.0, 10, 16);
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) s += q.weights[i] * std::cos(3.0 * q.nodes[i]);
  EXPECT_NEAR(s, std::sin(60.0) / 3.0, 1e-13);
}
