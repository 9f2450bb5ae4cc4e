#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace fockscat;
using namespace fockscat::testing;

namespace {

std::vector<double> grid(double start, double stop, double step) {
  std::vector<double> g;
  for (double t = start; t <= stop + 1e-12; t += step) g.push_back(t);
  return g;
}

DenseMatrix with_vacuum(DenseMatrix w) {
  w.col(0).setZero();
  w(0, 0) = 1.0;
  return w;
}

}  // namespace

TEST(TimePlateau, FreeDynamicsGivesIdentity) {
  auto h = phi4_instance(0.0).assemble();
  for (auto dir : {Direction::plus, Direction::minus}) {
    auto w = wave_operator_time_plateau(h, dir, grid(1, 10, 1), 3, 1e-8);
    EXPECT_TRUE(w.converged);
    EXPECT_DOUBLE_EQ(w.plateau_time, 3.0);
    const auto d = static_cast<Eigen::Index>(h.dimension());
    EXPECT_LE(max_abs(DenseMatrix(w.w - DenseMatrix::Identity(d, d))), 1e-12);
    EXPECT_LE(w.isometry_defect, 1e-12);
    EXPECT_LE(w.intertwining_defect, 1e-11);
  }
}

TEST(TimePlateau, ColumnsAreIsometricAndMatchOracle) {
  auto h = phi4_instance(0.3).assemble();
  auto w = wave_operator_time_plateau(h, Direction::plus, grid(1, 6, 1), 2, 1e-14);
  EXPECT_FALSE(w.converged);
  EXPECT_LE(w.isometry_defect, 1e-11);
  // Omega(t) = e^{iHt} e^{-iA0 t} P_ac with t = -T for the plus direction.
  const double t = -w.plateau_time;
  const DenseMatrix hd = to_dense(h.full());
  const DenseMatrix oracle = dense_oracle_exponential(hd, -t) *
                             dense_oracle_exponential(to_dense(h.a0()), t) * to_dense(ac_projection(h.basis()));
  EXPECT_LE(max_abs(DenseMatrix(w.w - with_vacuum(oracle))), 1e-10);
}

TEST(TimePlateau, IntertwiningDefectIsTimeIndependent) {
  // (H Omega(t) - Omega(t) A0) e_c = e^{-iE_c t} e^{iHt} V e_c, so its norm
  // equals ||V e_c|| at every t.
  auto h = phi4_instance(0.2).assemble();
  Propagator prop(h.full());
  const DenseMatrix hd = to_dense(h.full());
  const DenseMatrix v = hd - to_dense(h.a0());
  const auto& e = h.basis().energies();
  for (double t : {-4.0, -8.0}) {
    for (Eigen::Index c = 1; c < hd.cols(); ++c) {
      Vector ec = Vector::Zero(hd.cols());
      ec(c) = 1.0;
      const Vector w = omega_apply(prop, e, t, ec);
      const double defect = (hd * w - e[static_cast<std::size_t>(c)] * w).norm();
      EXPECT_NEAR(defect, v.col(c).norm(), 1e-11) << "t=" << t << " c=" << c;
    }
  }
}

TEST(TimePlateau, DriftDependsOnlyOnStepLength) {
  auto h = phi4_instance(4.0).assemble();
  auto w = wave_operator_time_plateau(h, Direction::plus, grid(0.25, 30, 0.25), 2, 1e-6);
  EXPECT_FALSE(w.converged);
  EXPECT_FALSE(w.recurrence_detected);
  for (std::size_t k = 2; k < w.drift_history.size(); ++k)
    EXPECT_NEAR(w.drift_history[k], w.drift_history[1], 1e-12 * w.drift_history[1]);
}

TEST(TimePlateau, RecurrenceFlaggedWhenDriftRegrows) {
  auto h = phi4_instance(4.0).assemble();
  auto w = wave_operator_time_plateau(h, Direction::plus, {1.0, 3.0, 4.0, 4.5, 5.0, 7.0, 10.0}, 2, 1e-6);
  EXPECT_FALSE(w.converged);
  EXPECT_TRUE(w.recurrence_detected);
  EXPECT_DOUBLE_EQ(w.recurrence_time, 7.0);
  // Steps 4 -> 4.5 and 4.5 -> 5 have the same length, hence the same drift.
  EXPECT_NEAR(w.final_drift, w.drift_history[3], 1e-12);
  EXPECT_TRUE(w.plateau_time == 4.5 || w.plateau_time == 5.0);
}

TEST(TimePlateau, InvalidInputsRejected) {
  auto h = phi4_instance(0.1).assemble();
  EXPECT_THROW(wave_operator_time_plateau(h, Direction::plus, {}, 2, 1e-5), ValidationError);
  EXPECT_THROW(wave_operator_time_plateau(h, Direction::plus, {2.0, 1.0}, 2, 1e-5), ValidationError);
  EXPECT_THROW(wave_operator_time_plateau(h, Direction::plus, {1.0, 2.0}, 1, 1e-5), ValidationError);
  EXPECT_THROW(wave_operator_time_plateau(h, Direction::plus, {1.0, 2.0}, 2, -1.0), ValidationError);
  Propagator p(h.full());
  EXPECT_THROW(wave_operator_time_plateau(h, p, Direction::plus, {1.0, 2.0}, PlateauOptions{2, 1e-5, 1, 5}),
               ValidationError);
}

TEST(Adiabatic, SingleDampingMatchesClosedForm) {
  auto h = phi4_instance(0.5).assemble();
  const DenseMatrix hd = to_dense(h.full());
  for (auto dir : {Direction::plus, Direction::minus}) {
    auto w = wave_operator_adiabatic(h, dir, {0.5});
    const DenseMatrix oracle = adiabatic_closed_form(hd, h.basis().energies(), direction_sign(dir), 0.5);
    EXPECT_LE(max_abs(DenseMatrix(w.w - with_vacuum(oracle))), 1e-9) << to_string(dir);
    EXPECT_LE(w.quadrature_error, 1e-9);
  }
}

TEST(Adiabatic, RichardsonOfClosedForms) {
  auto h = phi4_instance(0.5).assemble();
  const DenseMatrix hd = to_dense(h.full());
  const auto& e = h.basis().energies();
  auto w = wave_operator_adiabatic(h, Direction::plus, {0.8, 0.4, 0.2});
  const DenseMatrix a = adiabatic_closed_form(hd, e, 1.0, 0.8);
  const DenseMatrix b = adiabatic_closed_form(hd, e, 1.0, 0.4);
  const DenseMatrix c = adiabatic_closed_form(hd, e, 1.0, 0.2);
  const DenseMatrix r2 = (0.4 * c - 0.2 * b) / 0.2;
  const DenseMatrix r1 = (0.8 * b - 0.4 * a) / 0.4;
  EXPECT_LE(max_abs(DenseMatrix(w.w - with_vacuum(r2))), 1e-9);
  EXPECT_NEAR(w.extrapolation_disagreement, max_abs(DenseMatrix(with_vacuum(r2) - with_vacuum(r1))), 1e-9);
  EXPECT_EQ(w.converged, w.quadrature_error <= w.tolerance && w.extrapolation_disagreement <= w.tolerance);
}

TEST(Adiabatic, AgreesWithTimePlateauAtWeakCoupling) {
  auto h = phi4_instance(2e-5).assemble();
  auto tp = wave_operator_time_plateau(h, Direction::plus, grid(1, 20, 1), 2, 1e-5);
  auto ad = wave_operator_adiabatic(h, Direction::plus, {0.8, 0.4, 0.2});
  EXPECT_TRUE(tp.converged);
  EXPECT_TRUE(ad.converged);
  EXPECT_LE(max_abs(DenseMatrix(tp.w - ad.w)), 1e-4);
}

TEST(Adiabatic, InvalidInputsRejected) {
  auto h = phi4_instance(0.1).assemble();
  EXPECT_THROW(wave_operator_adiabatic(h, Direction::plus, {}), ValidationError);
  EXPECT_THROW(wave_operator_adiabatic(h, Direction::plus, {0.2, 0.4}), ValidationError);
  EXPECT_THROW(wave_operator_adiabatic(h, Direction::plus, {-0.2}), ValidationError);
}

TEST(RangeProjection, IdempotentHermitianWithRank) {
  std::mt19937_64 rng(2);
  DenseMatrix w = DenseMatrix::Zero(12, 12);
  for (int c = 0; c < 7; ++c) w.col(c) = random_unit(12, rng);
  auto rp = range_projection(w);
  EXPECT_EQ(rp.rank, 7u);
  EXPECT_TRUE(rp.rank_deficient);
  const DenseMatrix p = to_dense(rp.projector);
  EXPECT_LE(max_abs(DenseMatrix(p * p - p)), 1e-12);
  EXPECT_LE(max_abs(DenseMatrix(p - p.adjoint())), 1e-15);
  EXPECT_LE(max_abs(DenseMatrix(p * w - w)), 1e-12);
  for (double a : principal_angles(rp, rp)) EXPECT_LE(a, 1e-6);
}

TEST(RangeProjection, PrincipalAnglesOfOrthogonalSpans) {
  DenseMatrix a = DenseMatrix::Zero(4, 1), b = DenseMatrix::Zero(4, 1);
  a(0, 0) = 1.0;
  b(1, 0) = 1.0;
  auto angles = principal_angles(range_projection(a), range_projection(b));
  ASSERT_EQ(angles.size(), 1u);
  EXPECT_NEAR(angles[0], std::numbers::pi / 2, 1e-12);
}

TEST(ScatteringOperator, FreeDynamicsIsIdentity) {
  auto h = yukawa_instance(0.0).assemble();
  auto wp = wave_operator_time_plateau(h, Direction::plus, grid(1, 5, 1), 2, 1e-8);
  auto wm = wave_operator_time_plateau(h, Direction::minus, grid(1, 5, 1), 2, 1e-8);
  auto s = scattering_operator(wp, wm);
  const auto d = static_cast<Eigen::Index>(h.dimension());
  EXPECT_LE(max_abs(DenseMatrix(s.s_matrix - DenseMatrix::Identity(d, d))), 1e-12);
  EXPECT_LE(s.unitarity_defect, 1e-12);
  EXPECT_EQ(s.vacuum_persistence, cplx(1.0, 0.0));
  EXPECT_TRUE(s.warnings.empty());
  for (Eigen::Index c = 0; c < d; ++c) EXPECT_NEAR(s.channel_probabilities.col(c).sum(), 1.0, 1e-12);
}

TEST(ScatteringOperator, UnitaryAndVacuumForcedAtFiniteTime) {
  // The vacuum decouples from a pair-creation vertex, so S stays unitary on the AC block.
  auto h = yukawa_instance(0.4).assemble();
  auto wp = wave_operator_time_plateau(h, Direction::plus, grid(1, 3, 1), 2, 1e-14);
  auto wm = wave_operator_time_plateau(h, Direction::minus, grid(1, 3, 1), 2, 1e-14);
  auto s = scattering_operator(wp, wm);
  EXPECT_LE(s.unitarity_defect, 1e-11);
  EXPECT_EQ(s.s_matrix.row(0).norm(), 1.0);
  EXPECT_EQ(s.s_matrix.col(0).norm(), 1.0);
  EXPECT_GT(max_abs(DenseMatrix(s.s_matrix - DenseMatrix::Identity(s.s_matrix.rows(), s.s_matrix.cols()))), 1e-3);
}

TEST(ScatteringOperator, VacuumLeakageBreaksBlockUnitarity) {
  auto h = phi3_instance(0.4, 0.0).assemble();
  auto wp = wave_operator_time_plateau(h, Direction::plus, grid(1, 3, 1), 2, 1e-14);
  auto wm = wave_operator_time_plateau(h, Direction::minus, grid(1, 3, 1), 2, 1e-14);
  EXPECT_GT(scattering_operator(wp, wm).unitarity_defect, 1e-6);
}

TEST(ScatteringOperator, WarnsOnMismatchedInputs) {
  auto h = phi4_instance(0.0).assemble();
  auto wp = wave_operator_time_plateau(h, Direction::plus, grid(1, 3, 1), 2, 1e-8);
  auto wa = wave_operator_adiabatic(h, Direction::plus, {0.8, 0.4});
  auto s = scattering_operator(wp, wa);
  EXPECT_EQ(s.warnings.size(), 2u);
}
