#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace fockscat;
using namespace fockscat::testing;

namespace {

std::vector<std::size_t> ranks_1_to(std::size_t n) {
  std::vector<std::size_t> r;
  for (std::size_t i = 1; i <= n; ++i) r.push_back(i);
  return r;
}

ObservableFamily geometric(double c, double base) {
  return {"geom" + std::to_string(base), [c, base](std::size_t n, const RegulatorPoint&) -> cplx {
            return c + std::pow(base, -static_cast<double>(n));
          }};
}

ObservableFamily constant(double c) {
  return {"const", [c](std::size_t, const RegulatorPoint&) -> cplx { return c; }};
}

}  // namespace

TEST(InnerSweep, ConstantPlateausAtFirstRank) {
  auto p = inner_sweep(constant(2.5), {}, {3, 5, 8}, 1e-3);
  ASSERT_TRUE(p.has_plateau());
  EXPECT_EQ(*p.plateau_rank, 3u);
  EXPECT_EQ(p.tail_spread, 0.0);
  EXPECT_EQ(p.limit(), cplx(2.5));
}

TEST(InnerSweep, GeometricTailPlateau) {
  auto p = inner_sweep(geometric(1.0, 2.0), {}, ranks_1_to(20), 1e-3);
  ASSERT_TRUE(p.has_plateau());
  EXPECT_EQ(*p.plateau_rank, 10u);
  EXPECT_LT(p.tail_spread, 1e-3);
}

TEST(InnerSweep, NoPlateauWhenTailStillMoving) {
  ObservableFamily lin{"lin", [](std::size_t n, const RegulatorPoint&) -> cplx { return static_cast<double>(n); }};
  auto p = inner_sweep(lin, {}, ranks_1_to(6), 1e-3);
  EXPECT_FALSE(p.has_plateau());
}

TEST(InnerSweep, EvaluationFailureGivesPartialReport) {
  ObservableFamily bad{"bad", [](std::size_t n, const RegulatorPoint&) -> cplx {
                         if (n == 2) throw Error("boom");
                         return 1.0;
                       }};
  auto p = inner_sweep(bad, {}, {1, 2, 3, 4}, 1e-3);
  ASSERT_EQ(p.failures.size(), 1u);
  EXPECT_NE(p.failures[0].find("rank 2"), std::string::npos);
  EXPECT_TRUE(std::isnan(p.values[1].real()));
  ASSERT_TRUE(p.has_plateau());
  EXPECT_EQ(*p.plateau_rank, 3u);
}

TEST(InnerSweep, PreconditionsEnforced) {
  EXPECT_THROW(inner_sweep(constant(1), {}, {1, 2}, 1e-3), ValidationError);
  EXPECT_THROW(inner_sweep(constant(1), {}, {1, 3, 2}, 1e-3), ValidationError);
  EXPECT_THROW(inner_sweep(constant(1), {}, {1, 2, 3}, 0.0), ValidationError);
}

TEST(DoubleLimit, TwoConstantsGiveSmallestRank) {
  auto rep = double_limit_study({constant(1), constant(2)}, {{1.0, 1.0}, {2.0, 1.0}}, {4, 6, 9}, 1e-3);
  ASSERT_TRUE(rep.h_star.has_value());
  EXPECT_EQ(*rep.h_star, 4u);
  EXPECT_TRUE(rep.certified);
}

TEST(DoubleLimit, SlowerFamilySetsHStar) {
  auto rep = double_limit_study({geometric(1.0, 2.0), geometric(-3.0, 3.0)}, {{1.0, 1.0}, {2.0, 1.0}},
                                ranks_1_to(20), 1e-3);
  ASSERT_TRUE(rep.h_star.has_value());
  EXPECT_EQ(*rep.h_star, 10u);
  EXPECT_EQ(*rep.families[1].per_regulator.back().plateau_rank, 7u);
  EXPECT_TRUE(rep.certified);
  for (const auto& f : rep.families) {
    EXPECT_TRUE(f.dominance);
    EXPECT_LE(*f.per_regulator.back().plateau_rank, *rep.h_star);
    EXPECT_LT(f.uncertainty, 1e-3);
  }
  EXPECT_FALSE(rep.scope_note.empty());
}

TEST(DoubleLimit, NonPlateauFamilyIsQuarantined) {
  ObservableFamily lin{"lin", [](std::size_t n, const RegulatorPoint&) -> cplx { return static_cast<double>(n); }};
  auto rep = double_limit_study({constant(1), lin}, {{1.0, 1.0}}, {1, 2, 3}, 1e-3);
  EXPECT_FALSE(rep.certified);
  ASSERT_EQ(rep.quarantined.size(), 1u);
  EXPECT_EQ(rep.quarantined[0], "lin");
  EXPECT_TRUE(std::isnan(rep.families[1].outer_estimate.real()));
}

TEST(DoubleLimit, OuterExtrapolationAndSwappedOrder) {
  // g_n(r) = 5 + 2 h + 2^{-n}: exact outer limit 5 after the inner plateau.
  ObservableFamily f{"sep", [](std::size_t n, const RegulatorPoint& r) -> cplx {
                       return 5.0 + 2.0 * r.h() + std::pow(2.0, -static_cast<double>(n));
                     }};
  StudyOptions opt;
  opt.swapped_order = true;
  auto rep = double_limit_study({f}, {{1.0, 1.0}, {2.0, 1.0}}, ranks_1_to(24), 1e-6, opt);
  const auto& fo = rep.families[0];
  EXPECT_EQ(fo.extrapolation_order, 1);
  EXPECT_NEAR(fo.outer_estimate.real(), 5.0, 1e-6);
  ASSERT_TRUE(fo.swapped_estimate.has_value());
  ASSERT_TRUE(fo.order_discrepancy.has_value());
  EXPECT_LT(*fo.order_discrepancy, 1e-6);
}

TEST(DoubleLimit, ReportIsDeterministic) {
  auto in = phi4_instance(0.05);
  ObservableFamily ground{"ground", [&](std::size_t n, const RegulatorPoint&) -> cplx {
                            auto h = in.assemble(n);
                            Eigen::SelfAdjointEigenSolver<DenseMatrix> es(to_dense(h.full()), Eigen::EigenvaluesOnly);
                            return es.eigenvalues()(0);
                          }};
  auto a = double_limit_study({ground}, {{1.0, 1.0}}, {10, 20, 30}, 1e-3, StudyOptions{2, false});
  auto b = double_limit_study({ground}, {{1.0, 1.0}}, {10, 20, 30}, 1e-3, StudyOptions{1, false});
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_EQ(a.families[0].per_regulator[0].values[i], b.families[0].per_regulator[0].values[i]);
  EXPECT_EQ(a.h_star, b.h_star);
}

TEST(Richardson, ExactOnPolynomials) {
  int order = -1;
  EXPECT_NEAR(richardson_extrapolate({0.5, 0.25}, {cplx(3.5), cplx(3.25)}, &order).real(), 3.0, 1e-15);
  EXPECT_EQ(order, 1);
  const std::vector<double> h{1.0, 0.5, 0.25, 0.125};
  std::vector<cplx> g;
  for (double x : h) g.push_back(2.0 - x + 4.0 * x * x);
  EXPECT_NEAR(richardson_extrapolate(h, g, &order).real(), 2.0, 1e-13);
  EXPECT_EQ(order, 2);
  EXPECT_EQ(richardson_extrapolate({1.0}, {cplx(7.0)}, &order), cplx(7.0));
  EXPECT_EQ(order, 0);
}

TEST(Horizon, FreeDynamicsAtFirstGridPoint) {
  auto h = phi4_instance(0.0).assemble();
  Propagator prop(h.full());
  std::vector<Vector> states;
  for (Eigen::Index c : {1, 5, 12}) {
    Vector v = Vector::Zero(static_cast<Eigen::Index>(h.dimension()));
    v(c) = 1.0;
    states.push_back(v);
  }
  auto rec = horizon_study(h, prop, states, {1, 2, 3, 4}, 1e-8);
  ASSERT_TRUE(rec.found);
  EXPECT_EQ(*rec.global_t, 1.0);
  for (const auto& s : rec.states) EXPECT_EQ(*s.t_u, 1.0);
}

TEST(Horizon, GlobalIsMaxAndMonotoneInTolerance) {
  auto h = phi4_instance(2e-4).assemble();
  Propagator prop(h.full());
  std::mt19937_64 rng(8);
  std::vector<Vector> states;
  for (int i = 0; i < 3; ++i) {
    Vector v = random_unit(static_cast<Eigen::Index>(h.dimension()), rng);
    v(0) = 0.0;
    states.push_back(v / v.norm());
  }
  std::vector<double> grid;
  for (double t = 0.25; t <= 8.0; t *= 1.25) grid.push_back(t);
  std::optional<double> prev;
  for (double tol : {1e-6, 1e-5, 1e-4, 1e-3}) {
    auto rec = horizon_study(h, prop, states, grid, tol);
    if (!rec.found) {
      EXPECT_FALSE(prev.has_value()) << "found at a tighter tolerance but not at " << tol;
      continue;
    }
    for (const auto& s : rec.states) EXPECT_GE(*rec.global_t, *s.t_u);
    if (prev) EXPECT_LE(*rec.global_t, *prev) << tol;
    prev = rec.global_t;
  }
  EXPECT_TRUE(prev.has_value());
}

TEST(Horizon, RejectsUnnormalizedStates) {
  auto h = phi4_instance(0.1).assemble();
  Propagator prop(h.full());
  Vector v = Vector::Zero(static_cast<Eigen::Index>(h.dimension()));
  v(1) = 2.0;
  EXPECT_THROW(horizon_study(h, prop, {v}, {1, 2}, 1e-4), ValidationError);
  v(1) = 1.0;
  EXPECT_THROW(horizon_study(h, prop, {v}, {1}, 1e-4), ValidationError);
  EXPECT_THROW(horizon_study(h, prop, {v}, {1, 2}, 1e-4, 1), ValidationError);
}
