#pragma once

// Plateau detection over interaction ranks, outer extrapolation over
// regulator points, and per-state scattering horizons.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fockscat/scattering.hpp"

namespace fockscat {

/// One regulator setting: momentum cutoff and grid spacing.
struct RegulatorPoint {
  double cutoff = 1.0;
  double spacing = 1.0;
  /// Extrapolation variable, zero in the continuum limit.
  double h() const { return spacing / cutoff; }
};

struct ObservableFamily {
  std::string name;
  std::function<cplx(std::size_t rank, const RegulatorPoint& r)> evaluate;
};

struct InnerPlateau {
  RegulatorPoint regulator;
  std::vector<std::size_t> ranks;
  /// NaN where evaluation failed.
  std::vector<cplx> values;
  std::vector<std::string> failures;
  std::optional<std::size_t> plateau_rank;
  /// Spread max |g_j - g_k| over the tail starting at the plateau rank.
  double tail_spread = std::numeric_limits<double>::quiet_NaN();

  bool has_plateau() const { return plateau_rank.has_value(); }
  /// Inner limit estimate: value at the last computed rank.
  cplx limit() const { return values.empty() ? cplx{} : values.back(); }
  std::optional<cplx> value_at(std::size_t rank) const {
    for (std::size_t i = 0; i < ranks.size(); ++i)
      if (ranks[i] == rank) return values[i];
    return std::nullopt;
  }
};

namespace detail {

inline bool finite(cplx z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); }

/// First index i < last whose tail {i, ..., last} has spread below eps.
inline void locate_plateau(InnerPlateau& p, double eps) {
  const std::size_t m = p.values.size();
  if (m < 2) return;
  // Walk the start backwards from the last, tracking the tail bounding values.
  std::optional<std::size_t> first;
  double spread_at_first = 0.0;
  for (std::size_t i = m - 1; i-- > 0;) {
    double spread = 0.0;
    bool ok = true;
    for (std::size_t j = i; j < m && ok; ++j)
      for (std::size_t k = j + 1; k < m; ++k) {
        if (!finite(p.values[j]) || !finite(p.values[k])) {
          ok = false;
          break;
        }
        spread = std::max(spread, std::abs(p.values[j] - p.values[k]));
      }
    if (!ok || !(spread < eps)) break;
    first = i;
    spread_at_first = spread;
  }
  if (first) {
    p.plateau_rank = p.ranks[*first];
    p.tail_spread = spread_at_first;
  }
}

}  // namespace detail

inline InnerPlateau inner_sweep(const ObservableFamily& fam, const RegulatorPoint& r,
                                const std::vector<std::size_t>& ranks, double eps, std::size_t workers = 1) {
  if (ranks.size() < 3) throw ValidationError("ranks", "need at least 3 ranks");
  for (std::size_t i = 1; i < ranks.size(); ++i)
    if (!(ranks[i] > ranks[i - 1])) throw ValidationError("ranks", "must be strictly increasing");
  if (!(eps > 0.0)) throw ValidationError("eps", "must be positive");
  InnerPlateau p;
  p.regulator = r;
  p.ranks = ranks;
  p.values.assign(ranks.size(), cplx{std::numeric_limits<double>::quiet_NaN(), 0.0});
  std::vector<std::string> errs(ranks.size());
  parallel_for(ranks.size(), workers, [&](std::size_t i) {
    try {
      p.values[i] = fam.evaluate(ranks[i], r);
    } catch (const std::exception& e) {
      errs[i] = "rank " + std::to_string(ranks[i]) + ": " + e.what();
    }
  });
  for (auto& e : errs)
    if (!e.empty()) p.failures.push_back(std::move(e));
  detail::locate_plateau(p, eps);
  return p;
}

/// Extrapolates values at h -> 0: linear through the last two points, or
/// quadratic through the last three when at least four points are given.
inline cplx richardson_extrapolate(const std::vector<double>& h, const std::vector<cplx>& g, int* order_used = nullptr) {
  const std::size_t m = g.size();
  if (m == 0) return std::numeric_limits<double>::quiet_NaN();
  if (m == 1 || h[m - 1] == h[m - 2]) {
    if (order_used) *order_used = 0;
    return g.back();
  }
  if (m >= 4 && h[m - 3] != h[m - 2] && h[m - 3] != h[m - 1]) {
    if (order_used) *order_used = 2;
    // Lagrange interpolation through the last three points, evaluated at 0.
    cplx out = 0.0;
    for (std::size_t a = m - 3; a < m; ++a) {
      double w = 1.0;
      for (std::size_t b = m - 3; b < m; ++b)
        if (b != a) w *= (0.0 - h[b]) / (h[a] - h[b]);
      out += w * g[a];
    }
    return out;
  }
  if (order_used) *order_used = 1;
  const double h1 = h[m - 2], h2 = h[m - 1];
  return (h1 * g[m - 1] - h2 * g[m - 2]) / (h1 - h2);
}

struct FamilyOutcome {
  std::string name;
  std::vector<InnerPlateau> per_regulator;
  bool plateau_everywhere = false;
  cplx outer_estimate = std::numeric_limits<double>::quiet_NaN();
  double uncertainty = std::numeric_limits<double>::quiet_NaN();
  int extrapolation_order = 0;
  /// |g_{h_star}(r_max) - g_n(r_max)| < eps for all computed n >= h_star.
  bool dominance = false;
  /// Swapped order (extrapolate in r at each rank, then plateau in n).
  std::optional<cplx> swapped_estimate;
  std::optional<double> order_discrepancy;
};

struct DoubleLimitReport {
  std::vector<RegulatorPoint> regulators;
  std::vector<std::size_t> ranks;
  double eps = 0.0;
  std::vector<FamilyOutcome> families;
  std::optional<std::size_t> h_star;
  bool certified = false;
  std::vector<std::string> quarantined;
  std::string scope_note =
      "h_star is computed over the declared observable families only; no closure over a larger class is claimed";
};

struct StudyOptions {
  std::size_t workers = 1;
  bool swapped_order = false;
};

inline DoubleLimitReport double_limit_study(const std::vector<ObservableFamily>& fams,
                                            const std::vector<RegulatorPoint>& r_grid,
                                            const std::vector<std::size_t>& rank_grid, double eps,
                                            StudyOptions opt = {}) {
  if (fams.empty()) throw ValidationError("families", "must be nonempty");
  if (r_grid.empty()) throw ValidationError("r_grid", "must be nonempty");
  DoubleLimitReport rep;
  rep.regulators = r_grid;
  rep.ranks = rank_grid;
  rep.eps = eps;

  // Every (family, regulator) sweep is independent; slots keep the order fixed.
  std::vector<InnerPlateau> sweeps(fams.size() * r_grid.size());
  parallel_for(sweeps.size(), opt.workers, [&](std::size_t i) {
    sweeps[i] = inner_sweep(fams[i / r_grid.size()], r_grid[i % r_grid.size()], rank_grid, eps, 1);
  });

  std::vector<double> hs;
  for (const auto& r : r_grid) hs.push_back(r.h());

  for (std::size_t f = 0; f < fams.size(); ++f) {
    FamilyOutcome out;
    out.name = fams[f].name;
    for (std::size_t r = 0; r < r_grid.size(); ++r) out.per_regulator.push_back(sweeps[f * r_grid.size() + r]);
    out.plateau_everywhere = std::all_of(out.per_regulator.begin(), out.per_regulator.end(),
                                         [](const InnerPlateau& p) { return p.has_plateau() && p.failures.empty(); });
    if (out.plateau_everywhere) {
      std::vector<cplx> g;
      for (const auto& p : out.per_regulator) g.push_back(p.limit());
      out.outer_estimate = richardson_extrapolate(hs, g, &out.extrapolation_order);
      double tail = 0.0;
      for (const auto& p : out.per_regulator) tail = std::max(tail, p.tail_spread);
      out.uncertainty = std::max(std::abs(out.outer_estimate - g.back()), tail);
    } else {
      rep.quarantined.push_back(out.name);
    }
    if (opt.swapped_order && r_grid.size() >= 2) {
      InnerPlateau swapped;
      swapped.ranks = rank_grid;
      for (std::size_t n = 0; n < rank_grid.size(); ++n) {
        std::vector<cplx> g;
        for (const auto& p : out.per_regulator) g.push_back(p.values[n]);
        swapped.values.push_back(richardson_extrapolate(hs, g));
      }
      detail::locate_plateau(swapped, eps);
      if (swapped.has_plateau()) {
        out.swapped_estimate = swapped.limit();
        if (out.plateau_everywhere) out.order_discrepancy = std::abs(*out.swapped_estimate - out.outer_estimate);
      }
    }
    rep.families.push_back(std::move(out));
  }

  // h_star: largest plateau rank at the finest regulator among plateaued families.
  for (const auto& fo : rep.families) {
    const auto& last = fo.per_regulator.back();
    if (last.has_plateau()) rep.h_star = std::max(rep.h_star.value_or(0), *last.plateau_rank);
  }
  bool all_dominant = rep.h_star.has_value();
  if (rep.h_star) {
    for (auto& fo : rep.families) {
      const auto& last = fo.per_regulator.back();
      const auto ref = last.value_at(*rep.h_star);
      bool ok = ref && detail::finite(*ref);
      for (std::size_t i = 0; ok && i < last.ranks.size(); ++i)
        if (last.ranks[i] >= *rep.h_star) ok = detail::finite(last.values[i]) && std::abs(*ref - last.values[i]) < eps;
      fo.dominance = ok;
      all_dominant = all_dominant && ok;
    }
  }
  rep.certified = rep.quarantined.empty() && all_dominant;
  return rep;
}

struct StateHorizon {
  /// Per direction (plus, minus) horizon; the state's T_u is their maximum.
  std::optional<double> t_plus;
  std::optional<double> t_minus;
  std::optional<double> t_u;
  /// Largest drift within the certifying window.
  double window_drift = std::numeric_limits<double>::quiet_NaN();
  bool recurrence = false;
  double recurrence_time = std::numeric_limits<double>::quiet_NaN();
};

struct HorizonRecord {
  std::vector<StateHorizon> states;
  std::optional<double> global_t;
  bool found = false;
  double tol = 0.0;
  std::size_t window = 0;
};

namespace detail {

struct DirectionHorizon {
  std::optional<double> t;
  double window_drift = std::numeric_limits<double>::quiet_NaN();
  bool recurrence = false;
  double recurrence_time = std::numeric_limits<double>::quiet_NaN();
};

inline DirectionHorizon horizon_one(const Propagator& prop, const std::vector<double>& energies,
                                    const Vector& state, Direction dir, const std::vector<double>& grid, double tol,
                                    std::size_t window) {
  const double sigma = direction_sign(dir);
  // Omega(-sigma s) x = sum_u x_u e^{i sigma E_u s} e^{-i sigma H s} e_u, each
  // e^{-i sigma H s} e_u advanced incrementally along the grid.
  std::vector<Eigen::Index> support;
  for (Eigen::Index i = 1; i < state.size(); ++i)
    if (state(i) != cplx{}) support.push_back(i);
  std::vector<Vector> psi;
  for (auto i : support) {
    psi.push_back(Vector::Zero(state.size()));
    psi.back()(i) = 1.0;
  }
  std::vector<Vector> omega;
  omega.reserve(grid.size());
  double s_prev = 0.0;
  for (double s : grid) {
    Vector cur = Vector::Zero(state.size());
    for (std::size_t q = 0; q < support.size(); ++q) {
      psi[q] = prop.evolve(psi[q], sigma * (s - s_prev));
      const auto i = support[q];
      cur += (state(i) * std::exp(imag_unit * (sigma * energies[static_cast<std::size_t>(i)] * s))) * psi[q];
    }
    s_prev = s;
    omega.push_back(std::move(cur));
  }
  DirectionHorizon out;
  const std::size_t ng = grid.size();
  for (std::size_t k = 0; k + 1 < ng; ++k) {
    double d = 0.0;
    for (std::size_t j = k + 1; j < std::min(ng, k + window); ++j) d = std::max(d, (omega[j] - omega[k]).norm());
    if (d < tol) {
      out.t = grid[k];
      out.window_drift = d;
      for (std::size_t j = k + window; j < ng; ++j)
        if ((omega[j] - omega[k]).norm() >= tol) {
          out.recurrence = true;
          out.recurrence_time = grid[j];
          break;
        }
      return out;
    }
  }
  return out;
}

}  // namespace detail

/// Per-state horizons T_u over both directions, certified over a trailing
/// window of `window` grid points; global T = max_u T_u.
inline HorizonRecord horizon_study(const RegularizedHamiltonian& h, const Propagator& prop,
                                   const std::vector<Vector>& states, const std::vector<double>& time_grid, double tol,
                                   std::size_t window = 2, std::size_t workers = 1) {
  if (time_grid.size() < 2) throw ValidationError("time_grid", "need at least two times");
  for (std::size_t i = 0; i < time_grid.size(); ++i)
    if (!(time_grid[i] > 0.0) || (i > 0 && !(time_grid[i] > time_grid[i - 1])))
      throw ValidationError("time_grid", "must be increasing positive times");
  if (window < 2) throw ValidationError("window", "must be at least 2");
  if (!(tol > 0.0)) throw ValidationError("tol", "must be positive");
  for (const auto& s : states) {
    if (static_cast<std::size_t>(s.size()) != h.dimension()) throw ValidationError("states", "dimension mismatch");
    if (std::abs(s.norm() - 1.0) > 1e-10) throw ValidationError("states", "states must be normalized");
  }
  HorizonRecord rec;
  rec.tol = tol;
  rec.window = window;
  rec.states.resize(states.size());
  const auto& energies = h.basis().energies();
  parallel_for(states.size(), workers, [&](std::size_t i) {
    auto p = detail::horizon_one(prop, energies, states[i], Direction::plus, time_grid, tol, window);
    auto m = detail::horizon_one(prop, energies, states[i], Direction::minus, time_grid, tol, window);
    StateHorizon& sh = rec.states[i];
    sh.t_plus = p.t;
    sh.t_minus = m.t;
    if (p.t && m.t) sh.t_u = std::max(*p.t, *m.t);
    sh.window_drift = std::max(p.window_drift, m.window_drift);
    sh.recurrence = p.recurrence || m.recurrence;
    if (p.recurrence && m.recurrence)
      sh.recurrence_time = std::min(p.recurrence_time, m.recurrence_time);
    else if (p.recurrence)
      sh.recurrence_time = p.recurrence_time;
    else if (m.recurrence)
      sh.recurrence_time = m.recurrence_time;
  });
  rec.found = std::all_of(rec.states.begin(), rec.states.end(), [](const StateHorizon& s) { return s.t_u.has_value(); });
  for (const auto& s : rec.states)
    if (s.t_u) rec.global_t = std::max(rec.global_t.value_or(0.0), *s.t_u);
  if (!rec.found) rec.global_t.reset();
  return rec;
}

}  // namespace fockscat
