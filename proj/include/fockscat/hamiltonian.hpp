#pragma once

// Free Hamiltonian, vertex-based interactions and the finite-rank
// regularized Hamiltonian A0 + P_n V P_n.

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fockscat/fock.hpp"

namespace fockscat {

struct Leg {
  std::size_t particle = 0;
  LadderKind kind = LadderKind::raise;
};

/// Kernel of a vertex: amplitude for one assignment of orbitals to legs
/// (in leg order). Includes any normalization; the named coupling is
/// applied separately.
using Kernel = std::function<cplx(const FockBasis&, std::span<const std::size_t>)>;

/// Normal-ordered monomial: sum over orbital assignments of
/// kernel * a†...a† a...a, raising legs first.
struct Vertex {
  std::string name;
  std::vector<Leg> legs;
  Kernel kernel;
  bool momentum_conserving = true;
  /// Name of the coupling constant multiplying the kernel; empty means 1.
  std::string coupling;

  std::size_t raising_count() const {
    std::size_t c = 0;
    while (c < legs.size() && legs[c].kind == LadderKind::raise) ++c;
    return c;
  }
};

struct InteractionSpec {
  std::vector<Vertex> vertices;
  std::map<std::string, double> couplings;
  std::vector<Vertex> counterterms;

  bool empty() const { return vertices.empty() && counterterms.empty(); }

  double coupling_value(const std::string& name) const {
    if (name.empty()) return 1.0;
    auto it = couplings.find(name);
    if (it == couplings.end()) throw ValidationError("interaction.couplings", "undefined coupling '" + name + "'");
    return it->second;
  }

  /// Vertices followed by counterterms.
  std::vector<const Vertex*> all_vertices() const {
    std::vector<const Vertex*> out;
    for (const auto& v : vertices) out.push_back(&v);
    for (const auto& v : counterterms) out.push_back(&v);
    return out;
  }
};

inline void validate_vertex(const Vertex& v, const ParticleSystem& system) {
  if (v.legs.empty()) throw ValidationError("vertex " + v.name, "has no legs");
  if (!v.kernel) throw ValidationError("vertex " + v.name, "has no kernel");
  const std::size_t c = v.raising_count();
  for (std::size_t i = c; i < v.legs.size(); ++i)
    if (v.legs[i].kind == LadderKind::raise)
      throw ValidationError("vertex " + v.name, "legs are not normal ordered (raising after lowering)");
  for (const auto& leg : v.legs)
    if (leg.particle >= system.size()) throw ValidationError("vertex " + v.name, "leg particle out of range");
}

/// Adjoint vertex: legs reversed with kinds flipped, kernel conjugated.
inline Vertex hermitian_conjugate(const Vertex& v) {
  Vertex out;
  out.name = v.name + "^dagger";
  out.momentum_conserving = v.momentum_conserving;
  out.coupling = v.coupling;
  for (auto it = v.legs.rbegin(); it != v.legs.rend(); ++it)
    out.legs.push_back({it->particle, it->kind == LadderKind::raise ? LadderKind::lower : LadderKind::raise});
  out.kernel = [k = v.kernel](const FockBasis& b, std::span<const std::size_t> orbs) {
    std::vector<std::size_t> rev(orbs.rbegin(), orbs.rend());
    return std::conj(k(b, rev));
  };
  return out;
}

namespace detail {

inline double box_volume(const FockBasis& b) {
  return std::pow(b.grid().box_length(), b.grid().dimension());
}

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

inline bool same_label(const FockBasis& b, std::span<const std::size_t> orbs) {
  for (std::size_t i = 1; i < orbs.size(); ++i)
    if (b.orbitals()[orbs[i]].label != b.orbitals()[orbs[0]].label) return false;
  return true;
}

/// prod 1/sqrt(2 mu); zero-energy modes decouple (the factor would diverge).
inline double relativistic_factor(const FockBasis& b, std::span<const std::size_t> orbs) {
  double f = 1.0;
  for (auto o : orbs) {
    const double e = b.orbitals()[o].energy;
    if (e <= 0.0) return 0.0;
    f /= std::sqrt(2.0 * e);
  }
  return f;
}

}  // namespace detail

/// Normal-ordered (1/P!) :phi^P: for a self-conjugate boson in a periodic
/// box, expanded into P+1 monomials with binomial weights.
inline std::vector<Vertex> phi_power_vertices(const ParticleSystem& system, std::string_view particle, int power,
                                              const std::string& coupling) {
  const std::size_t p = system.index_of(particle);
  if (system.is_fermion(p) || !system.self_conjugate(p))
    throw ValidationError("interaction", "phi^" + std::to_string(power) + " requires a self-conjugate boson, got '" +
                                             std::string(particle) + "'");
  if (power < 2) throw ValidationError("interaction", "field power must be at least 2");
  std::vector<Vertex> out;
  double factorial = 1.0;
  for (int i = 2; i <= power; ++i) factorial *= i;
  for (int raised = power; raised >= 0; --raised) {
    Vertex v;
    v.name = "phi" + std::to_string(power) + "[" + std::to_string(raised) + "," + std::to_string(power - raised) + "]";
    v.coupling = coupling;
    for (int i = 0; i < power; ++i) v.legs.push_back({p, i < raised ? LadderKind::raise : LadderKind::lower});
    const double weight = detail::binomial(power, raised) / factorial;
    v.kernel = [weight, power](const FockBasis& b, std::span<const std::size_t> orbs) -> cplx {
      if (!detail::same_label(b, orbs)) return 0.0;
      const double vol = detail::box_volume(b);
      return weight * std::pow(vol, 1.0 - 0.5 * power) * detail::relativistic_factor(b, orbs);
    };
    out.push_back(std::move(v));
  }
  return out;
}

/// Quadratic mass counterterm (delta m^2 / 2) :phi^2:.
inline std::vector<Vertex> mass_counterterm_vertices(const ParticleSystem& system, std::string_view particle,
                                                     const std::string& coupling) {
  auto out = phi_power_vertices(system, particle, 2, coupling);
  for (auto& v : out) v.name = "mass_ct" + v.name.substr(4);
  return out;
}

/// Yukawa-type pair creation b† d† a + h.c., with d the antiparticle of b and
/// a a boson. Spinor factors are absorbed into the kernel, which is
/// diagonal in the internal labels of b and d.
inline std::vector<Vertex> yukawa_vertices(const ParticleSystem& system, std::string_view fermion,
                                           std::string_view scalar, const std::string& coupling) {
  const std::size_t b = system.index_of(fermion);
  const std::size_t d = system.conjugate(b);
  const std::size_t a = system.index_of(scalar);
  if (system.is_fermion(a)) throw ValidationError("interaction", "yukawa scalar leg must be a boson");
  Vertex v;
  v.name = "yukawa";
  v.coupling = coupling;
  v.legs = {{b, LadderKind::raise}, {d, LadderKind::raise}, {a, LadderKind::lower}};
  v.kernel = [](const FockBasis& basis, std::span<const std::size_t> orbs) -> cplx {
    const auto& o = basis.orbitals();
    if (o[orbs[0]].label != o[orbs[1]].label) return 0.0;
    const double e = o[orbs[2]].energy;
    if (e <= 0.0) return 0.0;
    return 1.0 / std::sqrt(detail::box_volume(basis) * 2.0 * e);
  };
  auto adj = hermitian_conjugate(v);
  return {std::move(v), std::move(adj)};
}

/// Evaluates kernels lazily, caching per (vertex, orbital assignment).
class KernelCache {
 public:
  cplx operator()(std::size_t vertex_id, const Vertex& v, const FockBasis& basis,
                  std::span<const std::size_t> orbs) {
    std::string key(reinterpret_cast<const char*>(&vertex_id), sizeof vertex_id);
    key.append(reinterpret_cast<const char*>(orbs.data()), orbs.size_bytes());
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    cplx value;
    try {
      value = v.kernel(basis, orbs);
    } catch (const std::exception& e) {
      throw Error("kernel evaluation failed in vertex '" + v.name + "': " + e.what());
    }
    if (!std::isfinite(value.real()) || !std::isfinite(value.imag()))
      throw Error("kernel evaluation failed in vertex '" + v.name + "': non-finite amplitude");
    cache_.emplace(std::move(key), value);
    return value;
  }

 private:
  std::unordered_map<std::string, cplx> cache_;
};

/// Column of the interaction: all (row, amplitude) pairs with
/// <row| V |col> != 0, rows within the basis. Acts on occupation vectors
/// directly, right-most leg first.
inline std::map<std::size_t, cplx> interaction_column(const InteractionSpec& spec, const FockBasis& basis,
                                                      std::size_t col, KernelCache& cache) {
  std::map<std::size_t, cplx> out;
  const auto& orbs = basis.orbitals();
  const auto& grid = basis.grid();
  const auto verts = spec.all_vertices();
  for (std::size_t vid = 0; vid < verts.size(); ++vid) {
    const Vertex& v = *verts[vid];
    const double g = spec.coupling_value(v.coupling);
    const std::size_t m = v.legs.size();
    const std::size_t nraise = v.raising_count();
    std::vector<std::size_t> assign(m);
    FockState state = basis.state(col);
    const auto dim = static_cast<std::size_t>(grid.dimension());

    // Lattice momentum balance: sum over lowered minus sum over raised.
    std::vector<long> balance(dim, 0);

    auto add_momentum = [&](std::size_t o, long sign) {
      const auto& k = grid.points()[orbs[o].point];
      for (std::size_t c = 0; c < dim; ++c) balance[c] += sign * k[c];
    };

    auto finish = [&](double coef) {
      if (v.momentum_conserving)
        for (long b : balance)
          if (b != 0) return;
      auto row = basis.index_of(state);
      if (!row) return;
      const cplx k = cache(vid, v, basis, assign);
      if (k == cplx{}) return;
      out[*row] += g * k * coef;
    };

    auto step = [&](auto&& self, std::size_t leg_pos, double coef) -> void {
      // leg_pos counts down from m; leg index is leg_pos - 1.
      if (leg_pos == 0) {
        finish(coef);
        return;
      }
      const std::size_t li = leg_pos - 1;
      const Leg& leg = v.legs[li];
      auto try_orbital = [&](std::size_t o) {
        auto r = apply_ladder(basis, state, o, leg.kind);
        if (!r) return;
        FockState saved = std::move(state);
        state = std::move(r->state);
        assign[li] = o;
        const long sign = leg.kind == LadderKind::lower ? 1 : -1;
        add_momentum(o, sign);
        self(self, li, coef * r->coefficient);
        add_momentum(o, -sign);
        state = std::move(saved);
      };
      if (li == 0 && nraise > 0 && v.momentum_conserving) {
        // The first raising leg must absorb the remaining momentum.
        LatticeMomentum need(dim);
        for (std::size_t c = 0; c < dim; ++c) need[c] = static_cast<int>(balance[c]);
        auto pt = grid.find_point(need);
        if (!pt) return;
        for (auto o : basis.orbitals_at(leg.particle, *pt)) try_orbital(o);
        return;
      }
      for (auto o : basis.orbitals_of(leg.particle)) {
        if (leg.kind == LadderKind::lower && state.occupations[o] == 0) continue;
        try_orbital(o);
      }
    };
    step(step, m, 1.0);
  }
  return out;
}

/// <u| V |v> for basis indices u, v.
inline cplx interaction_matrix_element(const InteractionSpec& spec, const FockBasis& basis, std::size_t u,
                                       std::size_t v) {
  KernelCache cache;
  auto col = interaction_column(spec, basis, v, cache);
  auto it = col.find(u);
  return it == col.end() ? cplx{} : it->second;
}

/// <u| V |v> for occupation vectors; both must lie in the basis.
inline cplx interaction_matrix_element(const InteractionSpec& spec, const FockBasis& basis, const FockState& u,
                                       const FockState& v) {
  auto iu = basis.index_of(u);
  auto iv = basis.index_of(v);
  if (!iu || !iv) throw ValidationError("interaction_matrix_element", "state outside the truncated basis");
  return interaction_matrix_element(spec, basis, *iu, *iv);
}

inline SparseOperator free_hamiltonian(const FockBasis& basis) {
  const auto dim = static_cast<Eigen::Index>(basis.size());
  SparseOperator a0(dim, dim);
  std::vector<Eigen::Triplet<cplx>> trips;
  for (Eigen::Index i = 0; i < dim; ++i) trips.emplace_back(i, i, basis.energy(static_cast<std::size_t>(i)));
  a0.setFromTriplets(trips.begin(), trips.end());
  return a0;
}

/// A_{n,r} = A0 + P_n V P_n, P_n the projector on the first n basis states.
class RegularizedHamiltonian {
 public:
  RegularizedHamiltonian(std::shared_ptr<const FockBasis> basis, SparseOperator a0, SparseOperator full,
                         std::size_t rank)
      : basis_(std::move(basis)), a0_(std::move(a0)), full_(std::move(full)), rank_(rank) {
    const auto n = static_cast<Eigen::Index>(rank_);
    block_ = DenseMatrix(full_.topLeftCorner(n, n)) - DenseMatrix(a0_.topLeftCorner(n, n));
  }

  const FockBasis& basis() const noexcept { return *basis_; }
  std::shared_ptr<const FockBasis> basis_ptr() const noexcept { return basis_; }
  const SparseOperator& a0() const noexcept { return a0_; }
  const SparseOperator& full() const noexcept { return full_; }
  std::size_t interaction_rank() const noexcept { return rank_; }
  std::size_t dimension() const noexcept { return basis_->size(); }
  /// Dense n x n interaction block (full - a0 restricted to the first n states).
  const DenseMatrix& interaction_block() const noexcept { return block_; }

 private:
  std::shared_ptr<const FockBasis> basis_;
  SparseOperator a0_;
  SparseOperator full_;
  std::size_t rank_;
  DenseMatrix block_;
};

inline RegularizedHamiltonian assemble_regularized(const InteractionSpec& spec,
                                                   std::shared_ptr<const FockBasis> basis, std::size_t rank,
                                                   std::size_t workers = 1) {
  if (rank > basis->size())
    throw ValidationError("interaction.rank", "rank " + std::to_string(rank) + " exceeds basis size " +
                                                  std::to_string(basis->size()));
  for (const Vertex* v : spec.all_vertices()) {
    validate_vertex(*v, basis->system());
    (void)spec.coupling_value(v->coupling);
  }
  SparseOperator a0 = free_hamiltonian(*basis);

  // Columns are strided over workers; each worker keeps its own kernel cache.
  workers = std::max<std::size_t>(1, std::min(workers, rank));
  std::vector<std::vector<Eigen::Triplet<cplx>>> parts(workers);
  parallel_for(workers, workers, [&](std::size_t w) {
    KernelCache cache;
    for (std::size_t col = w; col < rank; col += workers) {
      for (const auto& [row, val] : interaction_column(spec, *basis, col, cache))
        if (row < rank)
          parts[w].emplace_back(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col), val);
    }
  });
  std::vector<Eigen::Triplet<cplx>> trips;
  for (std::size_t i = 0; i < basis->size(); ++i)
    trips.emplace_back(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i), basis->energy(i));
  for (auto& p : parts) trips.insert(trips.end(), p.begin(), p.end());
  const auto dim = static_cast<Eigen::Index>(basis->size());
  SparseOperator full(dim, dim);
  full.setFromTriplets(trips.begin(), trips.end());
  full.prune(cplx{0.0, 0.0}, 0.0);

  const double defect = hermiticity_defect(full);
  const double scale = std::max(1.0, max_abs(full));
  if (defect > 1e-12 * scale)
    throw ValidationError("interaction", "assembled Hamiltonian is not hermitian (defect " +
                                             std::to_string(defect) + "); add the hermitian-conjugate vertices");
  return RegularizedHamiltonian(std::move(basis), std::move(a0), std::move(full), rank);
}

struct GroundStateDiagnostic {
  double vacuum_expectation = 0.0;
  /// || (H - <w0|H|w0>) w0 ||
  double vacuum_defect = 0.0;
  double lowest_eigenvalue = 0.0;
  bool vacuum_is_eigenvector = false;
};

inline GroundStateDiagnostic ground_state_check(const RegularizedHamiltonian& h, std::size_t dense_limit = 400) {
  if (h.dimension() > dense_limit)
    throw ValidationError("ground_state_check", "dimension " + std::to_string(h.dimension()) +
                                                    " exceeds dense limit " + std::to_string(dense_limit));
  GroundStateDiagnostic d;
  Vector w0 = Vector::Zero(static_cast<Eigen::Index>(h.dimension()));
  w0(0) = 1.0;
  Vector hw = h.full() * w0;
  d.vacuum_expectation = hw(0).real();
  hw(0) -= d.vacuum_expectation;
  d.vacuum_defect = hw.norm();
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(to_dense(h.full()), Eigen::EigenvaluesOnly);
  d.lowest_eigenvalue = es.eigenvalues()(0);
  d.vacuum_is_eigenvector = d.vacuum_defect <= 1e-12 * std::max(1.0, max_abs(h.full()));
  return d;
}

}  // namespace fockscat
