#pragma once

// Particle systems, momentum grids, truncated occupation-number bases and
// ladder operators.

#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fockscat/core.hpp"

namespace fockscat {

enum class Statistics { boson, fermion };
enum class LadderKind { raise, lower };

struct ParticleEntry {
  std::string name;
  Statistics statistics = Statistics::boson;
  double mass = 0.0;
  /// Name of the antiparticle; equal to `name` for self-conjugate particles.
  std::string conjugate;
};

/// Finite set of particle labels with an involutive conjugation. Immutable.
class ParticleSystem {
 public:
  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& name(std::size_t p) const { return entries_.at(p).name; }
  std::size_t conjugate(std::size_t p) const { return conjugate_.at(p); }
  bool is_fermion(std::size_t p) const { return entries_.at(p).statistics == Statistics::fermion; }
  double mass(std::size_t p) const { return entries_.at(p).mass; }
  bool self_conjugate(std::size_t p) const { return conjugate(p) == p; }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t index_of(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw ValidationError("particles", "unknown particle '" + std::string(name) + "'");
  }

  const std::vector<ParticleEntry>& entries() const noexcept { return entries_; }

 private:
  friend ParticleSystem build_particle_system(std::span<const ParticleEntry> table);
  std::vector<ParticleEntry> entries_;
  std::vector<std::size_t> conjugate_;
};

inline ParticleSystem build_particle_system(std::span<const ParticleEntry> table) {
  if (table.empty()) throw ValidationError("particles", "particle table is empty");
  ParticleSystem sys;
  sys.entries_.assign(table.begin(), table.end());
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& e = table[i];
    if (e.name.empty()) throw ValidationError("particles", "particle with empty name");
    for (std::size_t j = 0; j < i; ++j)
      if (table[j].name == e.name)
        throw ValidationError("particles", "duplicate particle '" + e.name + "'");
    if (!(e.mass >= 0.0) || !std::isfinite(e.mass))
      throw ValidationError("particles." + e.name + ".mass", "mass must be finite and nonnegative");
  }
  sys.conjugate_.resize(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& e = table[i];
    const std::string& conj_name = e.conjugate.empty() ? e.name : e.conjugate;
    auto j = sys.find(conj_name);
    if (!j)
      throw ValidationError("particles." + e.name + ".conjugate",
                            "conjugate '" + conj_name + "' is not in the table");
    sys.conjugate_[i] = *j;
    sys.entries_[i].conjugate = conj_name;
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    const std::size_t j = sys.conjugate_[i];
    if (sys.conjugate_[j] != i)
      throw ValidationError("particles." + table[i].name + ".conjugate",
                            "conjugation is not an involution");
    if (table[i].mass != table[j].mass)
      throw ValidationError("particles." + table[i].name + ".mass",
                            "mass differs from that of antiparticle '" + table[j].name + "'");
    if (table[i].statistics != table[j].statistics)
      throw ValidationError("particles." + table[i].name + ".statistics",
                            "statistics differ from those of antiparticle '" + table[j].name + "'");
  }
  return sys;
}

/// Momentum point in units of the grid spacing.
using LatticeMomentum = std::vector<int>;

struct GridSpec {
  int dimension = 1;
  double cutoff = 1.0;
  double spacing = 1.0;
  /// Internal labels (spin, colour, flavour) per particle name; missing
  /// entries mean a single unnamed label.
  std::map<std::string, std::vector<std::string>> internal_labels;
};

/// Symmetric box-quantization grid: all points j * spacing with every
/// component |j * spacing| <= cutoff, ordered by (|k|, components).
class ModeGrid {
 public:
  ModeGrid(const ParticleSystem& system, GridSpec spec) : spec_(std::move(spec)) {
    if (spec_.dimension < 1 || spec_.dimension > 3)
      throw ValidationError("grid.dimension", "must be 1, 2 or 3");
    if (!(spec_.cutoff > 0.0)) throw ValidationError("grid.cutoff", "must be positive");
    if (!(spec_.spacing > 0.0)) throw ValidationError("grid.spacing", "must be positive");
    const int jmax = static_cast<int>(std::floor(spec_.cutoff / spec_.spacing + 1e-9));
    LatticeMomentum k(static_cast<std::size_t>(spec_.dimension), -jmax);
    for (;;) {
      points_.push_back(k);
      std::size_t c = 0;
      while (c < k.size() && k[c] == jmax) k[c++] = -jmax;
      if (c == k.size()) break;
      ++k[c];
    }
    std::sort(points_.begin(), points_.end(), [](const LatticeMomentum& a, const LatticeMomentum& b) {
      const long na = norm2(a), nb = norm2(b);
      if (na != nb) return na < nb;
      return a < b;
    });
    for (std::size_t i = 0; i < points_.size(); ++i) point_index_.emplace(points_[i], i);

    labels_.resize(system.size());
    for (std::size_t p = 0; p < system.size(); ++p) {
      auto it = spec_.internal_labels.find(system.name(p));
      labels_[p] = (it == spec_.internal_labels.end() || it->second.empty())
                       ? std::vector<std::string>{""}
                       : it->second;
    }
    for (const auto& [name, labels] : spec_.internal_labels) {
      if (!system.find(name))
        throw ValidationError("grid.internal_labels." + name, "unknown particle");
      (void)labels;
    }
  }

  int dimension() const noexcept { return spec_.dimension; }
  double cutoff() const noexcept { return spec_.cutoff; }
  double spacing() const noexcept { return spec_.spacing; }
  const GridSpec& spec() const noexcept { return spec_; }

  const std::vector<LatticeMomentum>& points() const noexcept { return points_; }
  std::size_t size() const noexcept { return points_.size(); }

  std::optional<std::size_t> find_point(const LatticeMomentum& k) const {
    auto it = point_index_.find(k);
    if (it == point_index_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<double> momentum(std::size_t point) const {
    std::vector<double> k;
    for (int j : points_.at(point)) k.push_back(j * spec_.spacing);
    return k;
  }

  double momentum_norm(std::size_t point) const {
    return std::sqrt(static_cast<double>(norm2(points_.at(point)))) * spec_.spacing;
  }

  const std::vector<std::string>& labels(std::size_t particle) const { return labels_.at(particle); }

  /// Box length implied by the spacing, L = 2 pi / spacing.
  double box_length() const noexcept { return 2.0 * std::numbers::pi / spec_.spacing; }

  static long norm2(const LatticeMomentum& k) {
    long s = 0;
    for (int j : k) s += static_cast<long>(j) * j;
    return s;
  }

 private:
  GridSpec spec_;
  std::vector<LatticeMomentum> points_;
  std::map<LatticeMomentum, std::size_t> point_index_;
  std::vector<std::vector<std::string>> labels_;
};

/// Single-particle energy sqrt(m^2 + |k|^2).
inline double dispersion(double mass, std::span<const double> k) {
  double s = mass * mass;
  for (double c : k) s += c * c;
  return std::sqrt(s);
}

inline double dispersion(const ParticleSystem& system, const ModeGrid& grid, std::size_t particle,
                         std::size_t point) {
  const auto k = grid.momentum(point);
  return dispersion(system.mass(particle), k);
}

/// One single-particle mode (particle, momentum point, internal label).
struct Orbital {
  std::size_t particle = 0;
  std::size_t point = 0;
  std::size_t label = 0;
  double energy = 0.0;
  bool fermion = false;
};

struct FockState {
  std::vector<std::uint8_t> occupations;

  int total_quanta() const {
    int n = 0;
    for (auto o : occupations) n += o;
    return n;
  }
  bool is_vacuum() const {
    return std::all_of(occupations.begin(), occupations.end(), [](auto o) { return o == 0; });
  }
  auto operator<=>(const FockState&) const = default;
};

struct FockStateHash {
  std::size_t operator()(const FockState& s) const noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (auto o : s.occupations) {
      h ^= o;
      h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h);
  }
};

struct BasisOptions {
  int n_max_quanta = 2;
  std::optional<double> energy_cap;
  std::size_t hard_limit = 200000;
};

/// Enumerated occupation states ordered by (free energy, occupation vector);
/// the vacuum is state 0. Immutable after construction.
class FockBasis {
 public:
  std::size_t size() const noexcept { return states_.size(); }
  const FockState& state(std::size_t i) const { return states_.at(i); }
  double energy(std::size_t i) const { return energies_.at(i); }
  const std::vector<double>& energies() const noexcept { return energies_; }
  const std::vector<FockState>& states() const noexcept { return states_; }
  int n_max_quanta() const noexcept { return options_.n_max_quanta; }
  const BasisOptions& options() const noexcept { return options_; }

  std::optional<std::size_t> index_of(const FockState& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const ParticleSystem& system() const noexcept { return system_; }
  const ModeGrid& grid() const noexcept { return grid_; }
  const std::vector<Orbital>& orbitals() const noexcept { return orbitals_; }

  std::size_t orbital_index(std::size_t particle, std::size_t point, std::size_t label = 0) const {
    auto it = orbital_lookup_.find(key(particle, point, label));
    if (it == orbital_lookup_.end())
      throw ValidationError("mode", "unknown mode (particle " + std::to_string(particle) +
                                        ", point " + std::to_string(point) + ", label " +
                                        std::to_string(label) + ")");
    return it->second;
  }

  /// Orbitals of `particle` at momentum point `point`, all labels.
  std::span<const std::size_t> orbitals_at(std::size_t particle, std::size_t point) const {
    auto it = orbitals_by_momentum_.find(particle * grid_.size() + point);
    if (it == orbitals_by_momentum_.end()) return {};
    return it->second;
  }

  /// Orbitals belonging to `particle`, in global order.
  std::span<const std::size_t> orbitals_of(std::size_t particle) const {
    return orbitals_by_particle_.at(particle);
  }

  double state_energy(const FockState& s) const {
    double e = 0.0;
    for (std::size_t o = 0; o < orbitals_.size(); ++o) e += s.occupations[o] * orbitals_[o].energy;
    return e;
  }

  /// Human-readable occupation string such as "phi(0)^2 phi(1)".
  std::string describe(const FockState& s) const {
    std::string out;
    for (std::size_t o = 0; o < orbitals_.size(); ++o) {
      if (s.occupations[o] == 0) continue;
      const auto& orb = orbitals_[o];
      if (!out.empty()) out += ' ';
      out += system_.name(orb.particle) + "(";
      const auto& k = grid_.points()[orb.point];
      for (std::size_t c = 0; c < k.size(); ++c) out += (c ? "," : "") + std::to_string(k[c]);
      const auto& lbl = grid_.labels(orb.particle)[orb.label];
      if (!lbl.empty()) out += ";" + lbl;
      out += ")";
      if (s.occupations[o] > 1) out += "^" + std::to_string(s.occupations[o]);
    }
    return out.empty() ? std::string("vac") : out;
  }

 private:
  friend FockBasis enumerate_basis(const ParticleSystem&, const ModeGrid&, BasisOptions);

  FockBasis(ParticleSystem sys, ModeGrid grid, BasisOptions options)
      : system_(std::move(sys)), grid_(std::move(grid)), options_(options) {}

  std::size_t key(std::size_t particle, std::size_t point, std::size_t label) const {
    return (particle * grid_.size() + point) * 64 + label;
  }

  ParticleSystem system_;
  ModeGrid grid_;
  BasisOptions options_;
  std::vector<Orbital> orbitals_;
  std::unordered_map<std::size_t, std::size_t> orbital_lookup_;
  std::unordered_map<std::size_t, std::vector<std::size_t>> orbitals_by_momentum_;
  std::vector<std::vector<std::size_t>> orbitals_by_particle_;
  std::vector<FockState> states_;
  std::vector<double> energies_;
  std::unordered_map<FockState, std::size_t, FockStateHash> index_;
};

inline FockBasis enumerate_basis(const ParticleSystem& system, const ModeGrid& grid, BasisOptions options) {
  if (options.n_max_quanta < 0) throw ValidationError("basis.n_max_quanta", "must be nonnegative");
  if (options.n_max_quanta > 255) throw ValidationError("basis.n_max_quanta", "must be at most 255");
  if (options.energy_cap && !(*options.energy_cap >= 0.0))
    throw ValidationError("basis.energy_cap", "must be nonnegative");

  FockBasis basis(system, grid, options);
  basis.orbitals_by_particle_.resize(system.size());
  for (std::size_t p = 0; p < system.size(); ++p) {
    for (std::size_t pt = 0; pt < grid.size(); ++pt) {
      const double e = dispersion(system, grid, p, pt);
      for (std::size_t l = 0; l < grid.labels(p).size(); ++l) {
        if (l >= 64) throw ValidationError("grid.internal_labels", "at most 64 labels per particle");
        const std::size_t o = basis.orbitals_.size();
        basis.orbitals_.push_back({p, pt, l, e, system.is_fermion(p)});
        basis.orbital_lookup_.emplace(basis.key(p, pt, l), o);
        basis.orbitals_by_momentum_[p * grid.size() + pt].push_back(o);
        basis.orbitals_by_particle_[p].push_back(o);
      }
    }
  }

  const auto& orbs = basis.orbitals_;
  const double cap = options.energy_cap.value_or(std::numeric_limits<double>::infinity());
  const double cap_slack = std::isfinite(cap) ? 1e-12 * std::max(1.0, cap) : 0.0;
  constexpr std::size_t count_ceiling = 50'000'000;

  std::size_t count = 0;
  std::vector<std::uint8_t> occ(orbs.size(), 0);
  std::vector<FockState> states;
  // Depth-first over orbitals; energies are nonnegative so the cap prunes.
  auto recurse = [&](auto&& self, std::size_t o, int remaining, double energy) -> void {
    if (count > count_ceiling) return;
    if (o == orbs.size()) {
      ++count;
      if (count <= options.hard_limit) states.push_back(FockState{occ});
      return;
    }
    const int top = orbs[o].fermion ? std::min(1, remaining) : remaining;
    for (int n = 0; n <= top; ++n) {
      const double e = energy + n * orbs[o].energy;
      if (e > cap + cap_slack) break;
      occ[o] = static_cast<std::uint8_t>(n);
      self(self, o + 1, remaining - n, e);
    }
    occ[o] = 0;
  };
  recurse(recurse, 0, options.n_max_quanta, 0.0);
  if (count > options.hard_limit) throw BasisLimitError(count, options.hard_limit);

  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) order.emplace_back(basis.state_energy(states[i]), i);
  std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return states[a.second].occupations < states[b.second].occupations;
  });
  basis.states_.reserve(states.size());
  basis.energies_.reserve(states.size());
  for (const auto& [e, i] : order) {
    basis.index_.emplace(states[i], basis.states_.size());
    basis.states_.push_back(std::move(states[i]));
    basis.energies_.push_back(e);
  }
  return basis;
}

struct LadderResult {
  double coefficient = 0.0;
  FockState state;
};

/// Applies a single raising or lowering operator to an occupation state.
/// Returns nullopt when the result vanishes (empty mode, Pauli exclusion).
/// Bosons carry sqrt(n+1) / sqrt(n); fermions carry (-1)^(number of occupied
/// fermionic orbitals strictly before the target). Basis membership of the
/// result is not checked here.
inline std::optional<LadderResult> apply_ladder(const FockBasis& basis, const FockState& s,
                                                std::size_t orbital, LadderKind kind) {
  const auto& orbs = basis.orbitals();
  const int n = s.occupations.at(orbital);
  LadderResult out{1.0, s};
  if (orbs[orbital].fermion) {
    if ((kind == LadderKind::raise && n == 1) || (kind == LadderKind::lower && n == 0)) return std::nullopt;
    int parity = 0;
    for (std::size_t o = 0; o < orbital; ++o)
      if (orbs[o].fermion) parity += s.occupations[o];
    out.coefficient = (parity % 2) ? -1.0 : 1.0;
  } else {
    if (kind == LadderKind::lower && n == 0) return std::nullopt;
    if (kind == LadderKind::raise && n == 255) return std::nullopt;
    out.coefficient = std::sqrt(static_cast<double>(kind == LadderKind::raise ? n + 1 : n));
  }
  out.state.occupations[orbital] = static_cast<std::uint8_t>(kind == LadderKind::raise ? n + 1 : n - 1);
  return out;
}

/// Matrix of a† or a for one mode. Raising out of the truncated basis gives
/// the zero vector (projection truncation).
inline SparseOperator ladder_matrix(const FockBasis& basis, std::size_t orbital, LadderKind kind) {
  if (orbital >= basis.orbitals().size())
    throw ValidationError("mode", "orbital index " + std::to_string(orbital) + " out of range");
  const auto dim = static_cast<Eigen::Index>(basis.size());
  std::vector<Eigen::Triplet<cplx>> trips;
  for (std::size_t col = 0; col < basis.size(); ++col) {
    auto r = apply_ladder(basis, basis.state(col), orbital, kind);
    if (!r) continue;
    auto row = basis.index_of(r->state);
    if (!row) continue;
    trips.emplace_back(static_cast<Eigen::Index>(*row), static_cast<Eigen::Index>(col), r->coefficient);
  }
  SparseOperator m(dim, dim);
  m.setFromTriplets(trips.begin(), trips.end());
  return m;
}

inline SparseOperator ladder_matrix(const FockBasis& basis, std::string_view particle,
                                    const LatticeMomentum& k, LadderKind kind, std::size_t label = 0) {
  const std::size_t p = basis.system().index_of(particle);
  auto pt = basis.grid().find_point(k);
  if (!pt) throw ValidationError("mode", "momentum point not on the grid");
  return ladder_matrix(basis, basis.orbital_index(p, *pt, label), kind);
}

}  // namespace fockscat
