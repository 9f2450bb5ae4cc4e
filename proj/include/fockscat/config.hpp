#pragma once

// Run configuration: strict YAML ingestion with line/column diagnostics.

#include <cctype>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "fockscat/convergence.hpp"
#include "fockscat/dyson.hpp"
#include "fockscat/hamiltonian.hpp"

namespace fockscat {

struct KernelTableEntry {
  std::vector<LatticeMomentum> momenta;
  cplx value;
};

/// Declarative vertex: either a built-in family or inline legs with a kernel.
struct VertexConfig {
  std::string builtin;  // phi3, phi4, yukawa, mass_counterterm, or empty for inline
  std::string particle;
  std::string fermion;
  std::string scalar;
  std::string coupling;
  // Inline form.
  std::string name;
  std::string legs;
  std::string kernel_type;  // constant, relativistic, table
  cplx kernel_value{0.0, 0.0};
  std::vector<KernelTableEntry> table;
  bool momentum_conserving = true;
  bool hermitian_conjugate = false;
};

struct ObservableConfig {
  std::string kind;  // s_element, ground_energy, intertwining_defect, isometry_defect
  std::size_t out = 1;
  std::size_t in = 1;
};

struct RunConfig {
  std::vector<ParticleEntry> particles;
  GridSpec grid;
  BasisOptions basis;
  std::optional<std::size_t> rank;
  std::map<std::string, double> couplings;
  std::vector<VertexConfig> vertices;
  std::vector<VertexConfig> counterterms;

  PropagatorOptions propagation;

  std::size_t evolve_state = 1;
  std::vector<double> evolve_times{0.5, 1.0, 2.0, 4.0};

  std::string wave_method = "both";  // time-plateau, adiabatic, both
  std::vector<double> time_grid;
  std::size_t window = 2;
  double plateau_tol = 1e-5;
  std::vector<double> eps_sequence{0.8, 0.4, 0.2};
  double adiabatic_tol = 1e-4;
  std::size_t nodes_per_panel = 16;
  double isometry_tol = 1e-4;
  double intertwining_tol = 1e-3;
  double agreement_tol = 1e-4;
  double rank_tol = 1e-8;

  std::optional<double> damping;  // empty: default from the level spacing
  std::size_t damping_channel = 1;
  double unitarity_tol = 1e-3;
  double consistency_tol = 1e-3;

  int dyson_order = 3;
  double dyson_t = 1.0;
  double dyson_t0 = -1.0;
  std::size_t dyson_nodes = 0;
  double dyson_quadrature_tol = 1e-12;
  double dyson_symmetrized_tol = 1e-9;

  std::vector<std::size_t> ranks;
  std::vector<RegulatorPoint> regulators;
  double converge_eps = 1e-3;
  std::vector<ObservableConfig> observables;
  bool swapped_order = false;
  std::vector<double> horizon_grid;
  double horizon_tol = 1e-4;
  std::size_t horizon_window = 2;
  std::vector<std::size_t> horizon_states;  // empty: every non-vacuum state

  std::string output_directory = "out";
  std::size_t dense_limit = 400;
  std::size_t workers = 1;

  std::string source_path;
};

/// Error raised for malformed configuration, with the YAML location.
class ConfigError : public ValidationError {
 public:
  ConfigError(const std::string& field, const std::string& message, const YAML::Mark& mark)
      : ValidationError(field, message + location(mark)) {}

 private:
  static std::string location(const YAML::Mark& m) {
    if (m.is_null()) return "";
    return " (line " + std::to_string(m.line + 1) + ", column " + std::to_string(m.column + 1) + ")";
  }
};

namespace config_detail {

inline void require_map(const YAML::Node& n, const std::string& field) {
  if (!n.IsMap()) throw ConfigError(field, "expected a mapping", n.Mark());
}

inline void check_keys(const YAML::Node& n, const std::string& field, const std::set<std::string>& allowed) {
  require_map(n, field);
  for (auto it = n.begin(); it != n.end(); ++it) {
    const auto key = it->first.as<std::string>();
    if (!allowed.count(key)) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError(field.empty() ? key : field + "." + key, "unknown key (allowed: " + list + ")",
                        it->first.Mark());
    }
  }
}

template <class T>
T scalar(const YAML::Node& n, const std::string& field) {
  if (!n.IsScalar()) throw ConfigError(field, "expected a scalar", n.Mark());
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(field, "cannot convert '" + n.Scalar() + "'", n.Mark());
  }
}

inline double positive(const YAML::Node& n, const std::string& field) {
  const double v = scalar<double>(n, field);
  if (!(v > 0.0) || std::isnan(v)) throw ConfigError(field, "must be strictly positive", n.Mark());
  return v;
}

inline std::size_t count(const YAML::Node& n, const std::string& field) {
  const long long v = scalar<long long>(n, field);
  if (v < 0) throw ConfigError(field, "must be nonnegative", n.Mark());
  return static_cast<std::size_t>(v);
}

inline cplx complex_value(const YAML::Node& n, const std::string& field) {
  if (n.IsSequence()) {
    if (n.size() != 2) throw ConfigError(field, "complex values are [re, im]", n.Mark());
    return {scalar<double>(n[0], field), scalar<double>(n[1], field)};
  }
  return {scalar<double>(n, field), 0.0};
}

inline std::vector<double> number_list(const YAML::Node& n, const std::string& field) {
  if (!n.IsSequence() || n.size() == 0) throw ConfigError(field, "expected a nonempty list", n.Mark());
  std::vector<double> out;
  for (std::size_t i = 0; i < n.size(); ++i) out.push_back(scalar<double>(n[i], field));
  return out;
}

inline std::vector<std::size_t> index_list(const YAML::Node& n, const std::string& field) {
  if (!n.IsSequence() || n.size() == 0) throw ConfigError(field, "expected a nonempty list", n.Mark());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n.size(); ++i) out.push_back(count(n[i], field));
  return out;
}

/// Either an explicit list or {start, stop, step}.
inline std::vector<double> time_list(const YAML::Node& n, const std::string& field) {
  std::vector<double> out;
  if (n.IsMap()) {
    check_keys(n, field, {"start", "stop", "step"});
    for (const char* k : {"start", "stop", "step"})
      if (!n[k]) throw ConfigError(field + "." + k, "required", n.Mark());
    const double a = positive(n["start"], field + ".start");
    const double b = positive(n["stop"], field + ".stop");
    const double h = positive(n["step"], field + ".step");
    if (b < a) throw ConfigError(field, "stop must not precede start", n.Mark());
    const auto steps = static_cast<std::size_t>(std::floor((b - a) / h + 1e-9));
    for (std::size_t i = 0; i <= steps; ++i) out.push_back(a + h * static_cast<double>(i));
  } else {
    out = number_list(n, field);
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(out[i] > 0.0) || (i > 0 && !(out[i] > out[i - 1])))
      throw ConfigError(field, "times must be positive and increasing", n.Mark());
  return out;
}

inline VertexConfig parse_vertex(const YAML::Node& n, const std::string& field) {
  require_map(n, field);
  VertexConfig v;
  if (n["builtin"]) {
    check_keys(n, field, {"builtin", "particle", "fermion", "scalar", "coupling"});
    v.builtin = scalar<std::string>(n["builtin"], field + ".builtin");
    static const std::set<std::string> known{"phi3", "phi4", "yukawa", "mass_counterterm"};
    if (!known.count(v.builtin))
      throw ConfigError(field + ".builtin", "unknown built-in '" + v.builtin + "' (phi3, phi4, yukawa, mass_counterterm)",
                        n["builtin"].Mark());
    if (n["coupling"]) v.coupling = scalar<std::string>(n["coupling"], field + ".coupling");
    if (v.builtin == "yukawa") {
      if (!n["fermion"] || !n["scalar"]) throw ConfigError(field, "yukawa needs fermion and scalar", n.Mark());
      v.fermion = scalar<std::string>(n["fermion"], field + ".fermion");
      v.scalar = scalar<std::string>(n["scalar"], field + ".scalar");
    } else {
      if (!n["particle"]) throw ConfigError(field + ".particle", "required", n.Mark());
      v.particle = scalar<std::string>(n["particle"], field + ".particle");
    }
    return v;
  }
  check_keys(n, field, {"name", "legs", "kernel", "coupling", "momentum_conserving", "hermitian_conjugate"});
  if (!n["legs"]) throw ConfigError(field + ".legs", "required (or give 'builtin')", n.Mark());
  if (!n["kernel"]) throw ConfigError(field + ".kernel", "required", n.Mark());
  v.legs = scalar<std::string>(n["legs"], field + ".legs");
  v.name = n["name"] ? scalar<std::string>(n["name"], field + ".name") : v.legs;
  if (n["coupling"]) v.coupling = scalar<std::string>(n["coupling"], field + ".coupling");
  if (n["momentum_conserving"]) v.momentum_conserving = scalar<bool>(n["momentum_conserving"], field + ".momentum_conserving");
  if (n["hermitian_conjugate"]) v.hermitian_conjugate = scalar<bool>(n["hermitian_conjugate"], field + ".hermitian_conjugate");
  const auto k = n["kernel"];
  const std::string kf = field + ".kernel";
  check_keys(k, kf, {"type", "value", "entries"});
  if (!k["type"]) throw ConfigError(kf + ".type", "required", k.Mark());
  v.kernel_type = scalar<std::string>(k["type"], kf + ".type");
  if (v.kernel_type == "constant" || v.kernel_type == "relativistic") {
    if (!k["value"]) throw ConfigError(kf + ".value", "required", k.Mark());
    v.kernel_value = complex_value(k["value"], kf + ".value");
  } else if (v.kernel_type == "table") {
    if (!k["entries"] || !k["entries"].IsSequence()) throw ConfigError(kf + ".entries", "expected a list", k.Mark());
    for (std::size_t i = 0; i < k["entries"].size(); ++i) {
      const auto e = k["entries"][i];
      const std::string ef = kf + ".entries[" + std::to_string(i) + "]";
      check_keys(e, ef, {"momenta", "value"});
      if (!e["momenta"] || !e["value"]) throw ConfigError(ef, "needs momenta and value", e.Mark());
      KernelTableEntry entry;
      if (!e["momenta"].IsSequence()) throw ConfigError(ef + ".momenta", "expected a list", e.Mark());
      for (std::size_t j = 0; j < e["momenta"].size(); ++j) {
        const auto kn = e["momenta"][j];
        LatticeMomentum km;
        if (kn.IsSequence())
          for (std::size_t c = 0; c < kn.size(); ++c) km.push_back(scalar<int>(kn[c], ef + ".momenta"));
        else
          km.push_back(scalar<int>(kn, ef + ".momenta"));
        entry.momenta.push_back(km);
      }
      entry.value = complex_value(e["value"], ef + ".value");
      v.table.push_back(std::move(entry));
    }
  } else {
    throw ConfigError(kf + ".type", "unknown kernel type '" + v.kernel_type + "' (constant, relativistic, table)",
                      k["type"].Mark());
  }
  return v;
}

inline void apply_section(const YAML::Node& root, const char* name, const std::set<std::string>& keys,
                          auto&& body) {
  const auto n = root[name];
  if (!n) return;
  check_keys(n, name, keys);
  body(n);
}

}  // namespace config_detail

inline RunConfig parse_config_node(const YAML::Node& root) {
  using namespace config_detail;
  RunConfig cfg;
  check_keys(root, "", {"particles", "grid", "basis", "interaction", "propagation", "evolve", "waveops", "smatrix",
                        "dyson", "converge", "output", "workers"});

  if (!root["particles"] || !root["particles"].IsSequence() || root["particles"].size() == 0)
    throw ConfigError("particles", "required nonempty list", root.Mark());
  for (std::size_t i = 0; i < root["particles"].size(); ++i) {
    const auto p = root["particles"][i];
    const std::string f = "particles[" + std::to_string(i) + "]";
    check_keys(p, f, {"name", "statistics", "mass", "conjugate"});
    if (!p["name"]) throw ConfigError(f + ".name", "required", p.Mark());
    ParticleEntry e;
    e.name = scalar<std::string>(p["name"], f + ".name");
    const std::string stats = p["statistics"] ? scalar<std::string>(p["statistics"], f + ".statistics") : "boson";
    if (stats == "boson")
      e.statistics = Statistics::boson;
    else if (stats == "fermion")
      e.statistics = Statistics::fermion;
    else
      throw ConfigError(f + ".statistics", "must be boson or fermion", p["statistics"].Mark());
    e.mass = p["mass"] ? scalar<double>(p["mass"], f + ".mass") : 0.0;
    if (e.mass < 0.0) throw ConfigError(f + ".mass", "must be nonnegative", p["mass"].Mark());
    e.conjugate = p["conjugate"] ? scalar<std::string>(p["conjugate"], f + ".conjugate") : e.name;
    cfg.particles.push_back(std::move(e));
  }

  apply_section(root, "grid", {"dimension", "cutoff", "spacing", "internal_labels"}, [&](const YAML::Node& g) {
    if (g["dimension"]) cfg.grid.dimension = scalar<int>(g["dimension"], "grid.dimension");
    if (g["cutoff"]) cfg.grid.cutoff = positive(g["cutoff"], "grid.cutoff");
    if (g["spacing"]) cfg.grid.spacing = positive(g["spacing"], "grid.spacing");
    if (const auto l = g["internal_labels"]) {
      require_map(l, "grid.internal_labels");
      for (auto it = l.begin(); it != l.end(); ++it) {
        const auto pname = it->first.as<std::string>();
        std::vector<std::string> labels;
        if (!it->second.IsSequence()) throw ConfigError("grid.internal_labels." + pname, "expected a list", it->second.Mark());
        for (std::size_t j = 0; j < it->second.size(); ++j)
          labels.push_back(scalar<std::string>(it->second[j], "grid.internal_labels." + pname));
        cfg.grid.internal_labels[pname] = labels;
      }
    }
  });

  apply_section(root, "basis", {"n_max_quanta", "energy_cap", "hard_limit"}, [&](const YAML::Node& b) {
    if (b["n_max_quanta"]) cfg.basis.n_max_quanta = static_cast<int>(count(b["n_max_quanta"], "basis.n_max_quanta"));
    if (b["energy_cap"]) cfg.basis.energy_cap = positive(b["energy_cap"], "basis.energy_cap");
    if (b["hard_limit"]) cfg.basis.hard_limit = count(b["hard_limit"], "basis.hard_limit");
  });

  apply_section(root, "interaction", {"rank", "couplings", "vertices", "counterterms"}, [&](const YAML::Node& in) {
    if (in["rank"]) cfg.rank = count(in["rank"], "interaction.rank");
    if (const auto c = in["couplings"]) {
      require_map(c, "interaction.couplings");
      for (auto it = c.begin(); it != c.end(); ++it) {
        const auto name = it->first.as<std::string>();
        cfg.couplings[name] = scalar<double>(it->second, "interaction.couplings." + name);
      }
    }
    for (const char* list : {"vertices", "counterterms"}) {
      const auto v = in[list];
      if (!v) continue;
      if (!v.IsSequence()) throw ConfigError(std::string("interaction.") + list, "expected a list", v.Mark());
      auto& dest = std::string(list) == "vertices" ? cfg.vertices : cfg.counterterms;
      for (std::size_t i = 0; i < v.size(); ++i)
        dest.push_back(parse_vertex(v[i], std::string("interaction.") + list + "[" + std::to_string(i) + "]"));
    }
  });

  apply_section(root, "propagation", {"method", "tolerance", "step_cap", "krylov_dim", "max_steps"},
                [&](const YAML::Node& p) {
                  if (p["method"]) {
                    try {
                      cfg.propagation.method = parse_propagation_method(scalar<std::string>(p["method"], "propagation.method"));
                    } catch (const ValidationError& e) {
                      throw ConfigError("propagation.method", e.what(), p["method"].Mark());
                    }
                  }
                  if (p["tolerance"]) cfg.propagation.tolerance = positive(p["tolerance"], "propagation.tolerance");
                  if (p["step_cap"]) cfg.propagation.step_cap = positive(p["step_cap"], "propagation.step_cap");
                  if (p["krylov_dim"]) cfg.propagation.krylov_dim = static_cast<int>(count(p["krylov_dim"], "propagation.krylov_dim"));
                  if (p["max_steps"]) cfg.propagation.max_steps = count(p["max_steps"], "propagation.max_steps");
                });

  apply_section(root, "evolve", {"state", "times"}, [&](const YAML::Node& e) {
    if (e["state"]) cfg.evolve_state = count(e["state"], "evolve.state");
    if (e["times"]) cfg.evolve_times = number_list(e["times"], "evolve.times");
  });

  apply_section(root, "waveops",
                {"method", "time_grid", "window", "tol", "eps_sequence", "adiabatic_tol", "nodes_per_panel",
                 "isometry_tol", "intertwining_tol", "agreement_tol", "rank_tol"},
                [&](const YAML::Node& w) {
                  if (w["method"]) {
                    cfg.wave_method = scalar<std::string>(w["method"], "waveops.method");
                    if (cfg.wave_method != "time-plateau" && cfg.wave_method != "adiabatic" && cfg.wave_method != "both")
                      throw ConfigError("waveops.method", "must be time-plateau, adiabatic or both", w["method"].Mark());
                  }
                  if (w["time_grid"]) cfg.time_grid = time_list(w["time_grid"], "waveops.time_grid");
                  if (w["window"]) cfg.window = count(w["window"], "waveops.window");
                  if (w["tol"]) cfg.plateau_tol = positive(w["tol"], "waveops.tol");
                  if (w["eps_sequence"]) cfg.eps_sequence = number_list(w["eps_sequence"], "waveops.eps_sequence");
                  if (w["adiabatic_tol"]) cfg.adiabatic_tol = positive(w["adiabatic_tol"], "waveops.adiabatic_tol");
                  if (w["nodes_per_panel"]) cfg.nodes_per_panel = count(w["nodes_per_panel"], "waveops.nodes_per_panel");
                  if (w["isometry_tol"]) cfg.isometry_tol = positive(w["isometry_tol"], "waveops.isometry_tol");
                  if (w["intertwining_tol"]) cfg.intertwining_tol = positive(w["intertwining_tol"], "waveops.intertwining_tol");
                  if (w["agreement_tol"]) cfg.agreement_tol = positive(w["agreement_tol"], "waveops.agreement_tol");
                  if (w["rank_tol"]) cfg.rank_tol = positive(w["rank_tol"], "waveops.rank_tol");
                  if (cfg.window < 2) throw ConfigError("waveops.window", "must be at least 2", w["window"].Mark());
                });

  apply_section(root, "smatrix", {"damping", "channel", "unitarity_tol", "consistency_tol"}, [&](const YAML::Node& s) {
    if (s["damping"] && !(s["damping"].IsScalar() && s["damping"].Scalar() == "auto"))
      cfg.damping = positive(s["damping"], "smatrix.damping");
    if (s["channel"]) cfg.damping_channel = count(s["channel"], "smatrix.channel");
    if (s["unitarity_tol"]) cfg.unitarity_tol = positive(s["unitarity_tol"], "smatrix.unitarity_tol");
    if (s["consistency_tol"]) cfg.consistency_tol = positive(s["consistency_tol"], "smatrix.consistency_tol");
  });

  apply_section(root, "dyson", {"order", "t", "t0", "nodes", "quadrature_tol", "symmetrized_tol"},
                [&](const YAML::Node& d) {
                  if (d["order"]) cfg.dyson_order = static_cast<int>(count(d["order"], "dyson.order"));
                  if (d["t"]) cfg.dyson_t = scalar<double>(d["t"], "dyson.t");
                  if (d["t0"]) cfg.dyson_t0 = scalar<double>(d["t0"], "dyson.t0");
                  if (d["nodes"]) cfg.dyson_nodes = count(d["nodes"], "dyson.nodes");
                  if (d["quadrature_tol"]) cfg.dyson_quadrature_tol = positive(d["quadrature_tol"], "dyson.quadrature_tol");
                  if (d["symmetrized_tol"]) cfg.dyson_symmetrized_tol = positive(d["symmetrized_tol"], "dyson.symmetrized_tol");
                  if (cfg.dyson_t < cfg.dyson_t0) throw ConfigError("dyson.t", "must satisfy t >= t0", d.Mark());
                });

  apply_section(root, "converge",
                {"ranks", "regulators", "eps", "observables", "swapped_order", "horizon"}, [&](const YAML::Node& c) {
                  if (c["ranks"]) cfg.ranks = index_list(c["ranks"], "converge.ranks");
                  if (const auto r = c["regulators"]) {
                    if (!r.IsSequence() || r.size() == 0) throw ConfigError("converge.regulators", "expected a nonempty list", r.Mark());
                    for (std::size_t i = 0; i < r.size(); ++i) {
                      const std::string f = "converge.regulators[" + std::to_string(i) + "]";
                      check_keys(r[i], f, {"cutoff", "spacing"});
                      if (!r[i]["cutoff"] || !r[i]["spacing"]) throw ConfigError(f, "needs cutoff and spacing", r[i].Mark());
                      cfg.regulators.push_back({positive(r[i]["cutoff"], f + ".cutoff"), positive(r[i]["spacing"], f + ".spacing")});
                    }
                  }
                  if (c["eps"]) cfg.converge_eps = positive(c["eps"], "converge.eps");
                  if (const auto o = c["observables"]) {
                    if (!o.IsSequence() || o.size() == 0) throw ConfigError("converge.observables", "expected a nonempty list", o.Mark());
                    for (std::size_t i = 0; i < o.size(); ++i) {
                      const std::string f = "converge.observables[" + std::to_string(i) + "]";
                      ObservableConfig oc;
                      if (o[i].IsScalar()) {
                        oc.kind = scalar<std::string>(o[i], f);
                      } else {
                        check_keys(o[i], f, {"kind", "out", "in"});
                        if (!o[i]["kind"]) throw ConfigError(f + ".kind", "required", o[i].Mark());
                        oc.kind = scalar<std::string>(o[i]["kind"], f + ".kind");
                        if (o[i]["out"]) oc.out = count(o[i]["out"], f + ".out");
                        if (o[i]["in"]) oc.in = count(o[i]["in"], f + ".in");
                      }
                      static const std::set<std::string> kinds{"s_element", "ground_energy", "intertwining_defect",
                                                               "isometry_defect"};
                      if (!kinds.count(oc.kind))
                        throw ConfigError(f + ".kind", "unknown observable '" + oc.kind + "'", o[i].Mark());
                      cfg.observables.push_back(oc);
                    }
                  }
                  if (c["swapped_order"]) cfg.swapped_order = scalar<bool>(c["swapped_order"], "converge.swapped_order");
                  if (const auto h = c["horizon"]) {
                    check_keys(h, "converge.horizon", {"time_grid", "tol", "window", "states"});
                    if (h["time_grid"]) cfg.horizon_grid = time_list(h["time_grid"], "converge.horizon.time_grid");
                    if (h["tol"]) cfg.horizon_tol = positive(h["tol"], "converge.horizon.tol");
                    if (h["window"]) cfg.horizon_window = count(h["window"], "converge.horizon.window");
                    if (h["states"]) cfg.horizon_states = index_list(h["states"], "converge.horizon.states");
                  }
                });

  apply_section(root, "output", {"directory", "dense_limit"}, [&](const YAML::Node& o) {
    if (o["directory"]) cfg.output_directory = scalar<std::string>(o["directory"], "output.directory");
    if (o["dense_limit"]) cfg.dense_limit = count(o["dense_limit"], "output.dense_limit");
  });
  if (root["workers"]) cfg.workers = std::max<std::size_t>(1, count(root["workers"], "workers"));

  if (cfg.time_grid.empty())
    for (int i = 1; i <= 100; ++i) cfg.time_grid.push_back(i);
  if (cfg.horizon_grid.empty()) cfg.horizon_grid = cfg.time_grid;
  if (cfg.regulators.empty()) cfg.regulators.push_back({cfg.grid.cutoff, cfg.grid.spacing});
  if (cfg.observables.empty())
    cfg.observables = {{"s_element", 1, 1}, {"ground_energy", 1, 1}, {"intertwining_defect", 1, 1}};
  for (std::size_t i = 0; i < cfg.eps_sequence.size(); ++i)
    if (!(cfg.eps_sequence[i] > 0.0) || (i > 0 && !(cfg.eps_sequence[i] < cfg.eps_sequence[i - 1])))
      throw ValidationError("waveops.eps_sequence", "must be positive and strictly decreasing");
  return cfg;
}

inline RunConfig parse_config_string(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("config", "parse error: " + e.msg, e.mark);
  }
  if (!root || root.IsNull()) throw ValidationError("config", "empty configuration");
  return parse_config_node(root);
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("config", "file not found: " + path.string());
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::ParserException& e) {
    throw ConfigError("config", "parse error in " + path.string() + ": " + e.msg, e.mark);
  }
  if (!root || root.IsNull()) throw ValidationError("config", "empty configuration");
  auto cfg = parse_config_node(root);
  cfg.source_path = path.string();
  return cfg;
}

/// Applies one "stage=value" tolerance override.
inline void apply_tolerance_override(RunConfig& cfg, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ValidationError("--tol", "expected stage=value, got '" + spec + "'");
  const std::string stage = spec.substr(0, eq);
  double v = 0.0;
  try {
    std::size_t used = 0;
    v = std::stod(spec.substr(eq + 1), &used);
    if (used != spec.size() - eq - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ValidationError("--tol", "cannot parse value in '" + spec + "'");
  }
  if (!(v > 0.0)) throw ValidationError("--tol " + stage, "must be strictly positive");
  if (stage == "propagation")
    cfg.propagation.tolerance = v;
  else if (stage == "waveops")
    cfg.plateau_tol = v;
  else if (stage == "adiabatic")
    cfg.adiabatic_tol = v;
  else if (stage == "smatrix")
    cfg.unitarity_tol = v;
  else if (stage == "dyson")
    cfg.dyson_quadrature_tol = v;
  else if (stage == "converge")
    cfg.converge_eps = v;
  else if (stage == "horizon")
    cfg.horizon_tol = v;
  else
    throw ValidationError("--tol", "unknown stage '" + stage +
                                       "' (propagation, waveops, adiabatic, smatrix, dyson, converge, horizon)");
}

/// Parses "phi+ phi+ b- ..." into legs (+ raises, - lowers).
inline std::vector<Leg> parse_legs(const std::string& text, const ParticleSystem& sys, const std::string& field) {
  std::vector<Leg> legs;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    if (pos >= text.size()) break;
    std::size_t end = pos;
    while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
    std::string tok = text.substr(pos, end - pos);
    pos = end;
    if (tok.size() < 2 || (tok.back() != '+' && tok.back() != '-'))
      throw ValidationError(field, "leg '" + tok + "' must end in + (raise) or - (lower)");
    const auto kind = tok.back() == '+' ? LadderKind::raise : LadderKind::lower;
    tok.pop_back();
    legs.push_back({sys.index_of(tok), kind});
  }
  if (legs.empty()) throw ValidationError(field, "no legs");
  return legs;
}

inline std::vector<Vertex> build_vertices(const VertexConfig& vc, const ParticleSystem& sys, const std::string& field) {
  if (vc.builtin == "phi3") return phi_power_vertices(sys, vc.particle, 3, vc.coupling);
  if (vc.builtin == "phi4") return phi_power_vertices(sys, vc.particle, 4, vc.coupling);
  if (vc.builtin == "mass_counterterm") return mass_counterterm_vertices(sys, vc.particle, vc.coupling);
  if (vc.builtin == "yukawa") return yukawa_vertices(sys, vc.fermion, vc.scalar, vc.coupling);
  Vertex v;
  v.name = vc.name;
  v.legs = parse_legs(vc.legs, sys, field + ".legs");
  v.coupling = vc.coupling;
  v.momentum_conserving = vc.momentum_conserving;
  if (vc.kernel_type == "constant") {
    v.kernel = [c = vc.kernel_value](const FockBasis&, std::span<const std::size_t>) { return c; };
  } else if (vc.kernel_type == "relativistic") {
    const double power = static_cast<double>(v.legs.size());
    v.kernel = [c = vc.kernel_value, power](const FockBasis& b, std::span<const std::size_t> orbs) {
      return c * std::pow(detail::box_volume(b), 1.0 - 0.5 * power) * detail::relativistic_factor(b, orbs);
    };
  } else {
    for (const auto& e : vc.table)
      if (e.momenta.size() != v.legs.size())
        throw ValidationError(field + ".kernel.entries", "each entry needs one momentum per leg");
    std::map<std::vector<LatticeMomentum>, cplx> table;
    for (const auto& e : vc.table) table[e.momenta] = e.value;
    v.kernel = [table](const FockBasis& b, std::span<const std::size_t> orbs) -> cplx {
      std::vector<LatticeMomentum> key;
      for (auto o : orbs) key.push_back(b.grid().points()[b.orbitals()[o].point]);
      auto it = table.find(key);
      return it == table.end() ? cplx{} : it->second;
    };
  }
  validate_vertex(v, sys);
  std::vector<Vertex> out{v};
  if (vc.hermitian_conjugate) out.push_back(hermitian_conjugate(v));
  return out;
}

inline InteractionSpec build_interaction(const RunConfig& cfg, const ParticleSystem& sys) {
  InteractionSpec spec;
  spec.couplings = cfg.couplings;
  for (std::size_t i = 0; i < cfg.vertices.size(); ++i)
    for (auto& v : build_vertices(cfg.vertices[i], sys, "interaction.vertices[" + std::to_string(i) + "]"))
      spec.vertices.push_back(std::move(v));
  for (std::size_t i = 0; i < cfg.counterterms.size(); ++i)
    for (auto& v : build_vertices(cfg.counterterms[i], sys, "interaction.counterterms[" + std::to_string(i) + "]")) {
      if (v.legs.size() != 2) throw ValidationError("interaction.counterterms", "counterterms must be quadratic");
      spec.counterterms.push_back(std::move(v));
    }
  return spec;
}

}  // namespace fockscat
