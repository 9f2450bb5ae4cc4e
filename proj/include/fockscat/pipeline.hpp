#pragma once

// Stage orchestration for the command-line front end: builds the model,
// runs the requested study, writes CSV tables, a text report and a manifest.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "fockscat/config.hpp"
#include "fockscat/convergence.hpp"
#include "fockscat/dyson.hpp"
#include "fockscat/scattering.hpp"
#include "json.hpp"

#ifndef FOCKSCAT_VERSION
#define FOCKSCAT_VERSION "unknown"
#endif

namespace fockscat {

inline std::string fmt(double x, int digits = 15) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*e", digits, x);
  return buf;
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("sha256 failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

struct Model {
  ParticleSystem system;
  std::shared_ptr<const FockBasis> basis;
  InteractionSpec spec;
  std::shared_ptr<const RegularizedHamiltonian> hamiltonian;
};

/// Builds the basis and A_{n,r}; a regulator overrides the grid cutoff and
/// spacing, a rank overrides the configured one (clamped to the basis size).
inline Model build_model(const RunConfig& cfg, const RegulatorPoint* regulator = nullptr,
                         std::optional<std::size_t> rank = std::nullopt, std::size_t workers = 1) {
  Model m;
  m.system = build_particle_system(cfg.particles);
  GridSpec gs = cfg.grid;
  if (regulator) {
    gs.cutoff = regulator->cutoff;
    gs.spacing = regulator->spacing;
  }
  ModeGrid grid(m.system, gs);
  m.basis = std::make_shared<const FockBasis>(enumerate_basis(m.system, grid, cfg.basis));
  m.spec = build_interaction(cfg, m.system);
  std::size_t n = rank ? std::min(*rank, m.basis->size()) : cfg.rank.value_or(m.basis->size());
  if (!rank && n > m.basis->size())
    throw ValidationError("interaction.rank", "rank " + std::to_string(n) + " exceeds basis size " +
                                                  std::to_string(m.basis->size()));
  m.hamiltonian = std::make_shared<const RegularizedHamiltonian>(assemble_regularized(m.spec, m.basis, n, workers));
  return m;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  using nlohmann::json;
  json j;
  for (const auto& p : c.particles)
    j["particles"].push_back({{"name", p.name},
                              {"statistics", p.statistics == Statistics::fermion ? "fermion" : "boson"},
                              {"mass", p.mass},
                              {"conjugate", p.conjugate}});
  j["grid"] = {{"dimension", c.grid.dimension}, {"cutoff", c.grid.cutoff}, {"spacing", c.grid.spacing},
               {"internal_labels", c.grid.internal_labels}};
  j["basis"] = {{"n_max_quanta", c.basis.n_max_quanta}, {"hard_limit", c.basis.hard_limit}};
  j["basis"]["energy_cap"] = c.basis.energy_cap ? json(*c.basis.energy_cap) : json(nullptr);
  j["interaction"]["rank"] = c.rank ? json(*c.rank) : json("basis size");
  j["interaction"]["couplings"] = c.couplings;
  for (const char* list : {"vertices", "counterterms"}) {
    const auto& src = std::string(list) == "vertices" ? c.vertices : c.counterterms;
    j["interaction"][list] = json::array();
    for (const auto& v : src) {
      json jv;
      if (!v.builtin.empty()) {
        jv = {{"builtin", v.builtin}, {"coupling", v.coupling}};
        if (!v.particle.empty()) jv["particle"] = v.particle;
        if (!v.fermion.empty()) jv["fermion"] = v.fermion;
        if (!v.scalar.empty()) jv["scalar"] = v.scalar;
      } else {
        jv = {{"name", v.name}, {"legs", v.legs}, {"kernel_type", v.kernel_type}, {"coupling", v.coupling},
              {"momentum_conserving", v.momentum_conserving}, {"hermitian_conjugate", v.hermitian_conjugate},
              {"kernel_value", {v.kernel_value.real(), v.kernel_value.imag()}}, {"table_entries", v.table.size()}};
      }
      j["interaction"][list].push_back(jv);
    }
  }
  j["propagation"] = {{"method", to_string(c.propagation.method)},
                      {"tolerance", c.propagation.tolerance},
                      {"krylov_dim", c.propagation.krylov_dim},
                      {"max_steps", c.propagation.max_steps}};
  j["propagation"]["step_cap"] = std::isfinite(c.propagation.step_cap) ? json(c.propagation.step_cap) : json("none");
  j["evolve"] = {{"state", c.evolve_state}, {"times", c.evolve_times}};
  j["waveops"] = {{"method", c.wave_method},        {"time_grid", c.time_grid},
                  {"window", c.window},             {"tol", c.plateau_tol},
                  {"eps_sequence", c.eps_sequence}, {"adiabatic_tol", c.adiabatic_tol},
                  {"nodes_per_panel", c.nodes_per_panel}, {"isometry_tol", c.isometry_tol},
                  {"intertwining_tol", c.intertwining_tol}, {"agreement_tol", c.agreement_tol},
                  {"rank_tol", c.rank_tol}};
  j["smatrix"] = {{"channel", c.damping_channel}, {"unitarity_tol", c.unitarity_tol},
                  {"consistency_tol", c.consistency_tol}};
  j["smatrix"]["damping"] = c.damping ? json(*c.damping) : json("auto");
  j["dyson"] = {{"order", c.dyson_order}, {"t", c.dyson_t}, {"t0", c.dyson_t0}, {"nodes", c.dyson_nodes},
                {"quadrature_tol", c.dyson_quadrature_tol}, {"symmetrized_tol", c.dyson_symmetrized_tol}};
  json regs = json::array();
  for (const auto& r : c.regulators) regs.push_back(json{{"cutoff", r.cutoff}, {"spacing", r.spacing}});
  json obs = json::array();
  for (const auto& o : c.observables) obs.push_back(json{{"kind", o.kind}, {"out", o.out}, {"in", o.in}});
  j["converge"] = {{"ranks", c.ranks},
                   {"regulators", regs},
                   {"eps", c.converge_eps},
                   {"observables", obs},
                   {"swapped_order", c.swapped_order},
                   {"horizon",
                    {{"time_grid", c.horizon_grid},
                     {"tol", c.horizon_tol},
                     {"window", c.horizon_window},
                     {"states", c.horizon_states}}}};
  j["output"] = {{"directory", c.output_directory}, {"dense_limit", c.dense_limit}};
  j["workers"] = c.workers;
  return j;
}

struct StageTiming {
  std::string name;
  double seconds = 0.0;
};

struct OutputFile {
  std::string name;
  std::uintmax_t bytes = 0;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  nlohmann::json config_echo;
  std::map<std::string, std::string> versions;
  std::vector<StageTiming> stages;
  std::vector<OutputFile> outputs;
  bool certified = true;
  std::vector<std::string> failed_certifications;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config_echo;
    j["versions"] = versions;
    for (const auto& s : stages) j["stages"].push_back({{"name", s.name}, {"seconds", s.seconds}});
    for (const auto& o : outputs) j["outputs"].push_back({{"file", o.name}, {"bytes", o.bytes}, {"sha256", o.sha256}});
    j["certified"] = certified;
    j["failed_certifications"] = failed_certifications;
    return j;
  }
};

/// Collects report lines, tables and certification outcomes for one run.
class RunContext {
 public:
  RunContext(RunConfig cfg, std::filesystem::path out_dir) : cfg_(std::move(cfg)), dir_(std::move(out_dir)) {}

  const RunConfig& config() const { return cfg_; }
  RunManifest& manifest() { return manifest_; }

  void line(const std::string& s) { report_ += s + "\n"; }
  void section(const std::string& s) { report_ += "\n[" + s + "]\n"; }
  void kv(const std::string& k, const std::string& v) { report_ += "  " + k + " = " + v + "\n"; }
  void kv(const std::string& k, double v) { kv(k, fmt(v, 6)); }

  void certify(const std::string& what, bool ok, const std::string& detail = "") {
    report_ += std::string("  certification ") + (ok ? "PASS " : "FAIL ") + what + (detail.empty() ? "" : " (" + detail + ")") + "\n";
    if (!ok) {
      manifest_.certified = false;
      manifest_.failed_certifications.push_back(what);
    }
  }

  void write(const std::string& name, const std::string& content) {
    std::filesystem::create_directories(dir_);
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) throw Error("cannot write " + (dir_ / name).string());
    f << content;
    files_.emplace_back(name, content);
  }

  template <class F>
  auto timed(const std::string& stage, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    struct Guard {
      RunManifest& m;
      std::string name;
      std::chrono::steady_clock::time_point start;
      ~Guard() {
        m.stages.push_back(
            {name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()});
      }
    } guard{manifest_, stage, start};
    try {
      return body();
    } catch (const std::exception& e) {
      throw Error("stage '" + stage + "' failed: " + e.what());
    }
  }

  void finish() {
    write("report.txt", report_);
    for (const auto& [name, content] : files_) manifest_.outputs.push_back({name, content.size(), sha256_hex(content)});
    std::filesystem::create_directories(dir_);
    std::ofstream f(dir_ / "manifest.json", std::ios::binary);
    f << manifest_.to_json().dump(2) << "\n";
  }

 private:
  RunConfig cfg_;
  std::filesystem::path dir_;
  RunManifest manifest_;
  std::string report_;
  std::vector<std::pair<std::string, std::string>> files_;
};

namespace stages {

inline std::string matrix_csv(const DenseMatrix& m) {
  std::string s = "row,col,re,im\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(r, c) == cplx{}) continue;
      s += std::to_string(r) + "," + std::to_string(c) + "," + fmt(m(r, c).real()) + "," + fmt(m(r, c).imag()) + "\n";
    }
  return s;
}

inline Model build(RunContext& ctx) {
  const auto& cfg = ctx.config();
  Model m = ctx.timed("build", [&] { return build_model(cfg, nullptr, std::nullopt, cfg.workers); });
  const auto& b = *m.basis;
  const auto& h = *m.hamiltonian;
  std::string csv = "index,energy,quanta,state\n";
  for (std::size_t i = 0; i < b.size(); ++i)
    csv += std::to_string(i) + "," + fmt(b.energy(i)) + "," + std::to_string(b.state(i).total_quanta()) + ",\"" +
           b.describe(b.state(i)) + "\"\n";
  ctx.write("basis.csv", csv);
  ctx.section("build");
  ctx.kv("particles", std::to_string(m.system.size()));
  ctx.kv("grid_points", std::to_string(b.grid().size()));
  ctx.kv("orbitals", std::to_string(b.orbitals().size()));
  ctx.kv("basis_size", std::to_string(b.size()));
  ctx.kv("interaction_rank", std::to_string(h.interaction_rank()));
  ctx.kv("interaction_vertices", std::to_string(m.spec.vertices.size() + m.spec.counterterms.size()));
  ctx.kv("nonzeros", std::to_string(h.full().nonZeros()));
  const double herm = hermiticity_defect(h.full());
  ctx.kv("hermiticity_defect", herm);
  ctx.certify("hermiticity", herm <= 1e-12 * std::max(1.0, max_abs(h.full())));
  if (h.dimension() <= cfg.dense_limit) {
    const auto gs = ground_state_check(h, cfg.dense_limit);
    ctx.kv("vacuum_expectation", gs.vacuum_expectation);
    ctx.kv("vacuum_defect", gs.vacuum_defect);
    ctx.kv("lowest_eigenvalue", gs.lowest_eigenvalue);
    ctx.kv("vacuum_is_eigenvector", gs.vacuum_is_eigenvector ? "yes" : "no");
  }
  return m;
}

inline void evolve(RunContext& ctx, const Model& m) {
  const auto& cfg = ctx.config();
  const auto& h = *m.hamiltonian;
  if (cfg.evolve_state >= h.dimension()) throw ValidationError("evolve.state", "index beyond basis size");
  ctx.timed("evolve", [&] {
    Propagator prop(h.full(), cfg.propagation);
    const bool oracle = h.dimension() <= cfg.dense_limit;
    const DenseMatrix hd = to_dense(h.full());
    Vector v0 = Vector::Zero(static_cast<Eigen::Index>(h.dimension()));
    v0(static_cast<Eigen::Index>(cfg.evolve_state)) = 1.0;
    const double scale = std::max(1.0, max_abs(h.full()));
    std::string csv = "time,norm,energy,survival_probability,oracle_error\n";
    double worst_norm = 0.0, worst_ratio = 0.0;
    const double e0 = (v0.adjoint() * (h.full() * v0))(0).real();
    double worst_energy = 0.0;
    for (double t : cfg.evolve_times) {
      Vector vt = prop.evolve(v0, t);
      const double norm = vt.norm();
      const double energy = (vt.adjoint() * (h.full() * vt))(0).real();
      const double surv = std::norm(vt(static_cast<Eigen::Index>(cfg.evolve_state)));
      double err = std::numeric_limits<double>::quiet_NaN();
      if (oracle) {
        err = max_abs(vt - dense_oracle_exponential(hd, t, cfg.dense_limit) * v0);
        worst_ratio = std::max(worst_ratio, err / std::max(1e-10, cfg.propagation.tolerance * (1.0 + std::abs(t) * scale)));
      }
      worst_norm = std::max(worst_norm, std::abs(norm - 1.0));
      worst_energy = std::max(worst_energy, std::abs(energy - e0) / std::max(1.0, std::abs(e0)));
      csv += fmt(t) + "," + fmt(norm) + "," + fmt(energy) + "," + fmt(surv) + "," + fmt(err) + "\n";
    }
    ctx.write("evolution.csv", csv);
    ctx.section("evolve");
    ctx.kv("method", to_string(cfg.propagation.method));
    ctx.kv("initial_state", std::to_string(cfg.evolve_state));
    ctx.kv("max_norm_deviation", worst_norm);
    ctx.kv("max_relative_energy_drift", worst_energy);
    ctx.certify("norm preservation", worst_norm <= 1e-9);
    ctx.certify("energy conservation", worst_energy <= 1e-8);
    if (oracle) ctx.certify("dense oracle agreement", worst_ratio <= 1.0);
    return 0;
  });
}

struct WaveOutcome {
  std::optional<WaveOperatorResult> plateau_plus, plateau_minus, adiabatic_plus, adiabatic_minus;
  const WaveOperatorResult& plus() const { return plateau_plus ? *plateau_plus : *adiabatic_plus; }
  const WaveOperatorResult& minus() const { return plateau_minus ? *plateau_minus : *adiabatic_minus; }
};

inline WaveOutcome wave_operators(const RunConfig& cfg, const RegularizedHamiltonian& h, std::size_t workers) {
  Propagator prop(h.full(), cfg.propagation);
  WaveOutcome w;
  if (cfg.wave_method != "adiabatic") {
    PlateauOptions po{cfg.window, cfg.plateau_tol, workers, cfg.dense_limit};
    w.plateau_plus = wave_operator_time_plateau(h, prop, Direction::plus, cfg.time_grid, po);
    w.plateau_minus = wave_operator_time_plateau(h, prop, Direction::minus, cfg.time_grid, po);
  }
  if (cfg.wave_method != "time-plateau") {
    AdiabaticOptions ao;
    ao.tol = cfg.adiabatic_tol;
    ao.nodes_per_panel = cfg.nodes_per_panel;
    ao.workers = workers;
    ao.dense_limit = cfg.dense_limit;
    w.adiabatic_plus = wave_operator_adiabatic(h, prop, Direction::plus, cfg.eps_sequence, ao);
    w.adiabatic_minus = wave_operator_adiabatic(h, prop, Direction::minus, cfg.eps_sequence, ao);
  }
  return w;
}

inline WaveOutcome waveops(RunContext& ctx, const Model& m) {
  const auto& cfg = ctx.config();
  const auto& h = *m.hamiltonian;
  WaveOutcome w = ctx.timed("waveops", [&] { return wave_operators(cfg, h, cfg.workers); });
  ctx.section("waveops");
  ctx.kv("ac_subspace", "orthogonal complement of the free vacuum");
  auto describe = [&](const std::string& tag, const WaveOperatorResult& r, double tol) {
    ctx.kv(tag + ".method", r.method);
    ctx.kv(tag + ".converged", r.converged ? "yes" : "no");
    if (r.method == "time-plateau") {
      ctx.kv(tag + ".plateau_time", r.plateau_time);
      ctx.kv(tag + ".final_drift", r.final_drift);
      ctx.kv(tag + ".recurrence", r.recurrence_detected ? "detected at t=" + fmt(r.recurrence_time, 6) : "none");
    } else {
      ctx.kv(tag + ".quadrature_error", r.quadrature_error);
      ctx.kv(tag + ".extrapolation_disagreement", r.extrapolation_disagreement);
    }
    ctx.kv(tag + ".isometry_defect", r.isometry_defect);
    ctx.kv(tag + ".intertwining_defect", r.intertwining_defect);
    ctx.certify(tag + " converged", r.converged);
    ctx.certify(tag + " isometry", r.isometry_defect <= cfg.isometry_tol,
                fmt(r.isometry_defect, 3) + " <= " + fmt(cfg.isometry_tol, 3));
    ctx.certify(tag + " intertwining", r.intertwining_defect <= cfg.intertwining_tol,
                fmt(r.intertwining_defect, 3) + " <= " + fmt(cfg.intertwining_tol, 3));
    (void)tol;
  };
  if (w.plateau_plus) {
    describe("plateau_plus", *w.plateau_plus, cfg.plateau_tol);
    describe("plateau_minus", *w.plateau_minus, cfg.plateau_tol);
    std::string csv = "time,drift_plus,drift_minus\n";
    for (std::size_t k = 0; k < cfg.time_grid.size(); ++k)
      csv += fmt(cfg.time_grid[k]) + "," + fmt(w.plateau_plus->drift_history[k]) + "," +
             fmt(w.plateau_minus->drift_history[k]) + "\n";
    ctx.write("plateau_drift.csv", csv);
  }
  if (w.adiabatic_plus) {
    describe("adiabatic_plus", *w.adiabatic_plus, cfg.adiabatic_tol);
    describe("adiabatic_minus", *w.adiabatic_minus, cfg.adiabatic_tol);
  }
  if (w.plateau_plus && w.adiabatic_plus) {
    const double agree = std::max(max_abs(w.plateau_plus->w - w.adiabatic_plus->w),
                                  max_abs(w.plateau_minus->w - w.adiabatic_minus->w));
    ctx.kv("method_agreement", agree);
    ctx.certify("method agreement", agree <= cfg.agreement_tol, fmt(agree, 3) + " <= " + fmt(cfg.agreement_tol, 3));
  }
  const auto rp = range_projection(w.plus(), cfg.rank_tol);
  const auto rm = range_projection(w.minus(), cfg.rank_tol);
  ctx.kv("range_rank_plus", std::to_string(rp.rank));
  ctx.kv("range_rank_minus", std::to_string(rm.rank));
  const auto angles = principal_angles(rp, rm);
  ctx.kv("largest_principal_angle", angles.empty() ? 0.0 : angles.back());
  ctx.write("wave_plus.csv", matrix_csv(w.plus().w));
  ctx.write("wave_minus.csv", matrix_csv(w.minus().w));
  return w;
}

inline void smatrix(RunContext& ctx, const Model& m, const WaveOutcome& w) {
  const auto& cfg = ctx.config();
  const auto& h = *m.hamiltonian;
  ctx.timed("smatrix", [&] {
    const auto rep = scattering_operator(w.plus(), w.minus());
    const auto& e = h.basis().energies();
    std::string chan = "in,out,energy_in,energy_out,probability\n";
    for (Eigen::Index v = 0; v < rep.s_matrix.cols(); ++v)
      for (Eigen::Index u = 0; u < rep.s_matrix.rows(); ++u) {
        const double p = rep.channel_probabilities(u, v);
        if (p == 0.0) continue;
        chan += std::to_string(v) + "," + std::to_string(u) + "," + fmt(e[static_cast<std::size_t>(v)]) + "," +
                fmt(e[static_cast<std::size_t>(u)]) + "," + fmt(p) + "\n";
      }
    ctx.write("smatrix.csv", matrix_csv(rep.s_matrix));
    ctx.write("channels.csv", chan);
    ctx.section("smatrix");
    for (const auto& warn : rep.warnings) ctx.kv("warning", warn);
    ctx.kv("vacuum_persistence", fmt(rep.vacuum_persistence.real(), 6) + " " + fmt(rep.vacuum_persistence.imag(), 6) + "i");
    ctx.kv("unitarity_defect", rep.unitarity_defect);
    double pmax = 0.0;
    for (Eigen::Index i = 0; i < rep.channel_probabilities.size(); ++i) pmax = std::max(pmax, rep.channel_probabilities(i));
    ctx.kv("max_channel_probability", pmax);
    ctx.certify("vacuum persistence", rep.vacuum_persistence == cplx{1.0, 0.0});
    ctx.certify("unitarity", rep.unitarity_defect <= cfg.unitarity_tol,
                fmt(rep.unitarity_defect, 3) + " <= " + fmt(cfg.unitarity_tol, 3));
    ctx.certify("channel probabilities bounded", pmax <= 1.0 + cfg.unitarity_tol);

    if (h.interaction_rank() > 0 && e.size() > 1) {
      InteractionPictureGenerator g(h);
      const double eps = cfg.damping.value_or(default_damping(e, std::min(cfg.damping_channel, e.size() - 1)));
      const auto damped = damped_interaction_propagator(g, eps);
      DenseMatrix u = damped.u;
      const auto n = u.rows();
      const double diff = n > 1 ? max_abs(DenseMatrix(u.bottomRightCorner(n - 1, n - 1) -
                                                      rep.s_matrix.bottomRightCorner(n - 1, n - 1)))
                                : 0.0;
      ctx.kv("damping_eps", eps);
      ctx.kv("damped_horizon", damped.horizon);
      ctx.kv("damped_u_vs_s", diff);
      ctx.certify("damped propagator consistency", diff <= cfg.consistency_tol,
                  fmt(diff, 3) + " <= " + fmt(cfg.consistency_tol, 3));
    }
    return 0;
  });
}

inline void dyson(RunContext& ctx, const Model& m) {
  const auto& cfg = ctx.config();
  const auto& h = *m.hamiltonian;
  ctx.timed("dyson", [&] {
    InteractionPictureGenerator g(h);
    DysonQuadrature q;
    q.nodes_per_level = cfg.dyson_nodes;
    q.tolerance = cfg.dyson_quadrature_tol;
    q.workers = cfg.workers;
    const auto exp = time_ordered_exponential(g, cfg.dyson_t, cfg.dyson_t0, cfg.dyson_order, q);
    Propagator prop(h.full(), cfg.propagation);
    const DenseMatrix u = propagator_interaction_picture(h, prop, cfg.dyson_t, cfg.dyson_t0, cfg.workers);
    std::string csv = "order,term_max,partial_sum_error\n";
    for (int k = 0; k <= cfg.dyson_order; ++k)
      csv += std::to_string(k) + "," + fmt(max_abs(exp.terms[static_cast<std::size_t>(k)])) + "," +
             fmt(max_abs(u - exp.partial_sums[static_cast<std::size_t>(k)])) + "\n";
    ctx.write("dyson_orders.csv", csv);
    ctx.section("dyson");
    ctx.kv("t", cfg.dyson_t);
    ctx.kv("t0", cfg.dyson_t0);
    ctx.kv("order", std::to_string(cfg.dyson_order));
    ctx.kv("nodes_per_level", std::to_string(exp.nodes_per_level));
    ctx.kv("generator", "finite-rank interaction block in the interaction picture");
    const double unit = max_abs(u.adjoint() * u - DenseMatrix::Identity(u.rows(), u.cols()));
    ctx.kv("propagator_unitarity_defect", unit);
    ctx.certify("propagator unitarity", unit <= 1e-9);
    if (exp.spot_order > 0) {
      ctx.kv("simplex_vs_cube_order", std::to_string(exp.spot_order));
      ctx.kv("simplex_vs_cube_difference", exp.symmetrized_difference);
      ctx.certify("simplex and cube forms agree", exp.symmetrized_difference <= cfg.dyson_symmetrized_tol);
    }
    return 0;
  });
}

/// Per (regulator, rank) observables, each from its own Hamiltonian.
struct GridEvaluation {
  double ground_energy = std::numeric_limits<double>::quiet_NaN();
  double intertwining = std::numeric_limits<double>::quiet_NaN();
  double isometry = std::numeric_limits<double>::quiet_NaN();
  DenseMatrix s;
  std::string error;
};

inline GridEvaluation evaluate_grid_point(const RunConfig& cfg, const RegulatorPoint& r, std::size_t rank) {
  GridEvaluation ev;
  try {
    Model m = build_model(cfg, &r, rank, 1);
    const auto& h = *m.hamiltonian;
    bool need_w = false, need_s = false, need_ground = false;
    for (const auto& o : cfg.observables) {
      if (o.kind == "ground_energy") need_ground = true;
      if (o.kind == "s_element") need_s = true;
      if (o.kind == "intertwining_defect" || o.kind == "isometry_defect") need_w = true;
    }
    if (need_ground) {
      if (h.dimension() > cfg.dense_limit) throw ValidationError("converge", "ground energy above dense limit");
      Eigen::SelfAdjointEigenSolver<DenseMatrix> es(to_dense(h.full()), Eigen::EigenvaluesOnly);
      ev.ground_energy = es.eigenvalues()(0);
    }
    if (need_w || need_s) {
      RunConfig c = cfg;
      c.wave_method = "time-plateau";
      const auto w = wave_operators(c, h, 1);
      ev.intertwining = w.plus().intertwining_defect;
      ev.isometry = w.plus().isometry_defect;
      if (need_s) ev.s = scattering_operator(w.plus(), w.minus()).s_matrix;
    }
  } catch (const std::exception& e) {
    ev.error = e.what();
  }
  return ev;
}

inline void converge(RunContext& ctx, const Model& m) {
  const auto& cfg = ctx.config();
  // Without declared ranks: thirds of the configured basis.
  std::vector<std::size_t> ranks = cfg.ranks;
  if (ranks.empty()) {
    const std::size_t n = m.basis->size();
    if (n < 3) throw ValidationError("converge.ranks", "basis too small for a default rank grid");
    ranks = {(n + 2) / 3, (2 * n + 2) / 3, n};
  }
  if (ranks.size() < 3) throw ValidationError("converge.ranks", "need at least 3 ranks");
  ctx.timed("converge", [&] {
    const std::size_t nr = cfg.regulators.size(), nn = ranks.size();
    std::vector<GridEvaluation> table(nr * nn);
    parallel_for(table.size(), cfg.workers, [&](std::size_t i) {
      table[i] = evaluate_grid_point(cfg, cfg.regulators[i / nn], ranks[i % nn]);
    });
    auto lookup = [&](const RegulatorPoint& r, std::size_t rank) -> const GridEvaluation& {
      for (std::size_t a = 0; a < nr; ++a)
        if (cfg.regulators[a].cutoff == r.cutoff && cfg.regulators[a].spacing == r.spacing)
          for (std::size_t b = 0; b < nn; ++b)
            if (ranks[b] == rank) return table[a * nn + b];
      throw Error("grid point not evaluated");
    };
    std::vector<ObservableFamily> fams;
    for (const auto& o : cfg.observables) {
      ObservableFamily f;
      f.name = o.kind == "s_element" ? "s_element(" + std::to_string(o.out) + "," + std::to_string(o.in) + ")" : o.kind;
      f.evaluate = [&, o](std::size_t rank, const RegulatorPoint& r) -> cplx {
        const auto& ev = lookup(r, rank);
        if (!ev.error.empty()) throw Error(ev.error);
        if (o.kind == "ground_energy") return ev.ground_energy;
        if (o.kind == "intertwining_defect") return ev.intertwining;
        if (o.kind == "isometry_defect") return ev.isometry;
        if (static_cast<Eigen::Index>(std::max(o.out, o.in)) >= ev.s.rows())
          throw ValidationError("converge.observables", "S-matrix index beyond basis size");
        return ev.s(static_cast<Eigen::Index>(o.out), static_cast<Eigen::Index>(o.in));
      };
      fams.push_back(std::move(f));
    }
    const auto rep = double_limit_study(fams, cfg.regulators, ranks, cfg.converge_eps,
                                        StudyOptions{1, cfg.swapped_order});

    std::string values = "family,cutoff,spacing,rank,re,im\n";
    std::string plateaus = "family,cutoff,spacing,plateau_rank,tail_spread,failures\n";
    for (const auto& fo : rep.families)
      for (const auto& p : fo.per_regulator) {
        for (std::size_t i = 0; i < p.ranks.size(); ++i)
          values += fo.name + "," + fmt(p.regulator.cutoff) + "," + fmt(p.regulator.spacing) + "," +
                    std::to_string(p.ranks[i]) + "," + fmt(p.values[i].real()) + "," + fmt(p.values[i].imag()) + "\n";
        plateaus += fo.name + "," + fmt(p.regulator.cutoff) + "," + fmt(p.regulator.spacing) + "," +
                    (p.plateau_rank ? std::to_string(*p.plateau_rank) : std::string("none")) + "," +
                    fmt(p.tail_spread) + "," + std::to_string(p.failures.size()) + "\n";
      }
    ctx.write("convergence_values.csv", values);
    ctx.write("plateaus.csv", plateaus);

    ctx.section("converge");
    ctx.kv("eps", cfg.converge_eps);
    ctx.kv("scope", rep.scope_note);
    ctx.kv("h_star", rep.h_star ? std::to_string(*rep.h_star) : "none");
    for (const auto& fo : rep.families) {
      ctx.kv(fo.name + ".outer_estimate", fmt(fo.outer_estimate.real(), 10) + " " + fmt(fo.outer_estimate.imag(), 10) + "i");
      ctx.kv(fo.name + ".uncertainty", fo.uncertainty);
      ctx.kv(fo.name + ".extrapolation_order", std::to_string(fo.extrapolation_order));
      ctx.kv(fo.name + ".dominance", fo.dominance ? "yes" : "no");
      if (fo.order_discrepancy) ctx.kv(fo.name + ".swapped_order_discrepancy", *fo.order_discrepancy);
      for (const auto& p : fo.per_regulator)
        for (const auto& f : p.failures) ctx.kv(fo.name + ".failure", f);
    }
    for (const auto& q : rep.quarantined) ctx.kv("quarantined", q);
    ctx.certify("double limit", rep.certified);

    // Horizon on the configured instance.
    const auto& h = *m.hamiltonian;
    Propagator prop(h.full(), cfg.propagation);
    std::vector<std::size_t> idx = cfg.horizon_states;
    if (idx.empty())
      for (std::size_t i = 1; i < h.dimension(); ++i) idx.push_back(i);
    std::vector<Vector> states;
    for (auto i : idx) {
      if (i >= h.dimension()) throw ValidationError("converge.horizon.states", "index beyond basis size");
      states.push_back(Vector::Unit(static_cast<Eigen::Index>(h.dimension()), static_cast<Eigen::Index>(i)));
    }
    const auto hz = horizon_study(h, prop, states, cfg.horizon_grid, cfg.horizon_tol, cfg.horizon_window, cfg.workers);
    std::string hcsv = "state,t_plus,t_minus,t_u,window_drift,recurrence_time\n";
    auto opt = [](const std::optional<double>& x) { return x ? fmt(*x) : std::string("none"); };
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& s = hz.states[i];
      hcsv += std::to_string(idx[i]) + "," + opt(s.t_plus) + "," + opt(s.t_minus) + "," + opt(s.t_u) + "," +
              fmt(s.window_drift) + "," + (s.recurrence ? fmt(s.recurrence_time) : std::string("none")) + "\n";
    }
    ctx.write("horizon.csv", hcsv);
    ctx.kv("horizon.tol", cfg.horizon_tol);
    ctx.kv("horizon.global_T", hz.global_t ? fmt(*hz.global_t, 6) : std::string("none"));
    ctx.certify("horizon found", hz.found);
    return 0;
  });
}

}  // namespace stages

inline const std::vector<std::string>& pipeline_commands() {
  static const std::vector<std::string> c{"build", "evolve", "waveops", "smatrix", "dyson", "converge"};
  return c;
}

/// Runs `command` and its prerequisites; writes outputs under `out_dir`.
inline RunManifest run_pipeline(const RunConfig& cfg, const std::string& command,
                                std::optional<std::filesystem::path> out_dir = std::nullopt) {
  const auto& cmds = pipeline_commands();
  if (std::find(cmds.begin(), cmds.end(), command) == cmds.end())
    throw ValidationError("command", "unknown command '" + command + "'");
  RunContext ctx(cfg, out_dir.value_or(cfg.output_directory));
  auto& man = ctx.manifest();
  man.command = command;
  man.config_echo = config_to_json(cfg);
  man.versions = {{"fockscat", FOCKSCAT_VERSION},
                  {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                std::to_string(EIGEN_MINOR_VERSION)},
                  {"compiler", __VERSION__}};
  ctx.line("fockscat " + std::string(FOCKSCAT_VERSION) + " " + command);
  const Model m = stages::build(ctx);
  if (command == "evolve") stages::evolve(ctx, m);
  if (command == "waveops" || command == "smatrix") {
    const auto w = stages::waveops(ctx, m);
    if (command == "smatrix") stages::smatrix(ctx, m, w);
  }
  if (command == "dyson") stages::dyson(ctx, m);
  if (command == "converge") stages::converge(ctx, m);
  ctx.line("");
  ctx.line(std::string("certified = ") + (man.certified ? "yes" : "no"));
  ctx.finish();
  return man;
}

}  // namespace fockscat
