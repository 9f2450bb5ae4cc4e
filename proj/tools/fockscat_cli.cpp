// Command-line front end: fockscat <build|evolve|waveops|smatrix|dyson|converge> --config FILE

#include <iostream>

#include "CLI11.hpp"
#include "fockscat/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Truncated Fock-space scattering laboratory"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::string out_dir;
  std::size_t workers = 0;
  std::vector<std::string> tol_overrides;

  for (const auto& name : fockscat::pipeline_commands()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " stage and its prerequisites");
    sub->add_option("--config", config_path, "configuration file (YAML)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory (overrides output.directory)");
    sub->add_option("--workers", workers, "worker threads (overrides workers)")->check(CLI::PositiveNumber);
    sub->add_option("--tol", tol_overrides, "tolerance override stage=value, repeatable");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    auto cfg = fockscat::parse_config(config_path);
    if (workers > 0) cfg.workers = workers;
    for (const auto& t : tol_overrides) fockscat::apply_tolerance_override(cfg, t);
    std::optional<std::filesystem::path> out;
    if (!out_dir.empty()) out = out_dir;
    const auto manifest = fockscat::run_pipeline(cfg, command, out);
    const auto dir = out ? *out : std::filesystem::path(cfg.output_directory);
    std::cout << command << ": " << manifest.outputs.size() << " files in " << dir.string() << "\n";
    if (!manifest.certified) {
      for (const auto& f : manifest.failed_certifications) std::cout << "  certification failed: " << f << "\n";
      return 1;
    }
    std::cout << "  all certifications passed\n";
    return 0;
  } catch (const fockscat::ValidationError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
