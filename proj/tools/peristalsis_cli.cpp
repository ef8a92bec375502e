// Command-line driver: solve | forward | adjoint | gradient-check | optimize.

#include "peristalsis/cli_io.hpp"

#include <CLI11.hpp>

int main(int argc, char** argv) {
  CLI::App app{"Periodic Stokes peristalsis solver with adjoint shape optimization"};
  app.require_subcommand(1);
  std::string config;
  peri::CommandOptions opt;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"solve", "One instantaneous solve in the initial configuration"},
      {"forward", "Forward particle evolution and functional values"},
      {"adjoint", "Forward run, adjoint recursions and analytic gradients"},
      {"gradient-check", "Analytic gradients against central differences"},
      {"optimize", "Augmented-Lagrangian shape optimization"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "Run configuration (JSON)")->required();
    sub->add_option("--out", opt.out, "Output directory (overrides the config)");
    sub->add_option("--threads", opt.threads, "Worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
    sub->add_option("--eta", opt.eta, "Finite-difference step (default 1e-4)")->check(CLI::PositiveNumber);
    sub->add_flag("--verbose", opt.verbose, "Per-solve records and progress");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : peri::kExitConfig;
  }
  return peri::run_command(app.get_subcommands().front()->get_name(), config, opt);
}
