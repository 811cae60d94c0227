#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Quasihomogeneous n-body problem: central configurations, collision manifold, homothetic orbits"};
  app.require_subcommand(1);
  std::string config;
  std::string out = ".";
  for (const auto& [name, fn] : qh::cli::commands()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON run configuration (schema 1)")->required();
    sub->add_option("--out", out, "output directory");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return qh::cli::kExitValidation;
  }
  return qh::cli::run_command(app.get_subcommands().front()->get_name(), config, out);
}
