// Command-line front end: solve | converge | adapt | shishkin |
// extract-surface | check, all driven by a flat key = value config file.
// Exit codes: 0 success, 1 numeric failure, 2 usage error.
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "tracefem/runner.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  int threads = 0;  // 0 = keep config value
  tracefem::CommandIO io;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration file")->required();
  cmd->add_option("--threads", args.threads, "worker threads (overrides config)");
  cmd->add_option("--dump-grid", args.io.dump_grid, "write the octree as legacy VTK");
  cmd->add_option("--dump-surface", args.io.dump_surface,
                  "write the surface triangulation as legacy VTK");
  cmd->add_option("--dump-matrix", args.io.dump_matrix,
                  "write the assembled system in MatrixMarket format");
  cmd->add_option("--report", args.io.report_path, "write the report CSV to this path");
}

tracefem::RunConfig load(const CommonArgs& args) {
  tracefem::RunConfig cfg = tracefem::load_config(args.config_path);
  if (args.threads > 0) {
    cfg.threads = args.threads;
    cfg.assembly.threads = args.threads;
    cfg.estimator.threads = args.threads;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trace finite element solver for PDEs on implicit surfaces"};
  app.require_subcommand(1);

  CommonArgs solve_args, converge_args, adapt_args, shishkin_args, extract_args, check_args;
  int converge_levels = 0;
  int adapt_steps = -1;

  CLI::App* solve = app.add_subcommand("solve", "single solve on the uniform grid");
  add_common(solve, solve_args);

  CLI::App* converge = app.add_subcommand("converge", "uniform convergence sweep");
  add_common(converge, converge_args);
  converge->add_option("--levels", converge_levels, "number of refinement levels");

  CLI::App* adapt = app.add_subcommand("adapt", "adaptive refinement loop");
  add_common(adapt, adapt_args);
  adapt->add_option("--steps", adapt_steps, "number of adaptive steps");

  CLI::App* shishkin = app.add_subcommand("shishkin", "layer-fitted mesh study");
  add_common(shishkin, shishkin_args);

  CLI::App* extract = app.add_subcommand("extract-surface", "extract the triangulated surface");
  add_common(extract, extract_args);

  CLI::App* check = app.add_subcommand("check", "run the invariant audit suite");
  add_common(check, check_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (solve->parsed()) return tracefem::cmd_solve(load(solve_args), solve_args.io);
    if (converge->parsed()) {
      tracefem::RunConfig cfg = load(converge_args);
      if (converge_levels > 0) cfg.converge_levels = converge_levels;
      return tracefem::cmd_converge(cfg, converge_args.io);
    }
    if (adapt->parsed()) {
      tracefem::RunConfig cfg = load(adapt_args);
      if (adapt_steps >= 0) cfg.adapt_steps = adapt_steps;
      return tracefem::cmd_adapt(cfg, adapt_args.io);
    }
    if (shishkin->parsed()) return tracefem::cmd_shishkin(load(shishkin_args), shishkin_args.io);
    if (extract->parsed())
      return tracefem::cmd_extract_surface(load(extract_args), extract_args.io);
    if (check->parsed()) return tracefem::cmd_check(load(check_args), check_args.io);
  } catch (const tracefem::Error& e) {
    std::cerr << e.what() << "\n";
    return tracefem::exit_code_for(e);
  }
  return 2;
}
