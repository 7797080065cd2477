// uccd: solve, compare and sweep uncertain control co-design problems.

#include <CLI11.hpp>

#include "uccd/uccd.hpp"

namespace {

void add_run_options(CLI::App* cmd, uccd::RunOptions& o) {
  cmd->add_option("problem", o.path, "Problem document (JSON)")->required();
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--formulation", o.formulation, "det, se, scc, pr-w, pr-c, wcr, fe or pcc");
  cmd->add_option("--structure", o.structure, "olsc or olmc");
  cmd->add_option("--samples", o.samples, "Scenario sample count");
  cmd->add_option("--seed", o.seed, "Sampling seed");
  cmd->add_option("--alpha-w", o.alpha_w, "Mean weight in the mean/std objective");
  cmd->add_option("--k-s", o.k_s, "Std multiplier in robust constraints");
  cmd->add_option("--p-f", o.p_f, "Target failure probability");
  cmd->add_option("--mc-samples", o.mc_samples, "Fresh Monte Carlo samples for reported risk");
  cmd->add_option("--max-outer-iters", o.max_outer_iters);
  cmd->add_option("--max-inner-iters", o.max_inner_iters);
  cmd->add_option("--constraint-tol", o.constraint_tol);
  cmd->add_option("--gradient-tol", o.gradient_tol);
  cmd->add_option("--penalty-init", o.penalty_init);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertain control co-design toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", uccd::kToolVersion);

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a problem document");
  validate->add_option("problem", validate_path, "Problem document (JSON)")->required();

  uccd::RunOptions solve_opts;
  auto* solve = app.add_subcommand("solve", "Compile and solve one formulation");
  add_run_options(solve, solve_opts);

  uccd::RunOptions pareto_opts;
  int alpha_grid = 11;
  auto* pareto = app.add_subcommand("pareto", "Sweep the mean/std weight");
  add_run_options(pareto, pareto_opts);
  pareto->add_option("--alpha-grid", alpha_grid, "Number of alpha_w values")->check(CLI::Range(2, 1000));

  uccd::RunOptions compare_opts;
  std::vector<std::string> formulations;
  auto* compare = app.add_subcommand("compare", "Solve several formulations and cross-evaluate risk");
  add_run_options(compare, compare_opts);
  compare->add_option("--formulations", formulations, "Formulations to compare")->delimiter(',')->required();

  uccd::RunOptions oracle_opts;
  int resolution = 41;
  auto* oracle = app.add_subcommand("oracle", "Cross-check the solver against a grid scan");
  add_run_options(oracle, oracle_opts);
  oracle->add_option("--resolution", resolution, "Grid points per dimension")->check(CLI::Range(3, 1001));

  uccd::LqrDemoOptions lqr;
  auto* lqr_demo = app.add_subcommand("lqr-demo", "Closed-loop LQR ensemble for a scalar plant");
  lqr_demo->add_option("--a", lqr.a);
  lqr_demo->add_option("--b", lqr.b);
  lqr_demo->add_option("--q", lqr.q);
  lqr_demo->add_option("--r", lqr.r);
  lqr_demo->add_option("--noise", lqr.noise, "Process noise intensity");
  lqr_demo->add_option("--x0", lqr.x0, "Initial state mean");
  lqr_demo->add_option("--x0-std", lqr.x0_std, "Initial state std");
  lqr_demo->add_option("--paths", lqr.paths);
  lqr_demo->add_option("--seed", lqr.seed);
  lqr_demo->add_option("--nodes", lqr.nodes);
  lqr_demo->add_option("--out", lqr.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : uccd::kExitValidation;
  }

  if (*validate) return uccd::cmd_validate(validate_path);
  if (*solve) return uccd::cmd_solve(solve_opts);
  if (*pareto) return uccd::cmd_pareto(pareto_opts, alpha_grid);
  if (*compare) return uccd::cmd_compare(compare_opts, formulations);
  if (*oracle) return uccd::cmd_oracle(oracle_opts, resolution);
  if (*lqr_demo) return uccd::cmd_lqr_demo(lqr);
  return uccd::kExitInternal;
}
