#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "twogroups/cli.hpp"

namespace {

using twogroups::cli::Command;
using twogroups::cli::RunConfig;

void common_flags(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--out", cfg.out, "Output directory")->default_str(".");
  sub->add_option("--seed", cfg.seed, "Random seed")->default_val(0);
  sub->add_option("--threads", cfg.threads, "Worker threads (0 = all cores)")->default_val(0);
  sub->add_flag("--force", cfg.force, "Overwrite existing output files");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-groups empirical Bayes: fit, select, moderate, simulate, coverage"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(twogroups::io::tool_version));
  RunConfig cfg;
  std::string tail = "upper";

  auto* fit = app.add_subcommand("fit", "Estimate p0, the null and the effect distribution from a z panel");
  fit->add_option("--input", cfg.input, "Panel CSV/TSV (id,z[,variance|n])")->required();
  fit->add_option("--method", cfg.method, "parametric | npmle")->default_val("parametric");
  fit->add_option("--null", cfg.null_kind, "theoretical | empirical")->default_val("theoretical");
  fit->add_option("--center-fraction", cfg.center_fraction, "Central fraction used by the empirical null")
      ->default_val(0.5);
  fit->add_option("--grid", cfg.grid, "NPMLE support: start:end:step or a comma list")->default_val("0:5:0.1");
  fit->add_option("--fixed-p0", cfg.fixed_p0, "Hold p0 fixed (NPMLE)");
  fit->add_flag("--allow-negative-mean", cfg.allow_negative_mean, "Let the parametric effect mean go below 0");
  common_flags(fit, cfg);

  auto* select = app.add_subcommand("select", "Select z >= threshold and rank by exceedance probability");
  select->add_option("--input", cfg.input, "Panel CSV/TSV")->required();
  select->add_option("--model", cfg.model, "Model config (key = value)")->required();
  select->add_option("--threshold", cfg.threshold_z, "Selection threshold on z")->default_val(3.5);
  select->add_option("--k", cfg.ks, "Effect threshold(s); the first one ranks")->delimiter(',');
  select->add_option("--tail", tail, "upper | lower | two")->default_val("upper");
  common_flags(select, cfg);

  auto* moderate = app.add_subcommand("moderate", "Moderated two-sample statistics from an expression matrix");
  moderate->add_option("--input", cfg.input, "Matrix TSV (first row group labels, first column ids)")->required();
  common_flags(moderate, cfg);

  auto* simulate = app.add_subcommand("simulate", "Draw a panel from a two-groups model");
  simulate->add_option("--model", cfg.model, "Model config (key = value)")->required();
  simulate->add_option("--units", cfg.units, "Number of units")->default_val(3000);
  simulate->add_option("--variances", cfg.variances, "One variance, or one per unit")->delimiter(',');
  common_flags(simulate, cfg);

  auto* coverage = app.add_subcommand("coverage", "Frequentist coverage of raw, plug-in and adjusted intervals");
  coverage->add_option("--config", cfg.config, "Study config (model keys plus n, variances, methods, ...)");
  coverage->add_option("--input", cfg.config, "Alias for --config");
  coverage->add_option("--model", cfg.config, "Alias for --config");
  coverage->add_option("--nominal", cfg.nominal, "Nominal coverage")->default_val(0.95);
  coverage->add_option("--replications", cfg.replications, "Monte Carlo replications")->default_val(2000);
  common_flags(coverage, cfg);

  auto* reproduce = app.add_subcommand("reproduce-paper", "Recompute the worked example and report pass/fail");
  reproduce->add_option("--k", cfg.ks, "Only report averaged exceedance at these k")->delimiter(',');
  reproduce->add_option("--out", cfg.out, "Also write reproduce.csv here");
  reproduce->add_option("--seed", cfg.seed, "Unused; recorded in the header")->default_val(0);
  reproduce->add_option("--threads", cfg.threads, "Unused")->default_val(0);
  reproduce->add_flag("--force", cfg.force, "Overwrite existing output files");
  // Accepted for uniformity with the other subcommands.
  reproduce->add_option("--input", cfg.input, "Unused");
  reproduce->add_option("--model", cfg.model, "Unused");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (fit->parsed()) cfg.command = Command::fit;
  else if (select->parsed()) cfg.command = Command::select;
  else if (moderate->parsed()) cfg.command = Command::moderate;
  else if (simulate->parsed()) cfg.command = Command::simulate;
  else if (coverage->parsed()) cfg.command = Command::coverage;
  else cfg.command = Command::reproduce_paper;

  try {
    cfg.tail = twogroups::cli::tail_from_string(tail);
    const auto result = twogroups::cli::run(cfg);
    std::cout << result.text;
    for (const auto& f : result.files) std::cout << "wrote " << f << '\n';
    return result.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return twogroups::cli::exit_code_for(e);
  }
}
