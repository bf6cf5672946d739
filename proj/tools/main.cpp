#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "metafl/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"deterministic simulator for meta federated learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(metafl::kVersion));

  metafl::CliOptions opt;
  std::string config_path;
  std::vector<std::string> metrics_files;
  double target = 0.0;

  CLI::App* run = app.add_subcommand(
      "run", "train with the configured engines and write metrics.csv");
  run->add_option("config", config_path,
                  "JSON config, or the manifest.json of a previous run")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--out", opt.out_override,
                  "output directory (overrides output.dir)");
  run->add_option("--workers", opt.workers,
                  "worker threads (overrides workers; results do not depend on it)");
  run->add_flag("--force", opt.force, "overwrite existing output files");

  CLI::App* cmp = app.add_subcommand(
      "compare", "summarize two or more metrics.csv files side by side");
  cmp->add_option("metrics", metrics_files, "metrics.csv files")
      ->required()
      ->expected(-1)
      ->check(CLI::ExistingFile);
  CLI::Option* target_opt =
      cmp->add_option("--target", target,
                      "accuracy threshold for the rounds-to-target column "
                      "(default: 0.9 x best final mean)");

  CLI::App* bnd = app.add_subcommand(
      "bounds", "evaluate the convergence bound formulas for a config");
  bnd->add_option("config", config_path, "JSON config")
      ->required()
      ->check(CLI::ExistingFile);
  bnd->add_option("--out", opt.out_override,
                  "output directory (overrides output.dir)");
  bnd->add_flag("--force", opt.force, "overwrite an existing bounds.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (target_opt->count() > 0) opt.target = target;

  if (run->parsed()) return metafl::cmd_run(config_path, opt, std::cout, std::cerr);
  if (cmp->parsed())
    return metafl::cmd_compare(metrics_files, opt, std::cout, std::cerr);
  return metafl::cmd_bounds(config_path, opt, std::cout, std::cerr);
}
