#include <CLI11.hpp>

#include "gpcbf/cli_io.hpp"

int main(int argc, char** argv) {
  CLI::App app{"adaptive sparse-GP safety filtering simulator"};
  app.require_subcommand(1);

  gpcbf::CommandPaths paths;
  std::uint64_t seed = 0;
  bool have_seed = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", paths.config, "flat key = value config file");
    cmd->add_option("--out", paths.out_dir, "output directory");
    cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
      have_seed = true;
    });
  };

  auto* train = app.add_subcommand("train", "offline hyperparameter training");
  add_common(train);
  train->add_option("--snapshot", paths.snapshot, "snapshot output path");

  auto* run = app.add_subcommand("run", "closed-loop episode from a snapshot");
  add_common(run);
  run->add_option("--snapshot", paths.snapshot, "trained snapshot to load");

  auto* compare = app.add_subcommand("compare", "method comparison table");
  add_common(compare);
  compare->add_flag("--strict", paths.strict, "nonzero exit on failed ordering");

  CLI11_PARSE(app, argc, argv);
  if (have_seed) paths.seed_override = seed;

  if (train->parsed()) return gpcbf::cmd_train(paths);
  if (run->parsed()) return gpcbf::cmd_run(paths);
  return gpcbf::cmd_compare(paths);
}
