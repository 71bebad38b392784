#include <iostream>

#include "CLI11.hpp"
#include "reltraj/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Trajectory prediction with latent-GMM OOD detection and error-regression uncertainty"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the master seed");
    sub->add_option("--out", out_dir, "override the output directory");
  };
  auto* generate = app.add_subcommand("generate", "generate the synthetic dataset");
  auto* train = app.add_subcommand("train", "phase 1: train encoder and predictor");
  auto* fit = app.add_subcommand("fit-reliability", "phase 2: fit the latent GMM and the error regressor");
  auto* evaluate = app.add_subcommand("evaluate", "evaluate on the eval split and write reports");
  auto* all = app.add_subcommand("all", "run the full pipeline");
  for (auto* sub : {generate, train, fit, evaluate, all}) add_common(sub);

  CLI11_PARSE(app, argc, argv);

  try {
    reltraj::RunConfig config = reltraj::load_run_config(config_path);
    if (seed) config.seed = *seed;
    if (out_dir) config.out_dir = *out_dir;
    config.sync();
    config.validate();

    if (generate->parsed()) reltraj::cmd_generate(config, std::cerr);
    if (train->parsed()) reltraj::cmd_train(config, std::cerr);
    if (fit->parsed()) reltraj::cmd_fit_reliability(config, std::cerr);
    if (evaluate->parsed()) reltraj::cmd_evaluate(config, std::cout, std::cerr);
    if (all->parsed()) reltraj::cmd_all(config, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
