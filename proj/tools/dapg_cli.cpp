// Command-line front end: train / eval / gen-demos.

#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "dapg/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"demonstration-accelerated natural policy gradient trainer"};
  app.require_subcommand(1);

  std::string config_path;
  std::string checkpoint_path;
  std::string out_dir = "demos";
  std::string env_id;
  std::vector<std::string> distractors;
  int rollouts = 75;
  int count = 25;

  auto* train_cmd = app.add_subcommand("train", "run the full training loop");
  train_cmd->add_option("--config", config_path, "run configuration file")->required();

  auto* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint under visual distractors");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "policy checkpoint")->required();
  eval_cmd->add_option("--config", config_path, "run configuration file")->required();
  eval_cmd->add_option("--distractors", distractors,
                       "distractor modes (none always evaluated first)");
  eval_cmd->add_option("--rollouts", rollouts, "episodes per mode");

  std::string frames_out;
  auto* gen_cmd = app.add_subcommand("gen-demos", "record scripted-expert demonstrations");
  gen_cmd->add_option("--config", config_path, "run configuration file");
  gen_cmd->add_option("--env", env_id, "environment id (overrides config)");
  gen_cmd->add_option("--count", count, "number of successful demonstrations");
  gen_cmd->add_option("--out", out_dir, "output directory")->required();
  gen_cmd->add_option("--dump-frames", frames_out,
                      "also write raw frames as a feature table (calibration input)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (train_cmd->parsed()) return dapg::run_train(config_path, std::cout, std::cerr);

  if (eval_cmd->parsed())
    return dapg::run_eval(checkpoint_path, config_path, distractors, rollouts, std::cout,
                          std::cerr);

  // gen-demos
  dapg::RunConfig config;
  try {
    if (!config_path.empty()) config = dapg::load_config(config_path);
    if (!env_id.empty()) {
      if (env_id == "point_reacher") config.env.id = dapg::EnvId::point_reacher;
      else if (env_id == "pendulum") config.env.id = dapg::EnvId::pendulum;
      else throw dapg::ConfigError("unknown environment '" + env_id + "'");
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  return dapg::run_gen_demos(config, count, out_dir, std::cout, std::cerr, frames_out);
}
