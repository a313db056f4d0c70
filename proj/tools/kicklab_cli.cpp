#include <CLI11.hpp>

#include <iostream>

#include "config.hpp"
#include "kicklab/errors.hpp"
#include "runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"kicklab: experiments on randomly kicked dissipative systems"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
  run->add_option("--config", config_path, "JSON experiment configuration")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Master seed (overrides the config)");
  run->add_option("--out", out, "Output directory (overrides the config)");
  run->add_option("--workers", workers, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    auto config = kicklab::cli::load_config(config_path);
    if (seed) config.seed = *seed;
    if (out) config.output = *out;
    if (workers) config.workers = *workers;
    std::string message;
    const int code = kicklab::cli::run(config, &message);
    if (code != 0) {
      std::cerr << "kicklab: " << message << '\n';
    } else {
      std::cout << "kicklab: wrote " << config.output << '\n';
    }
    return code;
  } catch (const kicklab::Error& err) {
    std::cerr << "kicklab: " << err.what() << '\n';
    return kicklab::exit_code_for(err.kind());
  }
}
