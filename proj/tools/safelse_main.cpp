#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "safelse/config.hpp"
#include "safelse/experiments.hpp"

// safelse <config.json> [--seed N] [--out DIR] [--jobs K]
//
// Exit code 0 iff the experiment finished with no certificate violations and
// no unexpected errors. Expected, recorded events (baseline overflow or
// divergence) do not fail the process.

int main(int argc, char** argv) {
  CLI::App app{"Safe-KL / rescaled-SoftPlus experiment harness"};
  std::string config_path;
  std::int64_t seed_override = -1;
  std::string out_override;
  int jobs = 1;
  app.add_option("config", config_path, "JSON experiment configuration")
      ->required();
  app.add_option("--seed", seed_override, "override the config seed");
  app.add_option("--out", out_override, "override the output directory");
  app.add_option("--jobs", jobs, "parallel run cells")->check(CLI::Range(1, 256));
  CLI11_PARSE(app, argc, argv);

  try {
    safelse::cli::ExperimentConfig config =
        safelse::cli::parse_config(config_path);
    if (seed_override >= 0) {
      config.seed = static_cast<std::uint64_t>(seed_override);
    }
    if (!out_override.empty()) {
      config.output_dir = out_override;
    }
    const safelse::cli::ExperimentResult result =
        safelse::cli::run_experiment(config, jobs);

    long events = 0;
    for (const auto& record : result.records) {
      events += static_cast<long>(record.trajectory.events.size());
    }
    std::cout << "experiment: " << config.experiment << '\n'
              << "runs: " << result.records.size() << '\n'
              << "recorded events: " << events << '\n'
              << "certificate violations: " << result.total_violations << '\n'
              << "output: " << config.output_dir << '\n';
    if (result.total_violations > 0 || result.unexpected_errors) {
      return 1;
    }
    return 0;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
}
