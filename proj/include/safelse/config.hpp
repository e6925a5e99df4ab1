#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

// Experiment configuration: JSON on disk, strict validation (unknown keys are
// rejected, violations name the offending key), defaults filled on parse.
// List-valued hyperparameters are grid axes; the harness takes their
// Cartesian product.

namespace safelse::cli {

struct BoundsConfig {
  int instances = 100;
  int max_atoms = 16;
};

struct CvarConfig {
  int instances = 100;
  int max_atoms = 16;
};

struct KlDroExpConfig {
  double lambda = 1.0;
  double rho = 1e-3;
  std::vector<long> batch_sizes{10};
  std::vector<double> stepsizes{1e-6, 1e-5, 1e-4};
  double momentum = 0.9;
  int epochs = 30;
  long n = 2000;
  long d = 8;
  std::string dataset_csv;  // empty: use the bundled synthetic generator
  std::vector<std::string> modes{"baseline", "safe"};
};

struct UotDroExpConfig {
  double lambda = 0.5;
  double beta = 2.0;
  double rho = 0.1;
  int inner_iters = 5;
  double inner_stepsize = 0.0;  // 0: default 1/(2 lambda)
  double cost_scale = 1.0;
  std::vector<double> stepsizes{0.01, 0.03, 0.1};
  long iters = 20000;
  long eval_every = 1000;
  long train_size = 300;
  long val_size = 300;
  long test_size = 2000;
  double flip_rate = 0.25;
  std::vector<std::string> modes{"erm", "baseline", "safe"};
  // After the grid, rerun the baseline at this multiple of the safe mode's
  // best stepsize (0 disables the extra cell).
  double baseline_stepsize_factor = 10.0;
};

struct EotExpConfig {
  double epsilon = 0.01;
  std::vector<double> rhos{0.1};
  std::vector<double> Cs{1.0};
  std::vector<double> bandwidths{10.0};
  long iters = 20000;
  long test_size = 1000;
  int reference_runs = 5;
  double reference_C = 1.0;
  std::vector<std::string> modes{"dual_baseline", "safe_semidual"};
};

struct OverflowDemoConfig {
  double z = 7.1;
  double epsilon = 0.01;
};

struct ExperimentConfig {
  std::string experiment;  // bounds | cvar | dro-kl | dro-uot | eot | overflow-demo
  std::uint64_t seed = 1;
  int repetitions = 1;
  std::string output_dir = "out";

  BoundsConfig bounds;
  CvarConfig cvar;
  KlDroExpConfig dro_kl;
  UotDroExpConfig dro_uot;
  EotExpConfig eot;
  OverflowDemoConfig overflow_demo;
};

/// Parse and validate a JSON config file. Unknown keys and constraint
/// violations throw std::runtime_error naming the key.
ExperimentConfig parse_config(const std::string& path);

/// Parse from an in-memory JSON document (same validation).
ExperimentConfig parse_config_json(const nlohmann::json& doc);

/// Canonical JSON with every default materialized; parse(serialize(c)) == c.
nlohmann::json serialize_config(const ExperimentConfig& config);

/// FNV-1a over the canonical serialization; stable under key reordering in
/// the source file.
std::uint64_t config_hash(const ExperimentConfig& config);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace safelse::cli
