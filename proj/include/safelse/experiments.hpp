#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "safelse/config.hpp"
#include "safelse/optim.hpp"

// Experiment harness: run orchestration, persistence of trajectories,
// summaries and certificate tables, and plot-ready CSV emission.
//
// Stream allocation (documented contract): grid cell c, repetition r runs on
// stream id c * 1000003 + r, so a single-cell experiment's repetition r uses
// stream id r. Per-repetition datasets use streams 900000000 + r and shared
// fixtures use stream 999999999.

namespace safelse::cli {

struct RunRecord {
  std::string run_id;
  std::string label;  // mode or suite name
  std::uint64_t stream_id = 0;
  std::map<std::string, double> params;  // grid point values
  Trajectory trajectory;
  std::map<std::string, double> final_metrics;
  long violations = 0;
  double wall_seconds = 0.0;  // written to metadata.json only
};

struct CertificateRow {
  int repetition = 0;
  std::string suite;
  std::string case_id;
  double lower = 0.0;
  double witness = 0.0;
  double upper = 0.0;
  bool ok = true;
};

struct ExperimentResult {
  std::vector<RunRecord> records;
  std::vector<CertificateRow> certificates;
  long total_violations = 0;
  bool unexpected_errors = false;
};

/// Dispatch on config.experiment, write output_dir/{trajectories.csv,
/// summary.jsonl, metadata.json} plus experiment-specific files
/// (certificates.csv, gap_trajectories.csv, overflow_table.csv, plot files).
/// jobs > 1 runs independent (cell, repetition) pairs in parallel; outputs
/// are byte-identical regardless of jobs.
ExperimentResult run_experiment(const ExperimentConfig& config, int jobs = 1);

/// Long-format CSV <out_base>.csv with (iteration, value, run_id, label) and
/// <out_base>_agg.csv with per-iteration mean/std across records
/// (population convention, documented in the header row). Throws when
/// records are empty or none carries the metric (the message lists the
/// available metrics).
void emit_plot_data(const std::vector<RunRecord>& records,
                    const std::string& metric, const std::string& out_base);

/// Fixed-format double rendering used for every CSV cell ("%.17g").
std::string format_double(double value);

}  // namespace safelse::cli
