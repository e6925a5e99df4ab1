#include "safelse/experiments.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "safelse/dro.hpp"
#include "safelse/eot.hpp"
#include "safelse/measure.hpp"
#include "safelse/rng.hpp"
#include "safelse/safe_lse.hpp"

namespace safelse::cli {

using nlohmann::json;

std::string format_double(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kCellStride = 1000003ULL;
constexpr std::uint64_t kDatasetStreamBase = 900000000ULL;
constexpr std::uint64_t kFixtureStream = 999999999ULL;

double wall_seconds_since(
    const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

// ---- randomized instances shared by the certificate suites -----------------

struct Instance {
  PotentialValues phi;
  DiscreteMeasure mu;

  Instance(PotentialValues p, DiscreteMeasure m)
      : phi(std::move(p)), mu(std::move(m)) {}
};

Instance random_instance(RngStream& rng, int max_atoms, double span = 5.0) {
  const auto n = static_cast<Eigen::Index>(rng.uniform_int(max_atoms) + 1);
  Vector phi(n), w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    phi[i] = span * (2.0 * rng.uniform() - 1.0);
    w[i] = rng.uniform() + 1e-3;
  }
  w /= w.sum();
  return {PotentialValues(phi), DiscreteMeasure(w)};
}

// ---- certificate suites (the `bounds` experiment) ---------------------------

struct SuiteOutcome {
  std::vector<CertificateRow> rows;
  long violations = 0;
};

void push_row(SuiteOutcome& out, int rep, const std::string& suite,
              const std::string& case_id, double lower, double witness,
              double upper, double slack = 1e-9) {
  const bool ok = lower - slack <= witness && witness <= upper + slack;
  out.rows.push_back({rep, suite, case_id, lower, witness, upper, ok});
  if (!ok) ++out.violations;
}

SuiteOutcome corollary1_suite(int rep, int instances, RngStream& rng) {
  SuiteOutcome out;
  const double rhos[] = {0.03, 0.1, 0.3, 1.0};
  for (int k = 0; k < instances; ++k) {
    const auto n = static_cast<Eigen::Index>(rng.uniform_int(64) + 1);
    Vector a(n);
    for (Eigen::Index i = 0; i < n; ++i) a[i] = 40.0 * rng.uniform() - 20.0;
    const double lse = logsumexp(a);
    for (const double r : rhos) {
      const Rho rho = r == 1.0 ? Rho::bouchard() : Rho(r);
      const double value = safe_logsumexp(a, rho);
      push_row(out, rep, "corollary1", "inst" + std::to_string(k) + "-rho" +
               format_double(r), lse - r, value, lse);
    }
  }
  return out;
}

SuiteOutcome prop1_suite(int rep, int instances, int max_atoms,
                         RngStream& rng) {
  SuiteOutcome out;
  const double rho_grid[] = {0.5, 0.1, 0.01, 0.001};
  for (int k = 0; k < instances; ++k) {
    const Instance inst = random_instance(rng, max_atoms);
    const double f = log_partition(inst.phi, inst.mu);
    // F_rho grows as rho shrinks, staying below F.
    double previous = -std::numeric_limits<double>::infinity();
    for (const double r : rho_grid) {
      const double value =
          safe_log_partition(inst.phi, inst.mu, Rho(r)).value;
      push_row(out, rep, "prop1-monotone",
               "inst" + std::to_string(k) + "-rho" + format_double(r),
               previous, value, f);
      previous = value;
    }
    for (const double r : {0.1, 0.001}) {
      try {
        const BoundCertificate cert = prop1_bounds(inst.phi, inst.mu, Rho(r));
        push_row(out, rep, "prop1-lower",
                 "inst" + std::to_string(k) + "-rho" + format_double(r),
                 cert.lower, cert.witness, cert.upper);
      } catch (const std::runtime_error&) {
        // rho too large for either lower-bound branch: nothing to certify.
      }
    }
  }
  return out;
}

SuiteOutcome conjugacy_suite(int rep, int instances, RngStream& rng) {
  SuiteOutcome out;
  const Eigen::Index grid_points = 1000000;
  for (int k = 0; k < instances; ++k) {
    const double s = 4.0 * rng.uniform() - 2.0;
    const double r = 0.05 + 0.9 * rng.uniform();
    const Rho rho(r);
    double best = -std::numeric_limits<double>::infinity();
    const double cap = 1.0 / r;
    for (Eigen::Index j = 0; j <= grid_points; ++j) {
      const double t = cap * static_cast<double>(j) /
                       static_cast<double>(grid_points);
      best = std::max(best, s * t - f_rho(t, rho));
    }
    const double value = f_rho_star(s, rho);
    push_row(out, rep, "conjugacy", "case" + std::to_string(k), best - 1e-6,
             value, best + 1e-6, 0.0);
  }
  return out;
}

SuiteOutcome lemma4_suite(int rep, RngStream& rng) {
  SuiteOutcome out;
  for (int k = 0; k < 100; ++k) {
    const double r = 0.02 + 0.96 * rng.uniform();
    const Rho rho(r);
    for (int j = 1; j < 100; ++j) {
      const double t = (1.0 / r) * j / 100.0;
      push_row(out, rep, "lemma4-strong-convexity",
               "rho" + format_double(r) + "-t" + std::to_string(j), r,
               f_rho_second(t, rho),
               std::numeric_limits<double>::infinity());
    }
    const double s1 = 60.0 * rng.uniform() - 30.0;
    const double s2 = 60.0 * rng.uniform() - 30.0;
    const double lip = std::abs(sigma_rho(s1, rho) - sigma_rho(s2, rho));
    push_row(out, rep, "lemma4-smoothness", "pair" + std::to_string(k), 0.0,
             lip, std::abs(s1 - s2) / r);
  }
  return out;
}

SuiteOutcome appendix_c_suite(int rep, RngStream& rng) {
  SuiteOutcome out;
  // h(t) = sigma(t) + 2 t sigma'(t) stays below 4/3 on a dense grid.
  for (int j = 0; j <= 10000; ++j) {
    const double t = -50.0 + 100.0 * j / 10000.0;
    const double h = logistic(t) + 2.0 * t * logistic_deriv(t);
    if (j % 500 == 0) {
      push_row(out, rep, "appendixC-h", "t" + std::to_string(j),
               -std::numeric_limits<double>::infinity(), h, 4.0 / 3.0);
    } else if (!(h < 4.0 / 3.0)) {
      push_row(out, rep, "appendixC-h", "t" + std::to_string(j),
               -std::numeric_limits<double>::infinity(), h, 4.0 / 3.0);
    }
  }
  // sigma(x) + 2 sigma'(x)(x - a) <= 2 - a/2 for a <= 0, x >= a.
  for (int k = 0; k < 200; ++k) {
    const double a = -10.0 * rng.uniform();
    const double x = a + 20.0 * rng.uniform();
    const double value = logistic(x) + 2.0 * logistic_deriv(x) * (x - a);
    push_row(out, rep, "appendixC-lemma3", "case" + std::to_string(k),
             -std::numeric_limits<double>::infinity(), value, 2.0 - a / 2.0);
  }
  // Quadratic smoothness certificate and the near-tightness example.
  for (int k = 0; k < 10; ++k) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.uniform_int(4));
    Eigen::MatrixXd basis(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) basis(i, j) = rng.normal();
    }
    const Eigen::MatrixXd A =
        basis * basis.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
    Vector b(d);
    for (Eigen::Index i = 0; i < d; ++i) b[i] = rng.normal();
    const double c = 2.0 * rng.uniform() - 1.0;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    const double L = es.eigenvalues().maxCoeff();
    const Vector x_star = -A.ldlt().solve(b);
    const double f_star = 0.5 * x_star.dot(A * x_star) + b.dot(x_star) + c;
    const double bound =
        f_star >= 0.0 ? (4.0 / 3.0) * L : (4.0 / 3.0 - 0.5 * f_star) * L;
    double worst = 0.0;
    for (int p = 0; p < 100; ++p) {
      Vector x(d);
      for (Eigen::Index i = 0; i < d; ++i) x[i] = 2.0 * rng.normal();
      const double f = 0.5 * x.dot(A * x) + b.dot(x) + c;
      const Vector g = A * x + b;
      const Eigen::MatrixXd hess =
          logistic(f) * A + logistic_deriv(f) * (g * g.transpose());
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> hs(hess);
      worst = std::max(worst, hs.eigenvalues().cwiseAbs().maxCoeff());
    }
    push_row(out, rep, "appendixC-smoothness", "quad" + std::to_string(k),
             -std::numeric_limits<double>::infinity(), worst, bound, 1e-8);
  }
  {
    const double a = 3.0;
    const double f0 = 0.5 * a * a - 0.5 * a * a;  // f(0) for f(x)=(x-a)^2/2 - a^2/2
    const double second =
        logistic(f0) + logistic_deriv(f0) * a * a;
    const double expected = 0.5 + 0.25 * a * a;  // 1/2 - f_*/2
    push_row(out, rep, "appendixC-tightness", "a3", expected - 1e-12, second,
             expected + 1e-12, 0.0);
  }
  return out;
}

SuiteOutcome cvar_suite(int rep, int instances, int max_atoms,
                        RngStream& rng) {
  SuiteOutcome out;
  const double lambdas[] = {0.1, 1.0, 10.0};
  const double rhos[] = {0.1, 0.5};
  for (int k = 0; k < instances; ++k) {
    const Instance inst = random_instance(rng, max_atoms);
    for (const double r : rhos) {
      const Rho rho(r);
      for (const double lambda : lambdas) {
        const BoundCertificate cert =
            cvar_sandwich(inst.phi, inst.mu, rho, lambda);
        push_row(out, rep, "prop2-sandwich",
                 "inst" + std::to_string(k) + "-l" + format_double(lambda) +
                     "-r" + format_double(r),
                 cert.lower, cert.witness, cert.upper);
      }
    }
    // Sorted-tail oracle on uniform weights whenever rho * n is integral.
    const auto n = static_cast<Eigen::Index>(rng.uniform_int(max_atoms) + 1);
    Vector phi(n);
    for (Eigen::Index i = 0; i < n; ++i) phi[i] = 10.0 * rng.uniform() - 5.0;
    const auto top = static_cast<Eigen::Index>(rng.uniform_int(n) + 1);
    const double level = static_cast<double>(top) / static_cast<double>(n);
    if (level >= 1.0) continue;
    Vector sorted = phi;
    std::sort(sorted.data(), sorted.data() + n, std::greater<double>());
    const double tail_mean = sorted.head(top).mean();
    const double value =
        cvar(PotentialValues(phi), DiscreteMeasure::uniform(n), Rho(level));
    push_row(out, rep, "cvar-sorted-tail", "inst" + std::to_string(k),
             tail_mean, value, tail_mean, 1e-12);
  }
  return out;
}

// ---- output writers ----------------------------------------------------------

void write_trajectories_csv(const fs::path& path,
                            const std::vector<RunRecord>& records) {
  std::ofstream out(path);
  out << "run_id,iteration,metric,value\n";
  for (const auto& record : records) {
    for (const auto& row : record.trajectory.rows) {
      out << record.run_id << ',' << row.iteration << ',' << row.metric << ','
          << format_double(row.value) << '\n';
    }
  }
}

void write_summary_jsonl(const fs::path& path,
                         const std::vector<RunRecord>& records,
                         std::uint64_t hash, std::uint64_t seed) {
  std::ofstream out(path);
  for (const auto& record : records) {
    json line;
    line["run_id"] = record.run_id;
    line["label"] = record.label;
    line["config_hash"] = hash;
    line["seed"] = seed;
    line["stream_id"] = record.stream_id;
    line["params"] = record.params;
    line["final"] = record.final_metrics;
    json events = json::array();
    for (const auto& event : record.trajectory.events) {
      events.push_back({{"iteration", event.iteration},
                        {"kind", event.kind},
                        {"detail", event.detail}});
    }
    line["events"] = events;
    line["violations"] = record.violations;
    out << line.dump() << '\n';
  }
}

void write_metadata(const fs::path& path,
                    const std::vector<RunRecord>& records,
                    double total_seconds) {
  json doc;
  doc["total_wall_seconds"] = total_seconds;
  json runs = json::object();
  for (const auto& record : records) {
    runs[record.run_id] = record.wall_seconds;
  }
  doc["run_wall_seconds"] = runs;
  const auto now = std::chrono::system_clock::now();
  doc["finished_unix_time"] =
      std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch())
          .count();
  std::ofstream out(path);
  out << doc.dump(2) << '\n';
}

void write_certificates_csv(const fs::path& path,
                            const std::vector<CertificateRow>& rows) {
  std::ofstream out(path);
  out << "repetition,suite,case,lower,witness,upper,ok\n";
  for (const auto& row : rows) {
    out << row.repetition << ',' << row.suite << ',' << row.case_id << ','
        << format_double(row.lower) << ',' << format_double(row.witness) << ','
        << format_double(row.upper) << ',' << (row.ok ? 1 : 0) << '\n';
  }
}

// ---- parallel cell execution ---------------------------------------------------

using RunJob = std::function<RunRecord()>;

std::vector<RunRecord> execute_jobs(std::vector<RunJob> jobs, int parallelism) {
  std::vector<RunRecord> records(jobs.size());
  if (parallelism <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) records[i] = jobs[i]();
    return records;
  }
  std::vector<std::future<RunRecord>> futures(jobs.size());
  std::size_t next = 0;
  while (next < jobs.size()) {
    const std::size_t batch_end =
        std::min(jobs.size(), next + static_cast<std::size_t>(parallelism));
    for (std::size_t i = next; i < batch_end; ++i) {
      futures[i] = std::async(std::launch::async, jobs[i]);
    }
    for (std::size_t i = next; i < batch_end; ++i) {
      records[i] = futures[i].get();
    }
    next = batch_end;
  }
  return records;
}

// ---- experiment drivers ----------------------------------------------------------

ExperimentResult run_bounds(const ExperimentConfig& config) {
  ExperimentResult result;
  for (int rep = 0; rep < config.repetitions; ++rep) {
    const auto start = std::chrono::steady_clock::now();
    RngStream rng(config.seed, static_cast<std::uint64_t>(rep));
    RunRecord record;
    record.run_id = "bounds-rep" + std::to_string(rep);
    record.label = "bounds";
    record.stream_id = static_cast<std::uint64_t>(rep);
    const SuiteOutcome suites[] = {
        corollary1_suite(rep, config.bounds.instances, rng),
        prop1_suite(rep, config.bounds.instances, config.bounds.max_atoms, rng),
        conjugacy_suite(rep, std::min(config.bounds.instances, 10), rng),
        lemma4_suite(rep, rng),
        appendix_c_suite(rep, rng)};
    for (const auto& suite : suites) {
      record.violations += suite.violations;
      result.certificates.insert(result.certificates.end(),
                                 suite.rows.begin(), suite.rows.end());
    }
    record.final_metrics["violations"] =
        static_cast<double>(record.violations);
    record.wall_seconds = wall_seconds_since(start);
    result.total_violations += record.violations;
    result.records.push_back(std::move(record));
  }
  return result;
}

ExperimentResult run_cvar(const ExperimentConfig& config) {
  ExperimentResult result;
  for (int rep = 0; rep < config.repetitions; ++rep) {
    const auto start = std::chrono::steady_clock::now();
    RngStream rng(config.seed, static_cast<std::uint64_t>(rep));
    RunRecord record;
    record.run_id = "cvar-rep" + std::to_string(rep);
    record.label = "cvar";
    record.stream_id = static_cast<std::uint64_t>(rep);
    const SuiteOutcome suite =
        cvar_suite(rep, config.cvar.instances, config.cvar.max_atoms, rng);
    record.violations = suite.violations;
    result.certificates.insert(result.certificates.end(), suite.rows.begin(),
                               suite.rows.end());
    record.final_metrics["violations"] =
        static_cast<double>(record.violations);
    record.wall_seconds = wall_seconds_since(start);
    result.total_violations += record.violations;
    result.records.push_back(std::move(record));
  }
  return result;
}

ExperimentResult run_dro_kl(const ExperimentConfig& config, int jobs) {
  const auto& exp = config.dro_kl;
  ExperimentResult result;

  // One dataset per repetition, shared by every grid cell of that repetition.
  std::vector<dro::RegressionDataset> datasets;
  datasets.reserve(config.repetitions);
  for (int rep = 0; rep < config.repetitions; ++rep) {
    if (!exp.dataset_csv.empty()) {
      datasets.push_back(dro::load_regression_csv(exp.dataset_csv));
    } else {
      RngStream data_rng(config.seed,
                         kDatasetStreamBase + static_cast<std::uint64_t>(rep));
      datasets.push_back(
          dro::make_synthetic_regression(data_rng, exp.n, exp.d));
    }
  }

  std::vector<RunJob> cells;
  std::uint64_t cell_index = 0;
  for (const std::string& mode : exp.modes) {
    for (const long batch : exp.batch_sizes) {
      for (const double stepsize : exp.stepsizes) {
        for (int rep = 0; rep < config.repetitions; ++rep) {
          const std::uint64_t stream =
              cell_index * kCellStride + static_cast<std::uint64_t>(rep);
          const dro::RegressionDataset* data = &datasets[rep];
          cells.push_back([=, &config]() {
            const auto start = std::chrono::steady_clock::now();
            RunRecord record;
            record.run_id = "dro-kl-" + mode + "-b" + std::to_string(batch) +
                            "-eta" + format_double(stepsize) + "-rep" +
                            std::to_string(rep);
            record.label = mode;
            record.stream_id = stream;
            record.params["batch_size"] = static_cast<double>(batch);
            record.params["stepsize"] = stepsize;
            record.params["repetition"] = rep;
            dro::KlDroConfig run_config;
            run_config.lambda = exp.lambda;
            run_config.rho = exp.rho;
            run_config.batch_size = batch;
            run_config.stepsize = stepsize;
            run_config.momentum = exp.momentum;
            run_config.epochs = exp.epochs;
            RngStream rng(config.seed, stream);
            record.trajectory = dro::run_kl_dro(
                run_config, *data,
                mode == "safe" ? dro::KlDroMode::safe : dro::KlDroMode::baseline,
                rng);
            record.final_metrics["kl_dro_objective"] =
                record.trajectory.last("kl_dro_objective");
            record.wall_seconds = wall_seconds_since(start);
            return record;
          });
        }
        ++cell_index;
      }
    }
  }
  result.records = execute_jobs(std::move(cells), jobs);
  return result;
}

ExperimentResult run_dro_uot(const ExperimentConfig& config, int jobs) {
  const auto& exp = config.dro_uot;
  ExperimentResult result;

  RngStream fixture_rng(config.seed, kFixtureStream);
  const dro::BlobsFixture fixture = dro::make_blobs_fixture(
      fixture_rng, exp.train_size, exp.val_size, exp.test_size, exp.flip_rate);

  const auto make_config = [&](double stepsize) {
    dro::UotDroConfig c;
    c.lambda = exp.lambda;
    c.beta = exp.beta;
    c.rho = exp.rho;
    c.inner_iters = exp.inner_iters;
    c.inner_stepsize = exp.inner_stepsize;
    c.cost_scale = exp.cost_scale;
    c.stepsize = stepsize;
    c.iters = exp.iters;
    c.eval_every = exp.eval_every;
    return c;
  };
  const auto to_mode = [](const std::string& mode) {
    if (mode == "erm") return dro::UotRunMode::erm;
    if (mode.rfind("baseline", 0) == 0) return dro::UotRunMode::sumexp_baseline;
    return dro::UotRunMode::safe;
  };

  const auto run_cell = [&](const std::string& mode, double stepsize,
                            std::uint64_t cell, int rep) {
    const std::uint64_t stream =
        cell * kCellStride + static_cast<std::uint64_t>(rep);
    const auto start = std::chrono::steady_clock::now();
    RunRecord record;
    record.run_id = "dro-uot-" + mode + "-eta" + format_double(stepsize) +
                    "-rep" + std::to_string(rep);
    record.label = mode;
    record.stream_id = stream;
    record.params["stepsize"] = stepsize;
    record.params["repetition"] = rep;
    RngStream rng(config.seed, stream);
    record.trajectory = dro::run_uot_dro(make_config(stepsize), fixture,
                                         to_mode(mode), rng);
    for (const char* metric : {"uot_objective", "train_loss", "train_acc",
                               "val_acc", "test_acc"}) {
      record.final_metrics[metric] = record.trajectory.last(metric);
    }
    record.final_metrics["overflow_events"] = static_cast<double>(
        record.trajectory.count_events("overflow"));
    record.wall_seconds = wall_seconds_since(start);
    return record;
  };

  std::vector<RunJob> cells;
  std::uint64_t cell_index = 0;
  for (const std::string& mode : exp.modes) {
    for (const double stepsize : exp.stepsizes) {
      for (int rep = 0; rep < config.repetitions; ++rep) {
        cells.push_back([=]() { return run_cell(mode, stepsize, cell_index, rep); });
      }
      ++cell_index;
    }
  }
  result.records = execute_jobs(std::move(cells), jobs);

  // Extra baseline cell at a multiple of the safe mode's best stepsize (best
  // by mean final training objective across repetitions).
  const bool has_safe =
      std::find(exp.modes.begin(), exp.modes.end(), "safe") != exp.modes.end();
  if (exp.baseline_stepsize_factor > 0.0 && has_safe) {
    double best_stepsize = exp.stepsizes.front();
    double best_value = std::numeric_limits<double>::infinity();
    for (const double stepsize : exp.stepsizes) {
      double acc = 0.0;
      int count = 0;
      for (const auto& record : result.records) {
        if (record.label == "safe" &&
            record.params.at("stepsize") == stepsize) {
          acc += record.final_metrics.at("uot_objective");
          ++count;
        }
      }
      if (count > 0 && acc / count < best_value) {
        best_value = acc / count;
        best_stepsize = stepsize;
      }
    }
    const double boosted = best_stepsize * exp.baseline_stepsize_factor;
    std::vector<RunJob> extra;
    for (int rep = 0; rep < config.repetitions; ++rep) {
      extra.push_back(
          [=]() { return run_cell("baseline@10x", boosted, cell_index, rep); });
    }
    auto extra_records = execute_jobs(std::move(extra), jobs);
    for (auto& record : extra_records) {
      result.records.push_back(std::move(record));
    }
  }
  return result;
}

ExperimentResult run_eot(const ExperimentConfig& config, int jobs) {
  const auto& exp = config.eot;
  ExperimentResult result;

  const eot::Sampler1D mu = eot::default_mu();
  const eot::Sampler1D nu = eot::default_nu();
  eot::EotConfig base;
  base.epsilon = exp.epsilon;
  base.iters = exp.iters;
  base.test_size = exp.test_size;
  base.reference_runs = exp.reference_runs;
  base.reference_C = exp.reference_C;

  RngStream fixture_rng(config.seed, kFixtureStream);
  const eot::EotFixture fixture =
      eot::make_eot_fixture(mu, nu, base, fixture_rng);

  std::vector<RunJob> cells;
  std::uint64_t cell_index = 0;
  for (const std::string& mode : exp.modes) {
    for (const double C : exp.Cs) {
      for (const double rho : exp.rhos) {
        for (const double bandwidth : exp.bandwidths) {
          for (int rep = 0; rep < config.repetitions; ++rep) {
            const std::uint64_t stream =
                cell_index * kCellStride + static_cast<std::uint64_t>(rep);
            cells.push_back([=, &config, &mu, &nu, &fixture]() {
              const auto start = std::chrono::steady_clock::now();
              RunRecord record;
              record.run_id = "eot-" + mode + "-C" + format_double(C) +
                              "-rho" + format_double(rho) + "-bw" +
                              format_double(bandwidth) + "-rep" +
                              std::to_string(rep);
              record.label = mode;
              record.stream_id = stream;
              record.params["C"] = C;
              record.params["rho"] = rho;
              record.params["bandwidth"] = bandwidth;
              record.params["repetition"] = rep;
              eot::EotConfig run_config = base;
              run_config.C = C;
              run_config.rho = rho;
              run_config.bandwidth = bandwidth;
              RngStream rng(config.seed, stream);
              record.trajectory = eot::run_eot(
                  run_config,
                  mode == "dual_baseline" ? eot::EotMode::dual_baseline
                                          : eot::EotMode::safe_semidual,
                  mu, nu, fixture, rng);
              const auto gaps = record.trajectory.series("gap");
              record.final_metrics["gap"] = gaps.back().second;
              double min_gap = gaps.front().second;
              for (const auto& [iter, gap] : gaps) {
                if (iter > 0) min_gap = std::min(min_gap, gap);
              }
              record.final_metrics["min_gap"] = min_gap;
              record.final_metrics["initial_gap"] = gaps.front().second;
              record.wall_seconds = wall_seconds_since(start);
              return record;
            });
          }
          ++cell_index;
        }
      }
    }
  }
  result.records = execute_jobs(std::move(cells), jobs);
  return result;
}

template <typename Scalar>
bool exp_overflows(double exponent) {
  const auto value = std::exp(static_cast<Scalar>(exponent));
  return !(value < std::numeric_limits<Scalar>::infinity());
}

ExperimentResult run_overflow_demo(const ExperimentConfig& config) {
  ExperimentResult result;
  const auto start = std::chrono::steady_clock::now();
  const double eps = config.overflow_demo.epsilon;
  const double z = config.overflow_demo.z;

  const char* env = std::getenv("SAFELSE_PRECISION");
  const std::string precision = env ? env : "double";
  if (precision != "double" && precision != "single") {
    throw std::runtime_error(
        "SAFELSE_PRECISION must be \"double\" or \"single\"");
  }

  RunRecord record;
  record.run_id = "overflow-demo";
  record.label = precision;
  record.stream_id = 0;

  // Threshold table: z above which e^{z/eps} leaves the representable range.
  const double double_threshold =
      std::log(std::numeric_limits<double>::max()) * eps;
  const double single_threshold =
      std::log(static_cast<double>(std::numeric_limits<float>::max())) * eps;
  record.final_metrics["double_threshold"] = double_threshold;
  record.final_metrics["single_threshold"] = single_threshold;

  const bool overflows = precision == "double"
                             ? exp_overflows<double>(z / eps)
                             : exp_overflows<float>(z / eps);
  record.final_metrics["demo_exponent_overflows"] = overflows ? 1.0 : 0.0;
  if (overflows) {
    record.trajectory.record(1, "overflow",
                             "exp(" + format_double(z / eps) + ") is inf in " +
                                 precision + " precision");
  }

  // The same configuration through the actual step operations: the dual
  // update produces a non-finite coefficient, the safe update stays finite.
  eot::EotConfig demo;
  demo.epsilon = eps;
  demo.C = 1.0;
  demo.rho = 0.1;
  demo.bandwidth = 1.0;
  eot::KernelExpansion u(demo.bandwidth), v(demo.bandwidth);
  u.append(0.0, z);  // u(0) = z, v empty, c(0, 0) = 0
  bool dual_overflowed = false;
  try {
    eot::KernelExpansion v_dual(demo.bandwidth);
    eot::dual_sgd_step(u, v_dual, 0.0, 0.0, 1, demo);
  } catch (const std::runtime_error&) {
    dual_overflowed = true;
    record.trajectory.record(1, "overflow", "dual step coefficient non-finite");
  }
  record.final_metrics["dual_step_overflows"] = dual_overflowed ? 1.0 : 0.0;

  eot::KernelExpansion v_safe(demo.bandwidth);
  v_safe.append(0.0, z);  // v(0) = z, alpha = 0, same exponent scale
  const double before = 0.0;
  const double alpha_after =
      eot::safe_semidual_sgd_step(v_safe, before, 0.0, 0.0, 1, demo);
  const double safe_coeff = v_safe.coefficient(v_safe.size() - 1);
  record.final_metrics["safe_step_coefficient"] = safe_coeff;
  record.final_metrics["safe_step_alpha"] = alpha_after;
  record.final_metrics["safe_step_finite"] =
      std::isfinite(safe_coeff) ? 1.0 : 0.0;

  if (!dual_overflowed || !std::isfinite(safe_coeff)) {
    ++record.violations;
    ++result.total_violations;
  }
  record.wall_seconds = wall_seconds_since(start);
  result.records.push_back(std::move(record));
  return result;
}

void write_overflow_table(const fs::path& path, const RunRecord& record,
                          const ExperimentConfig& config) {
  std::ofstream out(path);
  const double eps = config.overflow_demo.epsilon;
  out << "precision,quantity,z,epsilon,value,overflow\n";
  out << "double,threshold," << format_double(record.final_metrics.at(
             "double_threshold"))
      << ',' << format_double(eps) << ','
      << format_double(record.final_metrics.at("double_threshold") / eps)
      << ",\n";
  out << "single,threshold," << format_double(record.final_metrics.at(
             "single_threshold"))
      << ',' << format_double(eps) << ','
      << format_double(record.final_metrics.at("single_threshold") / eps)
      << ",\n";
  const double z = config.overflow_demo.z;
  for (const double probe : {0.5, 0.88, 0.89, 1.0, 7.09, z}) {
    const bool over_double = exp_overflows<double>(probe / eps);
    const bool over_single = exp_overflows<float>(probe / eps);
    out << "double,probe," << format_double(probe) << ','
        << format_double(eps) << ',' << format_double(probe / eps) << ','
        << (over_double ? 1 : 0) << '\n';
    out << "single,probe," << format_double(probe) << ','
        << format_double(eps) << ',' << format_double(probe / eps) << ','
        << (over_single ? 1 : 0) << '\n';
  }
}

void write_gap_trajectories(const fs::path& path,
                            const std::vector<RunRecord>& records) {
  std::ofstream out(path);
  out << "iteration,gap,mode,seed,rho,C,bandwidth\n";
  for (const auto& record : records) {
    for (const auto& row : record.trajectory.rows) {
      if (row.metric != "gap") continue;
      out << row.iteration << ',' << format_double(row.value) << ','
          << record.label << ',' << record.stream_id << ','
          << format_double(record.params.at("rho")) << ','
          << format_double(record.params.at("C")) << ','
          << format_double(record.params.at("bandwidth")) << '\n';
    }
  }
}

}  // namespace

void emit_plot_data(const std::vector<RunRecord>& records,
                    const std::string& metric, const std::string& out_base) {
  if (records.empty()) {
    throw std::invalid_argument("emit_plot_data: no records");
  }
  std::set<std::string> available;
  bool found = false;
  for (const auto& record : records) {
    for (const auto& row : record.trajectory.rows) {
      available.insert(row.metric);
      if (row.metric == metric) found = true;
    }
  }
  if (!found) {
    std::string message = "emit_plot_data: metric \"" + metric +
                          "\" absent; available:";
    for (const auto& name : available) message += " " + name;
    throw std::invalid_argument(message);
  }

  std::ofstream longfile(out_base + ".csv");
  longfile << "iteration,value,run_id,label\n";
  std::map<long, std::vector<double>> by_iteration;
  for (const auto& record : records) {
    for (const auto& row : record.trajectory.rows) {
      if (row.metric != metric) continue;
      longfile << row.iteration << ',' << format_double(row.value) << ','
               << record.run_id << ',' << record.label << '\n';
      by_iteration[row.iteration].push_back(row.value);
    }
  }

  std::ofstream agg(out_base + "_agg.csv");
  agg << "iteration,mean,std_population,count\n";
  for (const auto& [iteration, values] : by_iteration) {
    double mean = 0.0;
    for (const double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (const double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    agg << iteration << ',' << format_double(mean) << ','
        << format_double(std::sqrt(var)) << ',' << values.size() << '\n';
  }
}

ExperimentResult run_experiment(const ExperimentConfig& config, int jobs) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult result;
  if (config.experiment == "bounds") {
    result = run_bounds(config);
  } else if (config.experiment == "cvar") {
    result = run_cvar(config);
  } else if (config.experiment == "dro-kl") {
    result = run_dro_kl(config, jobs);
  } else if (config.experiment == "dro-uot") {
    result = run_dro_uot(config, jobs);
  } else if (config.experiment == "eot") {
    result = run_eot(config, jobs);
  } else if (config.experiment == "overflow-demo") {
    result = run_overflow_demo(config);
  } else {
    throw std::runtime_error("unknown experiment: " + config.experiment);
  }

  const fs::path out_dir(config.output_dir);
  fs::create_directories(out_dir);
  write_trajectories_csv(out_dir / "trajectories.csv", result.records);
  write_summary_jsonl(out_dir / "summary.jsonl", result.records,
                      config_hash(config), config.seed);
  if (!result.certificates.empty()) {
    write_certificates_csv(out_dir / "certificates.csv", result.certificates);
  }
  if (config.experiment == "eot") {
    write_gap_trajectories(out_dir / "gap_trajectories.csv", result.records);
    emit_plot_data(result.records, "gap", (out_dir / "plot_gap").string());
  } else if (config.experiment == "dro-kl") {
    emit_plot_data(result.records, "kl_dro_objective",
                   (out_dir / "plot_kl_dro_objective").string());
  } else if (config.experiment == "dro-uot") {
    emit_plot_data(result.records, "uot_objective",
                   (out_dir / "plot_uot_objective").string());
    emit_plot_data(result.records, "test_acc",
                   (out_dir / "plot_test_acc").string());
  } else if (config.experiment == "overflow-demo") {
    write_overflow_table(out_dir / "overflow_table.csv",
                         result.records.front(), config);
  }
  write_metadata(out_dir / "metadata.json", result.records,
                 wall_seconds_since(start));
  return result;
}

}  // namespace safelse::cli
