#pragma once

#include <Eigen/Core>

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "safelse/rng.hpp"

// Deterministic, seedable first-order optimizers. Every routine is a pure
// function of (inputs, rng state); independent runs with distinct stream ids
// may execute in parallel.

namespace safelse {

using Vector = Eigen::VectorXd;

struct StepSchedule {
  enum class Kind { inverse_sqrt, constant };
  Kind kind = Kind::inverse_sqrt;
  double C = 1.0;

  static StepSchedule inv_sqrt(double C) {
    return {Kind::inverse_sqrt, C};
  }
  static StepSchedule constant(double C) { return {Kind::constant, C}; }

  /// Stepsize for 1-based iteration i.
  double at(long i) const {
    return kind == Kind::inverse_sqrt ? C / std::sqrt(static_cast<double>(i))
                                      : C;
  }
};

/// Time-series of logged metrics plus any recorded events (overflow,
/// divergence, ...). Iteration indices are strictly increasing per metric.
struct Trajectory {
  struct Row {
    long iteration;
    std::string metric;
    double value;
  };
  struct Event {
    long iteration;
    std::string kind;
    std::string detail;
  };

  std::vector<Row> rows;
  std::vector<Event> events;

  void log(long iteration, const std::string& metric, double value) {
    rows.push_back({iteration, metric, value});
  }
  void record(long iteration, const std::string& kind,
              const std::string& detail = "") {
    events.push_back({iteration, kind, detail});
  }

  /// Last logged value for a metric; throws if the metric never appears.
  double last(const std::string& metric) const;
  std::vector<std::pair<long, double>> series(const std::string& metric) const;
  long count_events(const std::string& kind) const;
};

using GradEstimator = std::function<Vector(const Vector&, RngStream&)>;
using StepLogger = std::function<void(long iteration, const Vector& state)>;

/// Plain SGD x_i = x_{i-1} - gamma_i g_i (minimization convention). A
/// non-finite gradient component aborts with "divergence detected" carrying
/// the iteration index.
Vector sgd(const GradEstimator& grad_estimator, Vector init,
           const StepSchedule& schedule, long iters, RngStream& rng,
           const StepLogger& logger = nullptr);

/// Nesterov look-ahead SGD with constant stepsize:
///   v_i = m v_{i-1} - gamma g(x_{i-1} + m v_{i-1}),  x_i = x_{i-1} + v_i.
/// momentum = 0 reduces exactly to constant-step sgd.
Vector nesterov_sgd(const GradEstimator& grad_estimator, Vector init,
                    double stepsize, double momentum, long iters,
                    RngStream& rng, const StepLogger& logger = nullptr);

/// Value-and-gradient callback for deterministic ascent.
using ValueGrad = std::function<std::pair<double, Vector>(const Vector&)>;

struct AscentResult {
  Vector point;
  double value;
};

/// Fixed-budget Nesterov ascent (maximization) with the classical t_k
/// momentum sequence t_k = (1 + sqrt(1 + 4 t_{k-1}^2))/2. Used for the inner
/// suprema; the default budget is 5 iterations.
AscentResult nesterov_ascent_fixed(const ValueGrad& objective, Vector init,
                                   double stepsize, int iters = 5);

}  // namespace safelse
