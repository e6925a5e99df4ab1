#pragma once

#include <Eigen/Core>

#include <utility>
#include <vector>

#include "safelse/core.hpp"
#include "safelse/optim.hpp"
#include "safelse/rng.hpp"

// Continuous entropy-regularized OT in one dimension: Gaussian/mixture
// samplers, Gaussian-kernel expansions, kernel SGD on the dual (the
// overflow-prone baseline) and on the safe approximate semi-dual, and the
// test-set optimality-gap proxy.

namespace safelse::eot {

using safelse::Rho;
using safelse::Vector;

/// Quadratic ground cost (x - y)^2.
inline double cost(double x, double y) {
  const double d = x - y;
  return d * d;
}

struct Sampler1D {
  // Component weights, means and variances; a plain Gaussian is the
  // single-component case.
  Vector weights;
  Vector means;
  Vector variances;

  static Sampler1D gaussian(double mean, double variance);
  static Sampler1D mixture(Vector weights, Vector means, Vector variances);

  double sample(RngStream& rng) const;
  Vector sample_n(Eigen::Index n, RngStream& rng) const;
};

/// v(x) = sum_i coeff_i exp(-(x - center_i)^2 / bandwidth). Centers are
/// appended one per SGD step; storage is preallocated via reserve().
class KernelExpansion {
 public:
  explicit KernelExpansion(double bandwidth);

  void reserve(Eigen::Index capacity);
  void append(double center, double coefficient);

  double eval(double x) const;
  /// Evaluation on many points; equals eval applied elementwise.
  Vector eval_at(const Vector& xs) const;
  /// Contribution of a single kernel centered at `center` on the points xs.
  Vector kernel_row(const Vector& xs, double center) const;

  Eigen::Index size() const { return size_; }
  double bandwidth() const { return bandwidth_; }
  double coefficient(Eigen::Index i) const { return coeffs_[i]; }
  double center(Eigen::Index i) const { return centers_[i]; }

 private:
  double bandwidth_;
  Eigen::Index size_ = 0;
  Vector centers_;
  Vector coeffs_;
};

struct EotConfig {
  double epsilon = 0.01;
  double rho = 0.1;
  double C = 1.0;          // stepsize scale, gamma_i = C / sqrt(i)
  double bandwidth = 10.0;  // Gaussian kernel sigma^2
  long iters = 20000;
  Eigen::Index test_size = 1000;
  int reference_runs = 5;
  double reference_C = 1.0;
};

enum class EotMode { dual_baseline, safe_semidual };

/// One kernel-SGD step on the dual objective. The exponent
/// (u(x) + v(y) - c(x, y)) / epsilon is taken literally, so the update is
/// overflow-prone by construction; a non-finite coefficient throws
/// "divergence detected".
void dual_sgd_step(KernelExpansion& u, KernelExpansion& v, double x, double y,
                   long i, const EotConfig& config);

/// One kernel-SGD step on the safe approximate semi-dual; the coefficient
/// (C/sqrt(i)) (1 - sigma_rho(s)) is bounded for any finite input. Returns
/// the updated alpha.
double safe_semidual_sgd_step(KernelExpansion& v, double alpha, double x,
                              double y, long i, const EotConfig& config);

/// Semi-discrete value h_hat(x, v) = mean(v) -
/// epsilon log((1/N) sum_j e^{(v_j - c(x, y_j))/epsilon}) - epsilon.
double semidiscrete_value(const Vector& v, double x, const Vector& test_ys,
                          double epsilon);

/// Mean of semidiscrete_value over the test xs.
double semidiscrete_test_average(const Vector& v, const Vector& test_xs,
                                 const Vector& test_ys, double epsilon);

/// Reference W_hat: SGD over the empirical semi-discrete problem for
/// `runs` independent streams, keeping the best test-set average seen at any
/// power-of-two checkpoint.
double estimate_gap_reference(const Vector& test_xs, const Vector& test_ys,
                              double epsilon, int runs, long iters,
                              double stepsize_C, RngStream& rng);

/// reference - test average of the candidate potential (may be slightly
/// negative when the candidate beats the proxy; callers clamp only for
/// plotting).
double optimality_gap(const Vector& v_at_test_ys, double reference,
                      const Vector& test_xs, const Vector& test_ys,
                      double epsilon);

/// Shared test sets plus the reference value; built once per experiment and
/// reused across seeds and modes.
struct EotFixture {
  Vector test_xs;
  Vector test_ys;
  double reference = 0.0;
};

EotFixture make_eot_fixture(const Sampler1D& mu, const Sampler1D& nu,
                            const EotConfig& config, RngStream& rng);

/// Kernel SGD against fresh (x, y) ~ mu (x) nu. Logs metric "gap" at
/// power-of-two checkpoints. Non-finite dual coefficients record an
/// "overflow" event and end the run; a checkpoint gap above 100x the initial
/// gap records a "divergence" event (the divergent-curve regime).
Trajectory run_eot(const EotConfig& config, EotMode mode, const Sampler1D& mu,
                   const Sampler1D& nu, const EotFixture& fixture,
                   RngStream& rng);

/// The committed desk-scale fixture distributions.
Sampler1D default_mu();
Sampler1D default_nu();

}  // namespace safelse::eot
