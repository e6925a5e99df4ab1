#include "safelse/eot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace safelse::eot {

// ---- samplers ---------------------------------------------------------------

Sampler1D Sampler1D::gaussian(double mean, double variance) {
  if (!(variance > 0.0)) {
    throw std::invalid_argument("Sampler1D: variance must be positive");
  }
  Sampler1D s;
  s.weights = Vector::Ones(1);
  s.means = Vector::Constant(1, mean);
  s.variances = Vector::Constant(1, variance);
  return s;
}

Sampler1D Sampler1D::mixture(Vector weights, Vector means, Vector variances) {
  if (weights.size() != means.size() || weights.size() != variances.size()) {
    throw std::invalid_argument("Sampler1D: component length mismatch");
  }
  if ((variances.array() <= 0.0).any()) {
    throw std::invalid_argument("Sampler1D: variance must be positive");
  }
  if (std::abs(weights.sum() - 1.0) > 1e-12 || (weights.array() < 0.0).any()) {
    throw std::invalid_argument("Sampler1D: weights must be a distribution");
  }
  Sampler1D s;
  s.weights = std::move(weights);
  s.means = std::move(means);
  s.variances = std::move(variances);
  return s;
}

double Sampler1D::sample(RngStream& rng) const {
  Eigen::Index component = 0;
  if (weights.size() > 1) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (Eigen::Index k = 0; k < weights.size(); ++k) {
      acc += weights[k];
      if (u < acc) {
        component = k;
        break;
      }
      component = k;
    }
  }
  return rng.normal(means[component], std::sqrt(variances[component]));
}

Vector Sampler1D::sample_n(Eigen::Index n, RngStream& rng) const {
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = sample(rng);
  return out;
}

Sampler1D default_mu() { return Sampler1D::gaussian(0.0, 1.0); }

Sampler1D default_nu() {
  Vector w(2), m(2), v(2);
  w << 0.5, 0.5;
  m << -2.0, 2.0;
  v << 0.25, 0.25;
  return Sampler1D::mixture(w, m, v);
}

// ---- kernel expansion --------------------------------------------------------

KernelExpansion::KernelExpansion(double bandwidth) : bandwidth_(bandwidth) {
  if (!(bandwidth > 0.0)) {
    throw std::invalid_argument("KernelExpansion: bandwidth must be positive");
  }
}

void KernelExpansion::reserve(Eigen::Index capacity) {
  if (capacity <= centers_.size()) return;
  Vector centers(capacity), coeffs(capacity);
  centers.head(size_) = centers_.head(size_);
  coeffs.head(size_) = coeffs_.head(size_);
  centers_.swap(centers);
  coeffs_.swap(coeffs);
}

void KernelExpansion::append(double center, double coefficient) {
  if (size_ == centers_.size()) {
    reserve(std::max<Eigen::Index>(16, 2 * size_));
  }
  centers_[size_] = center;
  coeffs_[size_] = coefficient;
  ++size_;
}

double KernelExpansion::eval(double x) const {
  if (size_ == 0) return 0.0;
  const auto c = centers_.head(size_).array();
  return (coeffs_.head(size_).array() *
          (-(c - x).square() / bandwidth_).exp())
      .sum();
}

Vector KernelExpansion::eval_at(const Vector& xs) const {
  Vector out = Vector::Zero(xs.size());
  for (Eigen::Index i = 0; i < xs.size(); ++i) out[i] = eval(xs[i]);
  return out;
}

Vector KernelExpansion::kernel_row(const Vector& xs, double center) const {
  return (-(xs.array() - center).square() / bandwidth_).exp();
}

// ---- SGD steps ----------------------------------------------------------------

void dual_sgd_step(KernelExpansion& u, KernelExpansion& v, double x, double y,
                   long i, const EotConfig& config) {
  if (i < 1) throw std::invalid_argument("dual_sgd_step: i must be >= 1");
  const double exponent =
      (u.eval(x) + v.eval(y) - cost(x, y)) / config.epsilon;
  const double beta = config.C / std::sqrt(static_cast<double>(i)) *
                      (1.0 - std::exp(exponent));
  if (!std::isfinite(beta)) {
    throw std::runtime_error("divergence detected at iteration " +
                             std::to_string(i));
  }
  u.append(x, beta);
  v.append(y, beta);
}

double safe_semidual_sgd_step(KernelExpansion& v, double alpha, double x,
                              double y, long i, const EotConfig& config) {
  if (i < 1) throw std::invalid_argument("safe_semidual_sgd_step: i must be >= 1");
  const Rho rho(config.rho);
  const double s = (v.eval(y) - cost(x, y) - alpha) / config.epsilon;
  const double beta = config.C / std::sqrt(static_cast<double>(i)) *
                      (1.0 - sigma_rho(s, rho));
  v.append(y, beta);
  return alpha - beta;
}

// ---- gap machinery -------------------------------------------------------------

double semidiscrete_value(const Vector& v, double x, const Vector& test_ys,
                          double epsilon) {
  if (v.size() != test_ys.size() || v.size() == 0) {
    throw std::invalid_argument("semidiscrete_value: length mismatch");
  }
  const Eigen::Index n = v.size();
  const Vector scaled =
      (v.array() - (test_ys.array() - x).square()).matrix() / epsilon;
  return v.mean() -
         epsilon * (logsumexp(scaled) - std::log(static_cast<double>(n))) -
         epsilon;
}

double semidiscrete_test_average(const Vector& v, const Vector& test_xs,
                                 const Vector& test_ys, double epsilon) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < test_xs.size(); ++i) {
    acc += semidiscrete_value(v, test_xs[i], test_ys, epsilon);
  }
  return acc / static_cast<double>(test_xs.size());
}

namespace {

std::vector<long> checkpoint_schedule(long iters) {
  std::vector<long> cps;
  for (long c = 1; c <= iters; c *= 2) cps.push_back(c);
  if (cps.empty() || cps.back() != iters) cps.push_back(iters);
  return cps;
}

}  // namespace

double estimate_gap_reference(const Vector& test_xs, const Vector& test_ys,
                              double epsilon, int runs, long iters,
                              double stepsize_C, RngStream& rng) {
  const Eigen::Index n = test_ys.size();
  double best = -std::numeric_limits<double>::infinity();
  for (int run = 0; run < runs; ++run) {
    RngStream stream(rng.seed(), rng.stream_id() * 1000003ULL + 17ULL +
                                     static_cast<std::uint64_t>(run));
    Vector v = Vector::Zero(n);
    best = std::max(best,
                    semidiscrete_test_average(v, test_xs, test_ys, epsilon));
    const auto cps = checkpoint_schedule(iters);
    std::size_t next_cp = 0;
    for (long i = 1; i <= iters; ++i) {
      const double x =
          test_xs[static_cast<Eigen::Index>(stream.uniform_int(test_xs.size()))];
      // Ascent direction of h_hat(x, v): 1/N - softmax((v - c(x, .))/eps).
      Vector scaled =
          (v.array() - (test_ys.array() - x).square()).matrix() / epsilon;
      const double shift = scaled.maxCoeff();
      Vector p = (scaled.array() - shift).exp();
      p /= p.sum();
      const double gamma = stepsize_C / std::sqrt(static_cast<double>(i));
      v.array() += gamma * (1.0 / static_cast<double>(n) - p.array());
      if (next_cp < cps.size() && i == cps[next_cp]) {
        ++next_cp;
        best = std::max(
            best, semidiscrete_test_average(v, test_xs, test_ys, epsilon));
      }
    }
  }
  return best;
}

double optimality_gap(const Vector& v_at_test_ys, double reference,
                      const Vector& test_xs, const Vector& test_ys,
                      double epsilon) {
  return reference -
         semidiscrete_test_average(v_at_test_ys, test_xs, test_ys, epsilon);
}

EotFixture make_eot_fixture(const Sampler1D& mu, const Sampler1D& nu,
                            const EotConfig& config, RngStream& rng) {
  EotFixture fixture;
  fixture.test_xs = mu.sample_n(config.test_size, rng);
  fixture.test_ys = nu.sample_n(config.test_size, rng);
  fixture.reference = estimate_gap_reference(
      fixture.test_xs, fixture.test_ys, config.epsilon, config.reference_runs,
      config.iters, config.reference_C, rng);
  return fixture;
}

Trajectory run_eot(const EotConfig& config, EotMode mode, const Sampler1D& mu,
                   const Sampler1D& nu, const EotFixture& fixture,
                   RngStream& rng) {
  Trajectory traj;
  KernelExpansion u(config.bandwidth);
  KernelExpansion v(config.bandwidth);
  u.reserve(mode == EotMode::dual_baseline ? config.iters : 0);
  v.reserve(config.iters);
  double alpha = 0.0;

  // v on the fixed test atoms is maintained incrementally: one kernel row per
  // appended center.
  Vector v_test = Vector::Zero(fixture.test_ys.size());
  const double gap0 = optimality_gap(v_test, fixture.reference,
                                     fixture.test_xs, fixture.test_ys,
                                     config.epsilon);
  traj.log(0, "gap", gap0);

  const auto cps = checkpoint_schedule(config.iters);
  std::size_t next_cp = 0;
  bool blowup_recorded = false;
  for (long i = 1; i <= config.iters; ++i) {
    const double x = mu.sample(rng);
    const double y = nu.sample(rng);
    if (mode == EotMode::dual_baseline) {
      try {
        dual_sgd_step(u, v, x, y, i, config);
      } catch (const std::runtime_error&) {
        traj.record(i, "overflow", "non-finite dual coefficient");
        return traj;
      }
    } else {
      alpha = safe_semidual_sgd_step(v, alpha, x, y, i, config);
    }
    v_test += v.coefficient(v.size() - 1) *
              v.kernel_row(fixture.test_ys, v.center(v.size() - 1));
    if (next_cp < cps.size() && i == cps[next_cp]) {
      ++next_cp;
      const double gap =
          optimality_gap(v_test, fixture.reference, fixture.test_xs,
                         fixture.test_ys, config.epsilon);
      traj.log(i, "gap", gap);
      if (!blowup_recorded && gap > 100.0 * std::abs(gap0)) {
        traj.record(i, "divergence", "gap exceeded 100x its initial value");
        blowup_recorded = true;
      }
    }
  }
  return traj;
}

}  // namespace safelse::eot
