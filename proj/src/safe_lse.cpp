#include "safelse/safe_lse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace safelse {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Root of sum_i coeff_i * sigma_rho(values_i - alpha) = 1 for coeff_i > 0.
// The left side decreases strictly from (sum coeff)/rho (alpha -> -inf) to 0,
// so a root exists iff (sum coeff)/rho > 1. alpha_hi must satisfy
// residual(alpha_hi) < 0.
struct RootResult {
  double alpha;
  int iterations;
  double residual;
};

RootResult solve_sigma_root(const Vector& values, const Vector& coeffs,
                            const Rho& rho, double tol, double alpha_hi) {
  const auto residual = [&](double alpha) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      if (coeffs[i] == 0.0) continue;
      s += coeffs[i] * sigma_rho(values[i] - alpha, rho);
    }
    return s - 1.0;
  };
  const auto slope = [&](double alpha) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      if (coeffs[i] == 0.0) continue;
      s -= coeffs[i] * sigma_rho_deriv(values[i] - alpha, rho);
    }
    return s;
  };

  int iters = 0;
  double hi = alpha_hi;
  double r_hi = residual(hi);
  if (r_hi >= 0.0) {
    // Can only happen through rounding at the bracket edge; nudge upward.
    double step = std::max(1.0, std::abs(hi));
    while (r_hi >= 0.0 && iters < 200) {
      hi += step;
      step *= 2.0;
      r_hi = residual(hi);
      ++iters;
    }
  }

  double step = std::max(1.0, std::abs(hi));
  double lo = hi - step;
  double r_lo = residual(lo);
  int doublings = 0;
  while (r_lo <= 0.0) {
    if (++doublings > 200) {
      throw std::runtime_error("bracketing failed");
    }
    step *= 2.0;
    lo -= step;
    r_lo = residual(lo);
  }

  // Newton from the midpoint, clipped to the bracket, bisection fallback.
  double alpha = 0.5 * (lo + hi);
  double r = residual(alpha);
  while (std::abs(r) > tol && iters < 200) {
    ++iters;
    if (r > 0.0) {
      lo = alpha;
    } else {
      hi = alpha;
    }
    const double d = slope(alpha);
    double next = (d != 0.0) ? alpha - r / d : alpha;
    if (!(next > lo && next < hi)) {
      next = 0.5 * (lo + hi);
    }
    alpha = next;
    r = residual(alpha);
  }
  return {alpha, iters, std::abs(r)};
}

double softplus_sum(const Vector& values, const Vector& coeffs, const Rho& rho,
                    double alpha) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (coeffs[i] == 0.0) continue;
    s += coeffs[i] * softplus_stable(values[i] - alpha + rho.log());
  }
  return s;
}

}  // namespace

double log_partition(const PotentialValues& phi, const DiscreteMeasure& mu) {
  if (phi.size() != mu.size()) {
    throw std::invalid_argument("incompatible supports");
  }
  Vector shifted(phi.size());
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    const double w = mu.weights()[i];
    shifted[i] = (w > 0.0) ? phi.values()[i] + std::log(w) : -kInf;
  }
  return logsumexp(shifted);
}

double solve_alpha(const PotentialValues& phi, const DiscreteMeasure& mu,
                   const Rho& rho, double tol) {
  if (!(tol > 0.0)) {
    throw std::invalid_argument("solve_alpha: tol must be positive");
  }
  if (rho.is_bouchard()) {
    // sum w_i sigma_1(phi_i - alpha) < 1 for every alpha: no root.
    throw std::runtime_error("bracketing failed");
  }
  const double alpha_hi = log_partition(phi, mu);
  return solve_sigma_root(phi.values(), mu.weights(), rho, tol, alpha_hi).alpha;
}

SafeLseSolution safe_log_partition(const PotentialValues& phi,
                                   const DiscreteMeasure& mu, const Rho& rho,
                                   double tol) {
  if (!(tol > 0.0)) {
    throw std::invalid_argument("safe_log_partition: tol must be positive");
  }
  if (phi.size() != mu.size()) {
    throw std::invalid_argument("incompatible supports");
  }
  SafeLseSolution sol;
  if (rho.is_bouchard()) {
    // Limit alpha -> -inf of the objective: mean(phi) - 1.
    sol.value = phi.values().dot(mu.weights()) - 1.0;
    sol.alpha_star = -kInf;
    return sol;
  }
  const double alpha_hi = log_partition(phi, mu);
  const RootResult root =
      solve_sigma_root(phi.values(), mu.weights(), rho, tol, alpha_hi);
  sol.alpha_star = root.alpha;
  sol.iterations = root.iterations;
  sol.residual = root.residual;
  sol.value = root.alpha - 1.0 +
              softplus_sum(phi.values(), mu.weights(), rho, root.alpha) /
                  rho.value();
  return sol;
}

double safe_logsumexp(const Vector& a, const Rho& rho, double tol) {
  if (a.size() == 0) {
    throw std::invalid_argument("empty vector");
  }
  if (!(tol > 0.0)) {
    throw std::invalid_argument("safe_logsumexp: tol must be positive");
  }
  const Vector ones = Vector::Ones(a.size());
  if (rho.is_bouchard() && a.size() == 1) {
    // sigma_1 sums to at most 1: the infimum is the alpha -> -inf limit.
    return a[0] - 1.0;
  }
  const double alpha_hi = logsumexp(a);
  const RootResult root = solve_sigma_root(a, ones, rho, tol, alpha_hi);
  return root.alpha - 1.0 + softplus_sum(a, ones, rho, root.alpha) / rho.value();
}

double cvar(const PotentialValues& phi, const DiscreteMeasure& mu,
            const Rho& rho) {
  if (phi.size() != mu.size()) {
    throw std::invalid_argument("incompatible supports");
  }
  // Sort atoms by potential and sweep the candidate alphas; the objective at
  // alpha = phi_(k) needs only the tail sums above it.
  std::vector<Eigen::Index> order(phi.size());
  for (Eigen::Index i = 0; i < phi.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return phi.values()[a] > phi.values()[b];
  });

  double best = kInf;
  double tail_mass = 0.0;    // sum of weights with phi strictly above alpha
  double tail_weighted = 0.0;  // sum of w_i phi_i over that tail
  for (Eigen::Index k = 0; k < phi.size(); ++k) {
    const double alpha = phi.values()[order[k]];
    const double value =
        alpha + (tail_weighted - alpha * tail_mass) / rho.value();
    best = std::min(best, value);
    const double w = mu.weights()[order[k]];
    tail_mass += w;
    tail_weighted += w * alpha;
  }
  return best;
}

BoundCertificate cvar_sandwich(const PotentialValues& phi,
                               const DiscreteMeasure& mu, const Rho& rho,
                               double lambda) {
  if (!(lambda > 0.0)) {
    throw std::invalid_argument("cvar_sandwich: lambda must be positive");
  }
  const PotentialValues scaled(phi.values() / lambda);
  const double witness =
      lambda * safe_log_partition(scaled, mu, rho).value;
  const double c = cvar(phi, mu, rho);
  BoundCertificate cert;
  cert.witness = witness;
  cert.lower = c + lambda * (rho.log() - 1.0);
  cert.upper = c + lambda * (rho.log() - 1.0 + 1.0 / rho.value());
  return cert;
}

BoundCertificate prop1_bounds(const PotentialValues& phi,
                              const DiscreteMeasure& mu, const Rho& rho) {
  const double f1 = log_partition(phi, mu);
  const PotentialValues phi2(2.0 * phi.values());
  const double f2 = log_partition(phi2, mu);
  double max_phi = -kInf;
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    if (mu.weights()[i] > 0.0) max_phi = std::max(max_phi, phi.values()[i]);
  }

  const double r = rho.value();
  double lower = -kInf;
  bool applicable = false;
  if (r <= 0.25 * std::exp(2.0 * f1 - f2)) {
    lower = std::max(lower, f1 + 0.5 * r - 4.0 * r * std::exp(f2 - 2.0 * f1));
    applicable = true;
  }
  if (r < std::exp(f1 - max_phi)) {
    lower = std::max(lower, f1 - r * std::exp(max_phi - f1));
    applicable = true;
  }
  if (!applicable) {
    throw std::runtime_error("rho too large for bound");
  }

  BoundCertificate cert;
  cert.lower = lower;
  cert.upper = f1;
  cert.witness = safe_log_partition(phi, mu, rho).value;
  return cert;
}

}  // namespace safelse
