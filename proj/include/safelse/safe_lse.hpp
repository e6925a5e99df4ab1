#pragma once

#include <Eigen/Core>

#include "safelse/core.hpp"
#include "safelse/measure.hpp"

// The log-partition functional F and its rescaled-SoftPlus approximation
// F_rho, with the inner alpha-minimization, the LogSumExp specialization,
// CVaR, and the bound certificates that make the approximation auditable.

namespace safelse {

/// Result of the F_rho evaluation: the value, the inner minimizer alpha_star,
/// solver effort, and the first-order residual |sum w_i sigma_rho(phi_i -
/// alpha_star) - 1|. In Bouchard mode (rho = 1) the infimum is attained only
/// in the limit alpha -> -inf; alpha_star is then -inf, residual 0.
struct SafeLseSolution {
  double value = 0.0;
  double alpha_star = 0.0;
  int iterations = 0;
  double residual = 0.0;
};

/// Two-sided bound on a witnessed quantity; lower <= witness <= upper is the
/// construction invariant (1e-9 floating-point slack granted by callers).
struct BoundCertificate {
  double lower = 0.0;
  double upper = 0.0;
  double witness = 0.0;

  bool holds(double slack = 1e-9) const {
    return lower - slack <= witness && witness <= upper + slack;
  }
};

/// Exact log-partition F(phi; mu) = log sum_i w_i e^{phi_i}; atoms with zero
/// weight are skipped.
double log_partition(const PotentialValues& phi, const DiscreteMeasure& mu);

/// Root of sum_i w_i sigma_rho(phi_i - alpha) = 1. The map is strictly
/// decreasing in alpha from 1/rho to 0, so the root is unique; solved by
/// bracketed Newton with bisection fallback, upper bracket F(phi; mu).
/// Requires rho < 1 (no root exists in Bouchard mode). Returns the root; the
/// residual at the returned alpha is <= tol.
double solve_alpha(const PotentialValues& phi, const DiscreteMeasure& mu,
                   const Rho& rho, double tol);

/// F_rho(phi; mu) = alpha* - 1 + (1/rho) sum_i w_i log(1 + rho e^{phi_i -
/// alpha*}). Always <= log_partition(phi, mu).
SafeLseSolution safe_log_partition(const PotentialValues& phi,
                                   const DiscreteMeasure& mu, const Rho& rho,
                                   double tol = 1e-12);

/// inf_alpha alpha - 1 + (1/rho) sum_i log(1 + rho e^{a_i - alpha}), the
/// direct-sum form. Lies in [logsumexp(a) - rho, logsumexp(a)]; equals
/// log n + F_{rho/n}(a; uniform).
double safe_logsumexp(const Vector& a, const Rho& rho, double tol = 1e-12);

/// CVaR at level rho via the variational formula inf_alpha alpha +
/// (1/rho) sum_i w_i (phi_i - alpha)_+, evaluated exactly: the infimum of
/// this piecewise-linear convex function is attained at an atom value.
double cvar(const PotentialValues& phi, const DiscreteMeasure& mu,
            const Rho& rho);

/// CVaR sandwich: cvar + lambda(log rho - 1) <= lambda F_rho(phi/lambda; mu)
/// <= cvar + lambda(log rho - 1 + 1/rho). Witness is the middle expression.
BoundCertificate cvar_sandwich(const PotentialValues& phi,
                               const DiscreteMeasure& mu, const Rho& rho,
                               double lambda);

/// Approximation certificate for F_rho: upper bound F, lower bound the
/// tighter of the two applicable branches
///   (a) F + rho/2 - 4 rho e^{F(2 phi) - 2 F}   when rho <= (1/4) e^{2F - F(2 phi)}
///   (b) F - rho e^{M - F}                      when rho < e^{F - M}, M = max phi
/// Throws "rho too large for bound" when neither branch applies.
BoundCertificate prop1_bounds(const PotentialValues& phi,
                              const DiscreteMeasure& mu, const Rho& rho);

}  // namespace safelse
