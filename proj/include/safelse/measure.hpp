#pragma once

#include <Eigen/Core>

#include "safelse/core.hpp"

// Discrete probability measures and divergences between them. Two measures
// are comparable only when they share the same atom list; zero weights encode
// absence, which makes absolute continuity decidable by inspection.

namespace safelse {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Weighted atom set. Atoms are optional coordinates (n x d matrix); when a
/// measure is built from weights alone the atoms are the implicit indices
/// 0..n-1. Weights must be nonnegative and sum to 1 within 1e-12.
class DiscreteMeasure {
 public:
  explicit DiscreteMeasure(Vector weights);
  DiscreteMeasure(Vector weights, Matrix atoms);

  static DiscreteMeasure uniform(Eigen::Index n);

  const Vector& weights() const { return weights_; }
  const Matrix& atoms() const { return atoms_; }
  Eigen::Index size() const { return weights_.size(); }

  /// Same support universe: equal atom count and identical atom coordinates.
  bool same_support(const DiscreteMeasure& other) const;

 private:
  Vector weights_;
  Matrix atoms_;  // n x d; d == 0 when atoms are opaque indices
};

/// Values of a potential phi on the atoms of an associated measure.
/// All entries must be finite.
class PotentialValues {
 public:
  explicit PotentialValues(Vector values);

  const Vector& values() const { return values_; }
  Eigen::Index size() const { return values_.size(); }

 private:
  Vector values_;
};

/// Per-atom density ratios d nu / d mu. Construction checks nonnegativity;
/// normalization against a base measure is the caller's contract.
class DensityRatio {
 public:
  explicit DensityRatio(Vector ratios);

  const Vector& ratios() const { return ratios_; }

 private:
  Vector ratios_;
};

/// KL divergence sum_i nu_i log(nu_i / mu_i); +inf when nu puts mass where mu
/// has none. Throws "incompatible supports" on mismatched atom lists.
double kl_divergence(const DiscreteMeasure& nu, const DiscreteMeasure& mu);

/// Safe KL divergence sum_i mu_i f_rho(nu_i / mu_i); +inf when absolute
/// continuity fails or any ratio exceeds 1/rho. Note D_rho(mu, mu) > 0 since
/// f_rho(1) = 1 + ((1-rho)/rho) log(1-rho) > 0, unlike the plain KL.
double safe_kl_divergence(const DiscreteMeasure& nu, const DiscreteMeasure& mu,
                          const Rho& rho);

/// Optimal tilted density ratios sigma_rho(phi_i - alpha_star). alpha_star
/// must solve the first-order condition for (phi, mu, rho); the normalization
/// sum_i ratio_i mu_i = 1 is checked to 1e-6 and violations throw
/// "alpha not optimal".
DensityRatio optimal_tilt(const PotentialValues& phi, const DiscreteMeasure& mu,
                          const Rho& rho, double alpha_star);

}  // namespace safelse
