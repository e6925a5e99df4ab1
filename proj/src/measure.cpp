#include "safelse/measure.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace safelse {

namespace {
constexpr double kWeightSumTol = 1e-12;

void check_weights(const Vector& w) {
  if (w.size() < 1) {
    throw std::invalid_argument("DiscreteMeasure: at least one atom required");
  }
  if ((w.array() < 0.0).any()) {
    throw std::invalid_argument("DiscreteMeasure: negative weight");
  }
  if (std::abs(w.sum() - 1.0) > kWeightSumTol) {
    throw std::invalid_argument("DiscreteMeasure: weights must sum to 1");
  }
}
}  // namespace

DiscreteMeasure::DiscreteMeasure(Vector weights)
    : weights_(std::move(weights)), atoms_(weights_.size(), 0) {
  check_weights(weights_);
}

DiscreteMeasure::DiscreteMeasure(Vector weights, Matrix atoms)
    : weights_(std::move(weights)), atoms_(std::move(atoms)) {
  check_weights(weights_);
  if (atoms_.rows() != weights_.size()) {
    throw std::invalid_argument("DiscreteMeasure: atoms/weights length mismatch");
  }
}

DiscreteMeasure DiscreteMeasure::uniform(Eigen::Index n) {
  return DiscreteMeasure(Vector::Constant(n, 1.0 / static_cast<double>(n)));
}

bool DiscreteMeasure::same_support(const DiscreteMeasure& other) const {
  if (size() != other.size()) return false;
  if (atoms_.cols() != other.atoms_.cols()) return false;
  if (atoms_.cols() == 0) return true;
  return atoms_ == other.atoms_;
}

PotentialValues::PotentialValues(Vector values) : values_(std::move(values)) {
  if (!values_.allFinite()) {
    throw std::invalid_argument("PotentialValues: entries must be finite");
  }
}

DensityRatio::DensityRatio(Vector ratios) : ratios_(std::move(ratios)) {
  if ((ratios_.array() < 0.0).any()) {
    throw std::invalid_argument("DensityRatio: negative ratio");
  }
}

double kl_divergence(const DiscreteMeasure& nu, const DiscreteMeasure& mu) {
  if (!nu.same_support(mu)) {
    throw std::invalid_argument("incompatible supports");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < nu.size(); ++i) {
    const double ni = nu.weights()[i];
    if (ni == 0.0) continue;
    const double mi = mu.weights()[i];
    if (mi == 0.0) return std::numeric_limits<double>::infinity();
    total += ni * std::log(ni / mi);
  }
  return total;
}

double safe_kl_divergence(const DiscreteMeasure& nu, const DiscreteMeasure& mu,
                          const Rho& rho) {
  if (!nu.same_support(mu)) {
    throw std::invalid_argument("incompatible supports");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < nu.size(); ++i) {
    const double ni = nu.weights()[i];
    const double mi = mu.weights()[i];
    if (mi == 0.0) {
      if (ni > 0.0) return std::numeric_limits<double>::infinity();
      continue;
    }
    const double value = f_rho(ni / mi, rho);
    if (std::isinf(value)) return value;
    total += mi * value;
  }
  return total;
}

DensityRatio optimal_tilt(const PotentialValues& phi, const DiscreteMeasure& mu,
                          const Rho& rho, double alpha_star) {
  if (phi.size() != mu.size()) {
    throw std::invalid_argument("incompatible supports");
  }
  Vector ratios(phi.size());
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    ratios[i] = sigma_rho(phi.values()[i] - alpha_star, rho);
  }
  const double mass = ratios.dot(mu.weights());
  if (std::abs(mass - 1.0) > 1e-6) {
    throw std::invalid_argument("alpha not optimal");
  }
  return DensityRatio(std::move(ratios));
}

}  // namespace safelse
