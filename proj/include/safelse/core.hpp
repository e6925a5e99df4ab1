#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <stdexcept>

// Numerically stable scalar kernels shared by every other module: SoftPlus,
// LogSumExp, the logistic family sigma_rho, the entropy generator f_rho and
// its conjugate. All functions are pure and thread-safe.

namespace safelse {

/// Accuracy parameter of the rescaled-SoftPlus approximation.
/// Regular construction requires 0 < value < 1; value = 1 (where the
/// approximation degenerates to Bouchard's bound) is only reachable through
/// the explicit bouchard() factory.
class Rho {
 public:
  explicit Rho(double value) : value_(value) {
    if (!(value > 0.0 && value < 1.0)) {
      throw std::invalid_argument("Rho: value must satisfy 0 < value < 1");
    }
  }

  static Rho bouchard() { return Rho(1.0, BouchardTag{}); }

  double value() const { return value_; }
  double log() const { return std::log(value_); }
  bool is_bouchard() const { return value_ == 1.0; }

 private:
  struct BouchardTag {};
  Rho(double value, BouchardTag) : value_(value) {}
  double value_;
};

/// log(1 + e^x) without intermediate overflow.
template <typename Scalar>
Scalar softplus_stable(Scalar x) {
  if (x > Scalar(0)) {
    return x + std::log1p(std::exp(-x));
  }
  return std::log1p(std::exp(x));
}

/// e^x / (1 + e^x), saturating instead of overflowing.
template <typename Scalar>
Scalar logistic(Scalar x) {
  if (x >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// log sum_i e^{a_i} via the max shift. Entries may be -inf (they contribute
/// nothing); the vector must be nonempty.
template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  if (a.size() == 0) {
    throw std::invalid_argument("logsumexp: empty vector");
  }
  const Scalar m = a.maxCoeff();
  if (!(m > -std::numeric_limits<Scalar>::infinity())) {
    return -std::numeric_limits<Scalar>::infinity();
  }
  return m + std::log((a.array() - m).exp().sum());
}

/// sigma_rho(t) = e^t / (1 + rho e^t), computed as logistic(t + ln rho)/rho.
/// Range (0, 1/rho); this is the derivative of f_rho_star.
inline double sigma_rho(double t, const Rho& rho) {
  return logistic(t + rho.log()) / rho.value();
}

/// d/dt sigma_rho(t) = sigma_rho (1 - rho sigma_rho).
inline double sigma_rho_deriv(double t, const Rho& rho) {
  const double s = sigma_rho(t, rho);
  return s * (1.0 - rho.value() * s);
}

/// Entropy generator t log t + 1 + ((1 - rho t)/rho) log(1 - rho t) on
/// [0, 1/rho], +inf outside; 0 log 0 = 0 at both endpoints.
inline double f_rho(double t, const Rho& rho) {
  const double r = rho.value();
  const double u = 1.0 - r * t;
  if (t < 0.0 || u < 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  const double entropy = (t > 0.0) ? t * std::log(t) : 0.0;
  const double cap_term = (u > 0.0) ? (u / r) * std::log(u) : 0.0;
  return entropy + 1.0 + cap_term;
}

/// Convex conjugate of f_rho: (1/rho) log(1 + rho e^s) - 1, a rescaled
/// SoftPlus; finite for every finite s.
inline double f_rho_star(double s, const Rho& rho) {
  return softplus_stable(s + rho.log()) / rho.value() - 1.0;
}

/// Second derivative 1/t + rho/(1 - rho t) of f_rho on the open interval
/// (0, 1/rho). Lower-bounded by rho (strong convexity witness).
inline double f_rho_second(double t, const Rho& rho) {
  const double r = rho.value();
  if (!(t > 0.0 && r * t < 1.0)) {
    throw std::domain_error("f_rho_second: outside domain");
  }
  return 1.0 / t + r / (1.0 - r * t);
}

/// Standard logistic derivative sigma'(x) = sigma(x)(1 - sigma(x)).
template <typename Scalar>
Scalar logistic_deriv(Scalar x) {
  const Scalar s = logistic(x);
  return s * (Scalar(1) - s);
}

}  // namespace safelse
