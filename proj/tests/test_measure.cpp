#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "safelse/measure.hpp"
#include "safelse/rng.hpp"
#include "safelse/safe_lse.hpp"

using namespace safelse;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
const double kLog2 = std::log(2.0);

DiscreteMeasure measure2(double w0, double w1) {
  Vector w(2);
  w << w0, w1;
  return DiscreteMeasure(w);
}
}  // namespace

TEST_CASE("DiscreteMeasure invariants") {
  Vector w(2);
  w << 0.6, 0.5;
  CHECK_THROWS(DiscreteMeasure(w));
  w << -0.1, 1.1;
  CHECK_THROWS(DiscreteMeasure(w));
  CHECK_THROWS(DiscreteMeasure(Vector(0)));
  const DiscreteMeasure uniform = DiscreteMeasure::uniform(4);
  CHECK(uniform.size() == 4);
  CHECK(uniform.weights().sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("PotentialValues rejects non-finite entries") {
  Vector v(2);
  v << 1.0, kInf;
  CHECK_THROWS(PotentialValues(v));
  v << 1.0, std::nan("");
  CHECK_THROWS(PotentialValues(v));
}

TEST_CASE("kl_divergence cases") {
  CHECK(kl_divergence(measure2(0.5, 0.5), measure2(0.5, 0.5)) == 0.0);
  CHECK(kl_divergence(measure2(1.0, 0.0), measure2(0.5, 0.5)) ==
        doctest::Approx(kLog2).epsilon(1e-15));
  CHECK(kl_divergence(measure2(0.5, 0.5), measure2(1.0, 0.0)) == kInf);

  // Mismatched atom coordinates are incompatible supports.
  Matrix atoms_a(2, 1), atoms_b(2, 1);
  atoms_a << 0.0, 1.0;
  atoms_b << 0.0, 2.0;
  Vector w(2);
  w << 0.5, 0.5;
  const DiscreteMeasure a(w, atoms_a);
  const DiscreteMeasure b(w, atoms_b);
  CHECK_THROWS_WITH_AS(kl_divergence(a, b), "incompatible supports",
                       std::invalid_argument);
  CHECK_THROWS_AS(kl_divergence(a, DiscreteMeasure::uniform(3)),
                  std::invalid_argument);
}

TEST_CASE("safe_kl_divergence values") {
  const Rho half(0.5);
  // D_rho(mu, mu) = f_rho(1) = 1 - log 2 > 0, unlike the plain KL.
  CHECK(safe_kl_divergence(measure2(0.5, 0.5), measure2(0.5, 0.5), half) ==
        doctest::Approx(1.0 - kLog2).epsilon(1e-14));
  // Ratios 1.8 and 0.2 stay below 1/rho = 2: finite, matches the f_rho oracle.
  CHECK(safe_kl_divergence(measure2(0.9, 0.1), measure2(0.5, 0.5), half) ==
        doctest::Approx(0.5 * f_rho(1.8, half) + 0.5 * f_rho(0.2, half))
            .epsilon(1e-14));
  CHECK(safe_kl_divergence(measure2(0.9, 0.1), measure2(0.5, 0.5), half) ==
        doctest::Approx(1.0429812337770488).epsilon(1e-13));
  // Ratio 2 above the cap 1/0.6.
  CHECK(safe_kl_divergence(measure2(1.0, 0.0), measure2(0.5, 0.5), Rho(0.6)) ==
        kInf);
  // Absolute-continuity failure.
  CHECK(safe_kl_divergence(measure2(0.5, 0.5), measure2(1.0, 0.0), half) ==
        kInf);
}

TEST_CASE("safe KL dominates KL and converges as rho -> 0") {
  RngStream rng(21, 0);
  for (int k = 0; k < 100; ++k) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.uniform_int(6));
    Vector wn(n), wm(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      wn[i] = rng.uniform() + 0.05;
      wm[i] = rng.uniform() + 0.05;
    }
    wn /= wn.sum();
    wm /= wm.sum();
    const DiscreteMeasure nu(wn), mu(wm);
    const double kl = kl_divergence(nu, mu);
    const double max_ratio = (wn.array() / wm.array()).maxCoeff();

    double previous = kInf;
    for (const double r : {1e-1, 1e-2, 1e-4, 1e-6}) {
      if (max_ratio >= 1.0 / r) continue;
      const double safe = safe_kl_divergence(nu, mu, Rho(r));
      CHECK(safe >= kl - 1e-12);
      CHECK(safe <= previous + 1e-12);  // decreasing toward KL as rho drops
      previous = safe;
    }
    if (std::isfinite(previous)) {
      CHECK(previous - kl <= 1e-3);  // rho = 1e-6 sits close to KL
    }
  }
}

TEST_CASE("optimal_tilt") {
  SUBCASE("single atom is forced to ratio one") {
    const DiscreteMeasure mu = DiscreteMeasure::uniform(1);
    const PotentialValues phi(Vector::Constant(1, 3.7));
    const Rho rho(0.4);
    const double alpha = solve_alpha(phi, mu, rho, 1e-13);
    const DensityRatio tilt = optimal_tilt(phi, mu, rho, alpha);
    CHECK(tilt.ratios()[0] == doctest::Approx(1.0).epsilon(1e-10));
  }

  SUBCASE("constant potential on uniform measure keeps ratios at one") {
    const DiscreteMeasure mu = DiscreteMeasure::uniform(5);
    const PotentialValues phi(Vector::Constant(5, -1.2));
    const Rho rho(0.25);
    const double alpha = solve_alpha(phi, mu, rho, 1e-13);
    const DensityRatio tilt = optimal_tilt(phi, mu, rho, alpha);
    for (Eigen::Index i = 0; i < 5; ++i) {
      CHECK(tilt.ratios()[i] == doctest::Approx(1.0).epsilon(1e-10));
    }
  }

  SUBCASE("bisection-solved alpha normalizes the tilt") {
    Vector phi_values(2);
    phi_values << 0.0, 1.0;
    const PotentialValues phi(phi_values);
    const DiscreteMeasure mu = DiscreteMeasure::uniform(2);
    const Rho rho(0.3);
    const double alpha = solve_alpha(phi, mu, rho, 1e-12);
    const DensityRatio tilt = optimal_tilt(phi, mu, rho, alpha);
    CHECK(std::abs(tilt.ratios().dot(mu.weights()) - 1.0) <= 1e-8);
  }

  SUBCASE("non-optimal alpha is rejected") {
    Vector phi_values(2);
    phi_values << 0.0, 1.0;
    const PotentialValues phi(phi_values);
    const DiscreteMeasure mu = DiscreteMeasure::uniform(2);
    CHECK_THROWS_WITH_AS(optimal_tilt(phi, mu, Rho(0.3), 25.0),
                         "alpha not optimal", std::invalid_argument);
  }

  SUBCASE("ratios always stay under the 1/rho cap") {
    RngStream rng(33, 0);
    for (int k = 0; k < 50; ++k) {
      const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.uniform_int(8));
      Vector phi_values(n), w(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        phi_values[i] = 6.0 * rng.uniform() - 3.0;
        w[i] = rng.uniform() + 0.02;
      }
      w /= w.sum();
      const double r = 0.05 + 0.9 * rng.uniform();
      const PotentialValues phi(phi_values);
      const DiscreteMeasure mu{w};
      const Rho rho(r);
      const double alpha = solve_alpha(phi, mu, rho, 1e-12);
      const DensityRatio tilt = optimal_tilt(phi, mu, rho, alpha);
      CHECK(tilt.ratios().maxCoeff() < 1.0 / r);
      CHECK(tilt.ratios().minCoeff() > 0.0);
    }
  }
}
