#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "safelse/rng.hpp"
#include "safelse/safe_lse.hpp"

using namespace safelse;

namespace {
const double kLog2 = std::log(2.0);

struct Instance {
  PotentialValues phi;
  DiscreteMeasure mu;
};

Instance random_instance(RngStream& rng, int max_atoms = 12) {
  const Eigen::Index n =
      1 + static_cast<Eigen::Index>(rng.uniform_int(max_atoms));
  Vector phi(n), w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    phi[i] = 8.0 * rng.uniform() - 4.0;
    w[i] = rng.uniform() + 1e-3;
  }
  w /= w.sum();
  return {PotentialValues(phi), DiscreteMeasure(w)};
}

double alpha_residual(const PotentialValues& phi, const DiscreteMeasure& mu,
                      const Rho& rho, double alpha) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    s += mu.weights()[i] * sigma_rho(phi.values()[i] - alpha, rho);
  }
  return s - 1.0;
}
}  // namespace

TEST_CASE("log_partition") {
  const DiscreteMeasure uniform2 = DiscreteMeasure::uniform(2);
  CHECK(log_partition(PotentialValues(Vector::Constant(5, 2.5)),
                      DiscreteMeasure::uniform(5)) ==
        doctest::Approx(2.5).epsilon(1e-14));
  CHECK(log_partition(PotentialValues(Vector::Zero(2)), uniform2) ==
        doctest::Approx(0.0));
  Vector w(2), phi(2);
  w << 0.3, 0.7;
  phi << 1.0, 2.0;
  CHECK(log_partition(PotentialValues(phi), DiscreteMeasure(w)) ==
        doctest::Approx(std::log(0.3 * std::exp(1.0) + 0.7 * std::exp(2.0)))
            .epsilon(1e-14));
  // Zero-weight atoms are skipped.
  Vector w0(2), phi0(2);
  w0 << 1.0, 0.0;
  phi0 << 0.5, 1e6;  // the dead atom must not contribute
  CHECK(log_partition(PotentialValues(phi0), DiscreteMeasure(w0)) ==
        doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("solve_alpha closed forms") {
  SUBCASE("single atom") {
    for (const double r : {0.1, 0.3, 0.7}) {
      const double c = -1.3;
      const double alpha = solve_alpha(PotentialValues(Vector::Constant(1, c)),
                                       DiscreteMeasure::uniform(1), Rho(r),
                                       1e-13);
      CHECK(alpha == doctest::Approx(c + std::log(1.0 - r)).epsilon(1e-11));
    }
  }
  SUBCASE("constant potential on uniform measure") {
    const double c = 2.4;
    const double alpha =
        solve_alpha(PotentialValues(Vector::Constant(6, c)),
                    DiscreteMeasure::uniform(6), Rho(0.35), 1e-13);
    CHECK(alpha == doctest::Approx(c + std::log(0.65)).epsilon(1e-11));
  }
  SUBCASE("grid-scan oracle on the two-atom instance") {
    Vector phi_values(2);
    phi_values << 0.0, 1.0;
    const PotentialValues phi(phi_values);
    const DiscreteMeasure mu = DiscreteMeasure::uniform(2);
    const Rho rho(0.3);
    const double alpha = solve_alpha(phi, mu, rho, 1e-12);
    CHECK(std::abs(alpha_residual(phi, mu, rho, alpha)) <= 1e-12);

    // 1e7-point scan for the sign change of the monotone residual.
    const double f = log_partition(phi, mu);
    const double lo = f - 5.0, hi = f;
    const long points = 10000000;
    const double step = (hi - lo) / static_cast<double>(points);
    double bracket = lo;
    double r_prev = alpha_residual(phi, mu, rho, lo);
    for (long j = 1; j <= points; ++j) {
      const double a = lo + step * static_cast<double>(j);
      const double r_here = alpha_residual(phi, mu, rho, a);
      if (r_prev > 0.0 && r_here <= 0.0) {
        bracket = a;
        break;
      }
      r_prev = r_here;
    }
    CHECK(std::abs(alpha - bracket) <= 2.0 * step);
  }
  SUBCASE("Bouchard mode has no stationary alpha") {
    CHECK_THROWS_WITH_AS(
        solve_alpha(PotentialValues(Vector::Zero(3)),
                    DiscreteMeasure::uniform(3), Rho::bouchard(), 1e-12),
        "bracketing failed", std::runtime_error);
  }
}

TEST_CASE("safe_log_partition") {
  SUBCASE("single atom closed form and Prop 1(iv) gap") {
    const double c = 1.7;
    const SafeLseSolution sol =
        safe_log_partition(PotentialValues(Vector::Constant(1, c)),
                           DiscreteMeasure::uniform(1), Rho(0.5));
    const double expected = c - 1.0 + (1.0 - 2.0) * std::log(0.5);
    CHECK(sol.value == doctest::Approx(expected).epsilon(1e-12));
    CHECK(sol.value == doctest::Approx(c - 0.30685281944005469).epsilon(1e-12));
    CHECK(c - sol.value <= 0.5);  // rho e^{M-F} = 0.5
    CHECK(sol.alpha_star < c);
    CHECK(sol.residual <= 1e-12);
  }
  SUBCASE("constant potential reduces to the single-atom case") {
    const double c = -0.4;
    const SafeLseSolution one =
        safe_log_partition(PotentialValues(Vector::Constant(1, c)),
                           DiscreteMeasure::uniform(1), Rho(0.2));
    const SafeLseSolution many =
        safe_log_partition(PotentialValues(Vector::Constant(7, c)),
                           DiscreteMeasure::uniform(7), Rho(0.2));
    CHECK(many.value == doctest::Approx(one.value).epsilon(1e-11));
  }
  SUBCASE("monotone in rho and below the log-partition") {
    RngStream rng(17, 0);
    for (int k = 0; k < 100; ++k) {
      const Instance inst = random_instance(rng);
      const double f = log_partition(inst.phi, inst.mu);
      double previous = -std::numeric_limits<double>::infinity();
      for (const double r : {0.5, 0.1, 0.01}) {
        const SafeLseSolution sol =
            safe_log_partition(inst.phi, inst.mu, Rho(r));
        CHECK(sol.value <= f + 1e-9);
        CHECK(sol.value >= previous - 1e-9);
        CHECK(sol.alpha_star < f);
        CHECK(sol.residual <= 1e-12);
        previous = sol.value;
      }
    }
  }
  SUBCASE("Bouchard mode returns the analytic limit") {
    Vector phi(2), w(2);
    phi << 1.0, 3.0;
    w << 0.25, 0.75;
    const SafeLseSolution sol = safe_log_partition(
        PotentialValues(phi), DiscreteMeasure(w), Rho::bouchard());
    CHECK(sol.value == doctest::Approx(0.25 * 1.0 + 0.75 * 3.0 - 1.0));
    CHECK(sol.alpha_star == -std::numeric_limits<double>::infinity());
  }
}

TEST_CASE("safe_logsumexp") {
  SUBCASE("frozen two-zeros instance") {
    Vector a(2);
    a << 0.0, 0.0;
    const double value = safe_logsumexp(a, Rho(0.3));
    CHECK(value == doctest::Approx(0.6140877810473365).epsilon(1e-12));
    CHECK(value >= kLog2 - 0.3);
    CHECK(value <= kLog2);
  }
  SUBCASE("single entry closed form") {
    for (const double r : {0.15, 0.6}) {
      Vector a(1);
      a << -2.2;
      CHECK(safe_logsumexp(a, Rho(r)) ==
            doctest::Approx(-2.2 - 1.0 + (1.0 - 1.0 / r) * std::log(1.0 - r))
                .epsilon(1e-11));
    }
  }
  SUBCASE("shift property") {
    RngStream rng(9, 0);
    for (int k = 0; k < 50; ++k) {
      Vector a(4);
      for (int i = 0; i < 4; ++i) a[i] = 10.0 * rng.uniform() - 5.0;
      const double c = 30.0 * (2.0 * rng.uniform() - 1.0);
      const Rho rho(0.2);
      CHECK(std::abs(safe_logsumexp((a.array() + c).matrix().eval(), rho) -
                     (safe_logsumexp(a, rho) + c)) <= 1e-10);
    }
  }
  SUBCASE("matches log n + weighted form at rho/n") {
    RngStream rng(29, 0);
    for (int k = 0; k < 30; ++k) {
      const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.uniform_int(9));
      Vector a(n);
      for (Eigen::Index i = 0; i < n; ++i) a[i] = 12.0 * rng.uniform() - 6.0;
      const double r = 0.05 + 0.9 * rng.uniform();
      const double direct = safe_logsumexp(a, Rho(r));
      const double via_measure =
          std::log(static_cast<double>(n)) +
          safe_log_partition(PotentialValues(a), DiscreteMeasure::uniform(n),
                             Rho(r / static_cast<double>(n)))
              .value;
      CHECK(direct == doctest::Approx(via_measure).epsilon(1e-10));
    }
  }
  SUBCASE("sandwich on random vectors") {
    RngStream rng(31, 0);
    for (int k = 0; k < 200; ++k) {
      const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.uniform_int(64));
      Vector a(n);
      for (Eigen::Index i = 0; i < n; ++i) a[i] = 40.0 * rng.uniform() - 20.0;
      const double lse = logsumexp(a);
      for (const double r : {0.03, 0.3}) {
        const double value = safe_logsumexp(a, Rho(r));
        CHECK(value >= lse - r - 1e-9);
        CHECK(value <= lse + 1e-9);
      }
    }
  }
  SUBCASE("Bouchard mode") {
    Vector single(1);
    single << 4.2;
    CHECK(safe_logsumexp(single, Rho::bouchard()) ==
          doctest::Approx(3.2).epsilon(1e-14));
    Vector a(2);
    a << 0.0, 0.0;
    const double value = safe_logsumexp(a, Rho::bouchard());
    CHECK(value >= kLog2 - 1.0 - 1e-9);
    CHECK(value <= kLog2 + 1e-9);
  }
  CHECK_THROWS_WITH_AS(safe_logsumexp(Vector(0), Rho(0.5)), "empty vector",
                       std::invalid_argument);
}

TEST_CASE("cvar") {
  Vector phi(4);
  phi << 1.0, 2.0, 3.0, 4.0;
  const DiscreteMeasure uniform4 = DiscreteMeasure::uniform(4);
  CHECK(cvar(PotentialValues(phi), uniform4, Rho(0.5)) ==
        doctest::Approx(3.5).epsilon(1e-14));
  CHECK(cvar(PotentialValues(phi), uniform4, Rho(0.25)) ==
        doctest::Approx(4.0).epsilon(1e-14));
  CHECK(cvar(PotentialValues(Vector::Constant(6, -2.0)),
             DiscreteMeasure::uniform(6), Rho(0.33)) ==
        doctest::Approx(-2.0).epsilon(1e-14));

  SUBCASE("variational value matches a dense alpha grid") {
    RngStream rng(41, 0);
    for (int k = 0; k < 20; ++k) {
      const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.uniform_int(7));
      Vector values(n), w(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        values[i] = 10.0 * rng.uniform() - 5.0;
        w[i] = rng.uniform() + 0.05;
      }
      w /= w.sum();
      const double r = 0.1 + 0.8 * rng.uniform();
      const double exact =
          cvar(PotentialValues(values), DiscreteMeasure(w), Rho(r));
      double grid_best = std::numeric_limits<double>::infinity();
      const double lo = values.minCoeff() - 1.0, hi = values.maxCoeff() + 1.0;
      for (int j = 0; j <= 20000; ++j) {
        const double alpha = lo + (hi - lo) * j / 20000.0;
        double acc = alpha;
        for (Eigen::Index i = 0; i < n; ++i) {
          acc += w[i] * std::max(values[i] - alpha, 0.0) / r;
        }
        grid_best = std::min(grid_best, acc);
      }
      CHECK(exact <= grid_best + 1e-12);
      CHECK(exact >= grid_best - 1e-3);  // grid resolution slack
    }
  }
  SUBCASE("sorted-tail mean when rho n is integral") {
    Vector values(5);
    values << 0.3, -1.2, 4.0, 2.5, 2.5;
    Vector sorted = values;
    std::sort(sorted.data(), sorted.data() + 5, std::greater<double>());
    for (int top = 1; top < 5; ++top) {
      const double level = static_cast<double>(top) / 5.0;
      CHECK(cvar(PotentialValues(values), DiscreteMeasure::uniform(5),
                 Rho(level)) == doctest::Approx(sorted.head(top).mean()));
    }
  }
  SUBCASE("rho -> 1 recovers the mean") {
    Vector values(4);
    values << 1.0, 2.0, 3.0, 4.0;
    CHECK(cvar(PotentialValues(values), DiscreteMeasure::uniform(4),
               Rho::bouchard()) == doctest::Approx(2.5).epsilon(1e-14));
  }
}

TEST_CASE("cvar_sandwich") {
  Vector phi(4);
  phi << 1.0, 2.0, 3.0, 4.0;
  const PotentialValues pot(phi);
  const DiscreteMeasure uniform4 = DiscreteMeasure::uniform(4);

  SUBCASE("unit lambda example") {
    const BoundCertificate cert = cvar_sandwich(pot, uniform4, Rho(0.5), 1.0);
    CHECK(cert.lower == doctest::Approx(3.5 + std::log(0.5) - 1.0));
    CHECK(cert.upper == doctest::Approx(cert.lower + 2.0));
    CHECK(cert.holds());
  }
  SUBCASE("large lambda keeps the certificate with width lambda/rho") {
    const BoundCertificate cert = cvar_sandwich(pot, uniform4, Rho(0.5), 100.0);
    CHECK(cert.upper - cert.lower == doctest::Approx(100.0 / 0.5));
    CHECK(cert.holds());
  }
  SUBCASE("constant potential") {
    const BoundCertificate cert =
        cvar_sandwich(PotentialValues(Vector::Constant(3, 0.8)),
                      DiscreteMeasure::uniform(3), Rho(0.3), 2.0);
    CHECK(cert.holds());
    CHECK(cert.lower == doctest::Approx(0.8 + 2.0 * (std::log(0.3) - 1.0)));
  }
  SUBCASE("random instances across the lambda/rho grid") {
    RngStream rng(47, 0);
    for (int k = 0; k < 100; ++k) {
      const Instance inst = random_instance(rng);
      for (const double lambda : {0.1, 1.0, 10.0}) {
        for (const double r : {0.1, 0.5}) {
          CHECK(cvar_sandwich(inst.phi, inst.mu, Rho(r), lambda).holds());
        }
      }
    }
  }
}

TEST_CASE("prop1_bounds") {
  SUBCASE("single atom at rho = 0.1") {
    const double c = -0.9;
    const BoundCertificate cert =
        prop1_bounds(PotentialValues(Vector::Constant(1, c)),
                     DiscreteMeasure::uniform(1), Rho(0.1));
    CHECK(cert.upper == doctest::Approx(c).epsilon(1e-12));
    CHECK(cert.lower >= c - 0.1 - 1e-12);
    CHECK(cert.witness ==
          doctest::Approx(c - 0.05175535907956329).epsilon(1e-10));
    CHECK(cert.holds());
  }
  SUBCASE("uniform constant matches the single atom") {
    const double c = 0.6;
    const BoundCertificate one =
        prop1_bounds(PotentialValues(Vector::Constant(1, c)),
                     DiscreteMeasure::uniform(1), Rho(0.1));
    const BoundCertificate many =
        prop1_bounds(PotentialValues(Vector::Constant(4, c)),
                     DiscreteMeasure::uniform(4), Rho(0.1));
    CHECK(one.witness == doctest::Approx(many.witness).epsilon(1e-11));
    CHECK(one.lower == doctest::Approx(many.lower).epsilon(1e-11));
  }
  SUBCASE("random instances at small rho hold with slack") {
    RngStream rng(53, 0);
    for (int k = 0; k < 50; ++k) {
      const Instance inst = random_instance(rng, 10);
      const BoundCertificate cert =
          prop1_bounds(inst.phi, inst.mu, Rho(1e-3));
      CHECK(cert.holds());
      CHECK(cert.upper - cert.witness >= -1e-9);
    }
  }
  SUBCASE("rho too large for either branch") {
    Vector phi(2), w(2);
    phi << 0.0, 20.0;
    w << 0.999999, 1e-6;
    CHECK_THROWS_WITH_AS(
        prop1_bounds(PotentialValues(phi), DiscreteMeasure(w), Rho(0.5)),
        "rho too large for bound", std::runtime_error);
  }
}
