#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "safelse/core.hpp"
#include "safelse/rng.hpp"

using namespace safelse;
using Eigen::VectorXd;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
const double kLog2 = std::log(2.0);
}  // namespace

TEST_CASE("Rho construction guards") {
  CHECK_THROWS(Rho(0.0));
  CHECK_THROWS(Rho(1.0));
  CHECK_THROWS(Rho(-0.3));
  CHECK_THROWS(Rho(1.5));
  CHECK(Rho(0.5).value() == 0.5);
  CHECK(Rho::bouchard().value() == 1.0);
  CHECK(Rho::bouchard().is_bouchard());
  CHECK_FALSE(Rho(0.999).is_bouchard());
}

TEST_CASE("softplus_stable at the markers") {
  CHECK(softplus_stable(0.0) == doctest::Approx(kLog2).epsilon(1e-15));
  CHECK(softplus_stable(1000.0) == 1000.0);
  // High-precision evaluation of log1p(exp(-50)); identical to e^{-50} at
  // double resolution.
  CHECK(softplus_stable(-50.0) ==
        doctest::Approx(1.9287498479639178e-22).epsilon(1e-15));
}

TEST_CASE("softplus reflection identity") {
  RngStream rng(42, 0);
  for (int k = 0; k < 200; ++k) {
    const double x = 100.0 * (2.0 * rng.uniform() - 1.0);
    CHECK(std::abs(softplus_stable(x) - softplus_stable(-x) - x) <= 1e-12);
  }
}

TEST_CASE("logsumexp values and shift invariance") {
  VectorXd a2(2);
  a2 << 0.0, 0.0;
  CHECK(logsumexp(a2) == doctest::Approx(kLog2).epsilon(1e-15));
  a2 << 1000.0, 1000.0;
  CHECK(logsumexp(a2) == doctest::Approx(1000.0 + kLog2).epsilon(1e-15));
  VectorXd a3(3);
  a3 << 1.0, 2.0, 3.0;
  CHECK(logsumexp(a3) == doctest::Approx(3.40760596444438).epsilon(1e-14));

  VectorXd empty(0);
  CHECK_THROWS_WITH_AS(logsumexp(empty), "logsumexp: empty vector",
                       std::invalid_argument);

  RngStream rng(7, 0);
  for (int k = 0; k < 100; ++k) {
    VectorXd a(5);
    for (int i = 0; i < 5; ++i) a[i] = 40.0 * rng.uniform() - 20.0;
    const double c = 50.0 * (2.0 * rng.uniform() - 1.0);
    CHECK(std::abs(logsumexp((a.array() + c).matrix().eval()) -
                   (logsumexp(a) + c)) <= 1e-12);
  }
}

TEST_CASE("sigma_rho values, range and monotonicity") {
  CHECK(sigma_rho(0.0, Rho::bouchard()) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sigma_rho(0.0, Rho(0.5)) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  for (const double r : {0.03, 0.1, 0.5, 0.9}) {
    CHECK(std::abs(sigma_rho(1e4, Rho(r)) - 1.0 / r) <= 1e-12 / r);
  }
  RngStream rng(11, 0);
  for (int k = 0; k < 300; ++k) {
    const double r = 0.02 + 0.96 * rng.uniform();
    const double t1 = 60.0 * rng.uniform() - 30.0;
    const double t2 = t1 + 5.0 * rng.uniform();
    const Rho rho(r);
    const double s1 = sigma_rho(t1, rho);
    const double s2 = sigma_rho(t2, rho);
    CHECK(s1 > 0.0);
    CHECK(s1 < 1.0 / r);
    if (t2 > t1) CHECK(s2 > s1);
    // 1/rho-smoothness of the conjugate.
    CHECK(std::abs(s2 - s1) <= std::abs(t2 - t1) / r + 1e-12);
  }
}

TEST_CASE("f_rho branches and endpoint conventions") {
  const Rho half(0.5);
  CHECK(f_rho(0.0, half) == 1.0);
  CHECK(f_rho(0.0, Rho(0.123)) == 1.0);
  CHECK(f_rho(2.0, half) ==
        doctest::Approx(2.0 * kLog2 + 1.0).epsilon(1e-15));  // t = 1/rho
  CHECK(f_rho(2.0, Rho(0.6)) == kInf);
  CHECK(f_rho(-0.5, half) == kInf);
  CHECK(f_rho(1.0, half) == doctest::Approx(1.0 - kLog2).epsilon(1e-15));
}

TEST_CASE("f_rho converges to the KL generator as rho -> 0") {
  const auto f0 = [](double t) { return t * std::log(t) + 1.0 - t; };
  RngStream rng(5, 0);
  for (int k = 0; k < 50; ++k) {
    const double t = 0.05 + 9.9 * rng.uniform();
    double previous = kInf;
    for (const double r : {1e-2, 1e-4, 1e-6}) {
      const double gap = std::abs(f_rho(t, Rho(r)) - f0(t));
      CHECK(gap < previous);
      previous = gap;
    }
  }
}

TEST_CASE("f_rho_star closed forms and asymptote") {
  CHECK(f_rho_star(0.0, Rho::bouchard()) ==
        doctest::Approx(kLog2 - 1.0).epsilon(1e-15));
  const double expected = (1000.0 + std::log(0.1)) / 0.1 - 1.0;
  CHECK(f_rho_star(1000.0, Rho(0.1)) ==
        doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("f_rho_star is the Legendre transform of f_rho") {
  const Rho rho(0.3);
  const double s = 0.7;
  double best = -kInf;
  const Eigen::Index grid = 1000000;
  const double cap = 1.0 / rho.value();
  for (Eigen::Index j = 0; j <= grid; ++j) {
    const double t = cap * static_cast<double>(j) / static_cast<double>(grid);
    best = std::max(best, s * t - f_rho(t, rho));
  }
  CHECK(std::abs(f_rho_star(s, rho) - best) <= 1e-6);
}

TEST_CASE("derivative of f_rho_star equals sigma_rho") {
  RngStream rng(3, 0);
  const double h = 1e-6;
  for (int k = 0; k < 100; ++k) {
    const double r = 0.02 + 0.96 * rng.uniform();
    const double s = 20.0 * rng.uniform() - 10.0;
    const Rho rho(r);
    const double numeric =
        (f_rho_star(s + h, rho) - f_rho_star(s - h, rho)) / (2.0 * h);
    const double exact = sigma_rho(s, rho);
    CHECK(std::abs(numeric - exact) <= 1e-6 * std::max(1.0, std::abs(exact)));
  }
}

TEST_CASE("f_rho_second values and strong-convexity floor") {
  CHECK(f_rho_second(1.0 / (2.0 * 0.25), Rho(0.25)) ==
        doctest::Approx(1.0).epsilon(1e-15));
  CHECK(f_rho_second(1.0, Rho(0.5)) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK_THROWS_AS(f_rho_second(0.0, Rho(0.5)), std::domain_error);
  CHECK_THROWS_AS(f_rho_second(2.0, Rho(0.5)), std::domain_error);
  CHECK_THROWS_AS(f_rho_second(-1.0, Rho(0.5)), std::domain_error);
  for (int a = 1; a < 40; ++a) {
    const double r = a / 41.0;
    for (int b = 1; b < 40; ++b) {
      const double t = (1.0 / r) * b / 40.0;
      CHECK(f_rho_second(t, Rho(r)) >= r);
    }
  }
}

TEST_CASE("scalar facts behind the smoothness proof") {
  // h(t) = sigma(t) + 2 t sigma'(t) < 4/3 on a dense grid over [-50, 50].
  for (int j = 0; j <= 20000; ++j) {
    const double t = -50.0 + 100.0 * j / 20000.0;
    CHECK(logistic(t) + 2.0 * t * logistic_deriv(t) < 4.0 / 3.0);
  }
  // sigma(x) + 2 sigma'(x)(x - a) <= 2 - a/2 for a <= 0, x >= a.
  RngStream rng(13, 0);
  for (int k = 0; k < 500; ++k) {
    const double a = -12.0 * rng.uniform();
    const double x = a + 30.0 * rng.uniform();
    CHECK(logistic(x) + 2.0 * logistic_deriv(x) * (x - a) <=
          2.0 - a / 2.0 + 1e-12);
  }
}

TEST_CASE("logistic saturates instead of overflowing") {
  CHECK(logistic(800.0) == 1.0);
  CHECK(logistic(-800.0) == doctest::Approx(0.0));
  CHECK(std::isfinite(logistic(-800.0)));
  CHECK(logistic(0.0f) == 0.5f);
}
