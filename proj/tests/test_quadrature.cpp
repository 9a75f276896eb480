#include <doctest.h>

#include "quadrature.hpp"

using namespace ccdfse;

TEST_CASE("fit_power_law on exact models") {
  {
    std::array<double, 3> x{125, 216, 343};
    std::array<double, 3> y;
    for (int i = 0; i < 3; ++i) y[i] = 2.0 + 3.0 / x[i];
    RateFit f = fit_power_law(x, y);
    CHECK(!f.no_power_law);
    CHECK(f.s == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(f.c0 == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(f.c1 == doctest::Approx(3.0).epsilon(1e-9));
  }
  {
    std::array<double, 3> x{216, 512, 1000};
    std::array<double, 3> y;
    for (int i = 0; i < 3; ++i) y[i] = 2.0 + 3.0 * std::pow(x[i], -1.0 / 3.0);
    RateFit f = fit_power_law(x, y);
    CHECK(f.s == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  }
  {
    std::array<double, 3> x{125, 216, 343};
    std::array<double, 3> y{5.0, 5.0, 5.0};
    RateFit f = fit_power_law(x, y);
    CHECK(f.no_power_law);
    CHECK(f.c0 == doctest::Approx(5.0));
  }
}

TEST_CASE("trapezoid exactness on constants and low harmonics") {
  auto c = [](const double*) { return 3.25; };
  CHECK(trapezoid(3, 2, 0.0, c) == doctest::Approx(3.25).epsilon(1e-15));
  CHECK(trapezoid(1, 7, 0.5, c) == doctest::Approx(3.25).epsilon(1e-15));
  auto h = [](const double* x) { return std::cos(2 * M_PI * x[0]); };
  for (int m : {2, 3, 5})
    CHECK(std::abs(trapezoid(3, m, 0.0, h)) < 1e-14);
}

TEST_CASE("class 1 periodized Gaussian integrates super-algebraically") {
  auto f = synthetic_integrand(1, 1, {}, {0.3, 0, 0});
  double ref = punctured_trapezoid(f, 512);
  CHECK(std::abs(punctured_trapezoid(f, 32) - ref) < 1e-10);
  // and d=3 at moderate size
  auto f3 = synthetic_integrand(1, 3, {}, {0.3, 0.1, 0.0});
  double ref3 = punctured_trapezoid(f3, 48);
  CHECK(std::abs(punctured_trapezoid(f3, 24) - ref3) < 1e-8);
}

TEST_CASE("punctured rule: no-op when the mesh avoids singular points") {
  auto f = synthetic_integrand(2, 3, {-2.0}, {0, 0, 0});
  // offset mesh never hits the origin
  double a = punctured_trapezoid(f, 4, 0.5);
  double b = trapezoid(3, 4, 0.5, f.f);
  CHECK(a == b);
}

TEST_CASE("puncturing an O(1) node shifts the rule by value/m^d") {
  // Smooth integrand; declare an artificial singular node at the origin.
  auto g = synthetic_integrand(1, 3, {}, {0.0, 0.0, 0.0});
  SingularIntegrand punct = g;
  punct.singular_node = [](const double* x) {
    return std::abs(x[0]) < 1e-10 && std::abs(x[1]) < 1e-10 && std::abs(x[2]) < 1e-10;
  };
  int m = 4;
  double with = punctured_trapezoid(punct, m);
  double without = trapezoid(3, m, 0.0, g.f);
  double zero[3] = {0, 0, 0};
  double node = g.f(zero);
  CHECK(without - with == doctest::Approx(node / (m * m * m)).epsilon(1e-12));
}

TEST_CASE("punctured value sequence converges for the gamma=-2 model") {
  auto f = synthetic_integrand(2, 3, {-2.0}, {0, 0, 0});
  double q8 = punctured_trapezoid(f, 8);
  double q16 = punctured_trapezoid(f, 16);
  double q32 = punctured_trapezoid(f, 32);
  double q64 = punctured_trapezoid(f, 64);
  CHECK(std::abs(q64 - q32) < std::abs(q32 - q16));
  CHECK(std::abs(q32 - q16) < std::abs(q16 - q8));
}

TEST_CASE("measure_rate reproduces d+gamma for class 2 (d=3)") {
  struct Case {
    double gamma, want;
  } cases[] = {{-2.0, 1.0}, {-1.0, 2.0}, {0.0, 3.0}};
  for (const auto& c : cases) {
    auto f = synthetic_integrand(2, 3, {c.gamma}, {0, 0, 0});
    auto r = measure_rate(f, {8, 12, 16, 24, 32});
    CHECK(r.exponent == doctest::Approx(c.want).epsilon(0.15 / c.want));
  }
}

TEST_CASE("measure_rate class 3 with a separated order-0 factor (d=3)") {
  auto f = synthetic_integrand(3, 3, {-2.0}, {1.0 / 3, 0, 0});
  auto r = measure_rate(f, {8, 12, 16, 24, 32});
  CHECK(r.exponent == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("estimate_order on exact power laws") {
  auto inv2 = [](const double* x) {
    double r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    return cplx(1.0 / r2, 0.0);
  };
  double origin[3] = {0, 0, 0};
  OrderEstimate est = estimate_order(3, inv2, origin);
  CHECK(est.singular_detected);
  CHECK(est.gamma_hat == doctest::Approx(-2.0).epsilon(0.05));

  auto smooth = [](const double* x) { return cplx(std::cos(x[0]) + x[1] * x[1], 0.0); };
  OrderEstimate s = estimate_order(3, smooth, origin);
  CHECK(!s.singular_detected);

  // Bounded order-0 anisotropy: x1^2/|x|^2.
  auto order0 = [](const double* x) {
    double r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    return cplx(x[0] * x[0] / r2, 0.0);
  };
  OrderEstimate o = estimate_order(3, order0, origin);
  CHECK(o.singular_detected);
  CHECK(o.gamma_hat == doctest::Approx(0.0).epsilon(0.1));
}

TEST_CASE("class-5 factors carry the declared orders") {
  auto f = synthetic_integrand(5, 3, {0.0, 0.0}, {0, 0, 0});
  REQUIRE(f.factors.size() == 3);
  double origin[3] = {0, 0, 0};
  for (const auto& factor : f.factors) {
    OrderEstimate est = estimate_order(3, factor.f, origin,
                                       OrderOptions{{0.12, 0.06, 0.03, 0.015}, 0.125, {}});
    CHECK(est.singular_detected);
    CHECK(est.gamma_hat == doctest::Approx(factor.gamma).epsilon(0.15));
  }
}

TEST_CASE("fit_envelope pins the exponent") {
  std::vector<double> x{216, 512, 1000};
  std::vector<double> y;
  for (double v : x) y.push_back(4.0 / v);
  RateFit f = fit_envelope(x, y, 1.0);
  CHECK(f.c1 == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(f.c0 == 0.0);
}
