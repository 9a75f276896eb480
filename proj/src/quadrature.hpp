#pragma once

#include <functional>

#include "common.hpp"

namespace ccdfse {

// ---- power-law fitting ------------------------------------------------------

// C0 + C1 * x^{-s} through data; `s` from the exact three-point solve.
struct RateFit {
  double c0 = 0, c1 = 0, s = 0;
  bool no_power_law = false;   // ratio outside the attainable range
  bool non_monotone = false;   // input series not monotone
  bool unreliable = false;
  std::vector<double> residuals;  // |fit(x) - y| at validation abscissas
};

// Exact fit through three points (x ascending): s by bisection of
// (y1-y2)/(y2-y3) = (x1^-s - x2^-s)/(x2^-s - x3^-s) over s in [0.05, 6],
// then C0, C1 by linear solve. Flags instead of throwing on degenerate data.
RateFit fit_power_law(const std::array<double, 3>& x, const std::array<double, 3>& y);

// Least-squares C1 with the exponent pinned (C0 = 0): an error-series
// envelope C1 * x^{-s}.
RateFit fit_envelope(const std::vector<double>& x, const std::vector<double>& y, double s);

// ---- trapezoidal rules on the periodic cube ---------------------------------

// Integration domain is V = [-1/2, 1/2)^dim with unit volume; integrands are
// periodic. Nodes are (j + offset)/m per axis, wrapped into V.
double trapezoid(int dim, int m, double offset, const std::function<double(const double*)>& f);

// Synthetic singular integrand realizing one of the five integral classes.
struct SingularIntegrand {
  int dim = 0;  // total integration dimension (d or 2d for the product classes)
  int cls = 0;
  std::function<double(const double*)> f;
  // true when a node must be zeroed by the punctured rule
  std::function<bool(const double*)> singular_node;
  double predicted_rate = 0;  // d + gamma (or d + min gamma); <0 marks super-algebraic

  // Individual factors, each over its own argument block, for order checks.
  struct Factor {
    int dim;
    double gamma;
    std::array<double, 3> location;
    std::function<cplx(const double*)> f;
  };
  std::vector<Factor> factors;
};

double punctured_trapezoid(const SingularIntegrand& f, int m, double offset = 0.0);

// classes: 1 smooth periodic, 2 single singularity of order gamma[0],
// 3 product with a second order-0 factor shifted by z, 4 two-variable
// product with orders gamma[0], gamma[1], 5 like 4 with a third factor
// f3(x2 - sign*x1) of order 0.
SingularIntegrand synthetic_integrand(int cls, int d, const std::vector<double>& gamma,
                                      const std::array<double, 3>& shift, int sign = 1);

struct RateMeasurement {
  std::vector<int> meshes;
  std::vector<double> values;
  double reference = 0;
  double ref_uncertainty = 0;
  bool oversampled_reference = false;
  std::vector<double> errors;      // |Q_m - reference|
  std::vector<int> fitted_meshes;  // meshes that entered the slope fit
  double exponent = 0;             // err ~ m^{-exponent}
  bool non_monotone = false;
};

// Runs the punctured rule over the given per-axis sizes and fits the error
// decay exponent. The reference is a 4x oversampled rule when feasible,
// otherwise the C0 of a three-point fit on the finest meshes (whose two
// finest errors are then excluded from the slope fit).
RateMeasurement measure_rate(const SingularIntegrand& f, const std::vector<int>& meshes);

// ---- algebraic singularity order estimation ---------------------------------

struct OrderEstimate {
  double gamma_hat = 0;
  bool singular_detected = false;  // some derivative magnitude grows toward x0
  bool ambiguous = false;          // per-order estimates spread beyond 0.3
  std::array<double, 3> slope{};   // fitted log-log slopes for |f|,|f'|,|f''|
  std::array<double, 3> per_order{};  // slope + |alpha|
};

struct OrderOptions {
  std::vector<double> radii = {0.24, 0.12, 0.06, 0.03, 0.015};
  double step_fraction = 0.125;  // finite-difference step = radius/8
  std::vector<std::array<double, 3>> directions;  // unit-free ray directions
};

// Samples f along rays x0 + t*dir at geometrically shrinking t, fits the
// log-log slope of |d^a f| for a = 0,1,2 (central differences), and reports
// the sharpest admissible order min_a(slope_a + a). Directions default to
// axes and diagonals truncated to `dim` components.
OrderEstimate estimate_order(int dim, const std::function<cplx(const double*)>& f,
                             const double* x0, const OrderOptions& opts = {});

}  // namespace ccdfse
