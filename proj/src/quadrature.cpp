#include "quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ccdfse {

RateFit fit_power_law(const std::array<double, 3>& x, const std::array<double, 3>& y) {
  RateFit fit;
  double scale = std::max({std::abs(y[0]), std::abs(y[1]), std::abs(y[2]), 1e-300});
  double d12 = y[0] - y[1], d23 = y[1] - y[2];
  fit.non_monotone = (d12 > 0) != (d23 > 0) || d12 == 0 || d23 == 0;
  if (std::abs(d23) < 1e-14 * scale || std::abs(d12) < 1e-14 * scale) {
    fit.no_power_law = true;
    fit.c0 = (y[0] + y[1] + y[2]) / 3.0;
    fit.c1 = 0;
    fit.s = 0;
    return fit;
  }
  double r = d12 / d23;
  auto model = [&](double s) {
    return (std::pow(x[0], -s) - std::pow(x[1], -s)) / (std::pow(x[1], -s) - std::pow(x[2], -s));
  };
  double lo = 0.05, hi = 6.0;
  double flo = model(lo) - r, fhi = model(hi) - r;
  if (std::isnan(flo) || std::isnan(fhi) || (flo > 0) == (fhi > 0)) {
    fit.no_power_law = true;
    fit.c0 = y[2];
    fit.c1 = 0;
    fit.s = (flo > 0) ? lo : hi;
    return fit;
  }
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    double fm = model(mid) - r;
    if ((fm > 0) == (flo > 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  fit.s = 0.5 * (lo + hi);
  fit.c1 = (y[0] - y[2]) / (std::pow(x[0], -fit.s) - std::pow(x[2], -fit.s));
  fit.c0 = y[0] - fit.c1 * std::pow(x[0], -fit.s);
  return fit;
}

RateFit fit_envelope(const std::vector<double>& x, const std::vector<double>& y, double s) {
  RateFit fit;
  fit.s = s;
  fit.c0 = 0;
  double acc = 0;
  int n = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    if (y[i] <= 0) continue;
    acc += std::log(y[i]) + s * std::log(x[i]);
    ++n;
  }
  if (n == 0) {
    fit.no_power_law = true;
    return fit;
  }
  fit.c1 = std::exp(acc / n);
  for (size_t i = 1; i < y.size(); ++i)
    if ((y[i] > y[i - 1]) && y[i - 1] > 0) fit.non_monotone = true;
  return fit;
}

namespace {

inline double wrap_half(double v) {
  // into [-1/2, 1/2)
  v -= std::floor(v + 0.5);
  return v;
}

}  // namespace

double trapezoid(int dim, int m, double offset, const std::function<double(const double*)>& f) {
  if (m < 1) throw Error("trapezoid: empty mesh");
  std::int64_t total = 1;
  for (int d = 0; d < dim; ++d) total *= m;
  double h = 1.0 / m;
  cplx sum = parallel_sum(total, [&](std::int64_t idx) {
    double x[6];
    std::int64_t rest = idx;
    for (int d = dim - 1; d >= 0; --d) {
      int j = static_cast<int>(rest % m);
      rest /= m;
      x[d] = wrap_half((j + offset) * h);
    }
    return cplx(f(x), 0.0);
  });
  return sum.real() / static_cast<double>(total);
}

double punctured_trapezoid(const SingularIntegrand& f, int m, double offset) {
  std::int64_t total = 1;
  for (int d = 0; d < f.dim; ++d) total *= m;
  double h = 1.0 / m;
  cplx sum = parallel_sum(total, [&](std::int64_t idx) {
    double x[6];
    std::int64_t rest = idx;
    for (int d = f.dim - 1; d >= 0; --d) {
      int j = static_cast<int>(rest % m);
      rest /= m;
      x[d] = wrap_half((j + offset) * h);
    }
    if (f.singular_node && f.singular_node(x)) return cplx{};
    return cplx(f.f(x), 0.0);
  });
  return sum.real() / static_cast<double>(total);
}

namespace {

// Fixed bump profile: exp(-1/(1-|2u|^2)) inside |u| < 1/2.
double bump(double r2) {
  double q = 1.0 - 4.0 * r2;
  if (q <= 1e-14) return 0.0;
  return std::exp(-1.0 / q);
}

double dist2_torus(const double* x, const double* z, int d, double* u) {
  double r2 = 0;
  for (int i = 0; i < d; ++i) {
    u[i] = wrap_half(x[i] - z[i]);
    r2 += u[i] * u[i];
  }
  return r2;
}

// Single-point singular factor of order gamma at z (real-valued).
std::function<double(const double*)> factor_fn(int d, double gamma, std::array<double, 3> z) {
  return [d, gamma, z](const double* x) {
    double u[3];
    double r2 = dist2_torus(x, z.data(), d, u);
    double eta = bump(r2);
    if (eta == 0.0) return 0.0;
    if (r2 == 0.0) return 0.0;  // formula value at the singular point itself
    if (gamma == -2.0) return eta / r2;
    if (gamma == -1.0) return eta / std::sqrt(r2);
    // gamma == 0
    if (d == 1) return eta * (u[0] > 0 ? 1.0 : -1.0);
    return eta * u[0] * u[0] / r2;
  };
}

bool near_torus_point(const double* x, const double* z, int d, double tol) {
  for (int i = 0; i < d; ++i)
    if (std::abs(wrap_half(x[i] - z[i])) > tol) return false;
  return true;
}

}  // namespace

SingularIntegrand synthetic_integrand(int cls, int d, const std::vector<double>& gamma,
                                      const std::array<double, 3>& shift, int sign) {
  if (d < 1 || d > 3) throw Error("synthetic_integrand: d must be 1..3");
  for (double g : gamma) {
    if (g != 0.0 && g != -1.0 && g != -2.0) throw Error("synthetic_integrand: gamma in {0,-1,-2}");
    if (g < -d + 1 && cls != 2 && cls != 3)
      throw Error("synthetic_integrand: gamma below -d+1 not admissible here");
  }
  SingularIntegrand out;
  out.cls = cls;
  constexpr double kTol = 1e-10;

  auto add_factor = [&](int fd, double g, std::array<double, 3> z,
                        std::function<double(const double*)> fn) {
    SingularIntegrand::Factor f;
    f.dim = fd;
    f.gamma = g;
    f.location = z;
    f.f = [fn](const double* x) { return cplx(fn(x), 0.0); };
    out.factors.push_back(std::move(f));
  };

  switch (cls) {
    case 1: {
      out.dim = d;
      double sigma = 0.1;
      std::array<double, 3> z = shift;
      out.f = [d, sigma, z](const double* x) {
        // Periodized Gaussian; nearest images suffice at this width.
        double total = 0;
        int lim = 1;
        double u[3];
        for (int i = 0; i < d; ++i) u[i] = wrap_half(x[i] - z[i]);
        std::array<int, 3> r{};
        std::function<void(int)> rec = [&](int axis) {
          if (axis == d) {
            double s = 0;
            for (int i = 0; i < d; ++i) {
              double v = u[i] + r[i];
              s += v * v;
            }
            total += std::exp(-s / (2 * sigma * sigma));
            return;
          }
          for (r[axis] = -lim; r[axis] <= lim; ++r[axis]) rec(axis + 1);
        };
        rec(0);
        return total;
      };
      out.singular_node = nullptr;
      out.predicted_rate = -1;  // super-algebraic
      break;
    }
    case 2: {
      if (gamma.size() != 1) throw Error("class 2 takes one gamma");
      if (gamma[0] < -d + 1) throw Error("class 2: gamma >= -d+1 required");
      out.dim = d;
      auto fn = factor_fn(d, gamma[0], shift);
      out.f = fn;
      std::array<double, 3> z = shift;
      int dd = d;
      out.singular_node = [z, dd, kTol](const double* x) {
        return near_torus_point(x, z.data(), dd, kTol);
      };
      out.predicted_rate = d + gamma[0];
      add_factor(d, gamma[0], shift, fn);
      break;
    }
    case 3: {
      if (gamma.size() != 1) throw Error("class 3 takes one gamma");
      out.dim = d;
      std::array<double, 3> zero{0, 0, 0};
      auto f1 = factor_fn(d, gamma[0], zero);
      auto f2 = factor_fn(d, 0.0, shift);
      out.f = [f1, f2](const double* x) { return f1(x) * f2(x); };
      std::array<double, 3> z = shift;
      int dd = d;
      out.singular_node = [z, dd, kTol](const double* x) {
        std::array<double, 3> zero2{0, 0, 0};
        return near_torus_point(x, zero2.data(), dd, kTol) ||
               near_torus_point(x, z.data(), dd, kTol);
      };
      out.predicted_rate = d + gamma[0];
      add_factor(d, gamma[0], zero, f1);
      add_factor(d, 0.0, shift, f2);
      break;
    }
    case 4:
    case 5: {
      if (gamma.size() != 2) throw Error("class 4/5 take two gammas");
      out.dim = 2 * d;
      std::array<double, 3> zero{0, 0, 0};
      auto f1 = factor_fn(d, gamma[0], zero);
      auto f2 = factor_fn(d, gamma[1], zero);
      int dd = d;
      if (cls == 4) {
        out.f = [f1, f2, dd](const double* x) { return f1(x) * f2(x + dd); };
      } else {
        auto f3 = factor_fn(d, 0.0, zero);
        int sg = sign >= 0 ? 1 : -1;
        out.f = [f1, f2, f3, dd, sg](const double* x) {
          double z3[3];
          for (int i = 0; i < dd; ++i) z3[i] = wrap_half(x[dd + i] - sg * x[i]);
          return f1(x) * f2(x + dd) * f3(z3);
        };
        add_factor(d, 0.0, zero, f3);
      }
      out.singular_node = [zero, dd, kTol](const double* x) {
        return near_torus_point(x, zero.data(), dd, kTol) ||
               near_torus_point(x + dd, zero.data(), dd, kTol);
      };
      out.predicted_rate = d + std::min(gamma[0], gamma[1]);
      out.factors.clear();
      add_factor(d, gamma[0], zero, f1);
      add_factor(d, gamma[1], zero, f2);
      if (cls == 5) add_factor(d, 0.0, zero, factor_fn(d, 0.0, zero));
      break;
    }
    default:
      throw Error("synthetic_integrand: class must be 1..5");
  }
  return out;
}

RateMeasurement measure_rate(const SingularIntegrand& f, const std::vector<int>& meshes) {
  if (meshes.size() < 4) throw Error("measure_rate: need at least 4 mesh sizes");
  RateMeasurement r;
  r.meshes = meshes;
  if (!std::is_sorted(meshes.begin(), meshes.end())) throw Error("measure_rate: sort meshes");
  for (int m : meshes) r.values.push_back(punctured_trapezoid(f, m));

  int m_max = meshes.back();
  double log_points = f.dim * std::log2(4.0 * m_max);
  r.oversampled_reference = log_points <= 26.0;
  int exclude_finest = 0;
  if (r.oversampled_reference) {
    double q4 = punctured_trapezoid(f, 4 * m_max);
    r.reference = q4;
    r.ref_uncertainty = 1e-15 * std::max(1.0, std::abs(q4));
  } else {
    size_t n = meshes.size();
    std::array<double, 3> xs{double(meshes[n - 3]), double(meshes[n - 2]), double(meshes[n - 1])};
    std::array<double, 3> ys{r.values[n - 3], r.values[n - 2], r.values[n - 1]};
    RateFit fit = fit_power_law(xs, ys);
    r.reference = fit.c0;
    r.ref_uncertainty = 1e-15 * std::max(1.0, std::abs(fit.c0));
    exclude_finest = 2;
  }

  for (double v : r.values) r.errors.push_back(std::abs(v - r.reference));
  for (size_t i = 1; i < r.errors.size(); ++i)
    if (r.errors[i] > r.errors[i - 1]) r.non_monotone = true;

  // Log-log least squares over usable points.
  std::vector<double> lx, ly;
  for (size_t i = 0; i + exclude_finest < meshes.size(); ++i) {
    if (r.errors[i] < 1e2 * r.ref_uncertainty) continue;  // reference noise floor
    lx.push_back(std::log(double(meshes[i])));
    ly.push_back(std::log(r.errors[i]));
    r.fitted_meshes.push_back(meshes[i]);
  }
  if (lx.size() < 2) {
    r.exponent = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  double mx = 0, my = 0;
  for (size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= lx.size();
  my /= ly.size();
  double sxx = 0, sxy = 0;
  for (size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  r.exponent = -sxy / sxx;
  return r;
}

OrderEstimate estimate_order(int dim, const std::function<cplx(const double*)>& f,
                             const double* x0, const OrderOptions& opts) {
  OrderOptions o = opts;
  if (o.directions.empty()) {
    static const std::array<double, 3> all[] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1},
                                                {1, 1, 0}, {0, 1, 1}, {1, 1, 1}};
    for (const auto& d : all) {
      std::array<double, 3> dir{0, 0, 0};
      bool ok = true;
      for (int i = 0; i < 3; ++i) {
        if (i < dim)
          dir[i] = d[i];
        else if (d[i] != 0)
          ok = false;
      }
      if (ok) o.directions.push_back(dir);
    }
  }

  auto eval = [&](const std::array<double, 3>& dir, double t) {
    double x[3];
    for (int i = 0; i < dim; ++i) x[i] = x0[i] + t * dir[i];
    return f(x);
  };

  std::array<std::vector<double>, 3> slopes;  // per order, one slope per direction
  for (const auto& dir : o.directions) {
    std::array<std::vector<double>, 3> lt, lv;
    for (double t : o.radii) {
      double s = t * o.step_fraction;
      cplx fm = eval(dir, t - s), f0 = eval(dir, t), fp = eval(dir, t + s);
      double d0 = std::abs(f0);
      double d1 = std::abs(fp - fm) / (2 * s);
      double d2 = std::abs(fp - 2.0 * f0 + fm) / (s * s);
      double ds[3] = {d0, d1, d2};
      for (int a = 0; a < 3; ++a) {
        if (ds[a] > 1e-250 && std::isfinite(ds[a])) {
          lt[a].push_back(std::log(t));
          lv[a].push_back(std::log(ds[a]));
        }
      }
    }
    for (int a = 0; a < 3; ++a) {
      if (lt[a].size() < 2) continue;
      double mx = 0, my = 0;
      for (size_t i = 0; i < lt[a].size(); ++i) {
        mx += lt[a][i];
        my += lv[a][i];
      }
      mx /= lt[a].size();
      my /= lv[a].size();
      double sxx = 0, sxy = 0;
      for (size_t i = 0; i < lt[a].size(); ++i) {
        sxx += (lt[a][i] - mx) * (lt[a][i] - mx);
        sxy += (lt[a][i] - mx) * (lv[a][i] - my);
      }
      slopes[a].push_back(sxy / sxx);
    }
  }

  OrderEstimate est;
  bool have_any = false;
  double lo = 1e300, hi = -1e300;
  for (int a = 0; a < 3; ++a) {
    if (slopes[a].empty()) {
      // Derivative vanished identically: no constraint from this order.
      est.slope[a] = 0;
      est.per_order[a] = std::numeric_limits<double>::infinity();
      continue;
    }
    std::sort(slopes[a].begin(), slopes[a].end());
    est.slope[a] = slopes[a][slopes[a].size() / 2];  // median over directions
    est.per_order[a] = est.slope[a] + a;
    have_any = true;
    lo = std::min(lo, est.per_order[a]);
    hi = std::max(hi, est.per_order[a]);
    if (est.slope[a] <= -0.3) est.singular_detected = true;
  }
  if (!have_any) {
    est.gamma_hat = std::numeric_limits<double>::quiet_NaN();
    return est;
  }
  // The admissible order must satisfy the derivative bound at every order
  // probed, so the estimate is the minimum of the per-order values.
  est.gamma_hat = lo;
  est.ambiguous = est.singular_detected && (hi - lo) > 0.3;
  return est;
}

}  // namespace ccdfse
