#pragma once

// Independent oracles for the test suite. Nothing here calls into the
// library's numerical code: closed forms are re-derived with std::log1p/expm1 and
// the optimizer is a plain BFGS on a directly coded log-likelihood.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

// (1 + xi y / sigma)^(-1/xi), exponential at xi == 0, 0 past the endpoint.
// Evaluated as exp(-log1p(.)/xi) in long double so shapes near zero keep
// full double precision.
inline double gpd_survival(double y, double sigma, double xi) {
  if (y <= 0.0) return 1.0;
  if (xi == 0.0) return std::exp(-y / sigma);
  const long double z = static_cast<long double>(xi) * y / sigma;
  if (z <= -1.0L) return 0.0;
  return static_cast<double>(std::exp(-std::log1p(z) / xi));
}

inline double gpd_cdf(double y, double sigma, double xi) {
  if (y <= 0.0) return 0.0;
  if (xi == 0.0) return -std::expm1(-y / sigma);
  const long double z = static_cast<long double>(xi) * y / sigma;
  if (z <= -1.0L) return 1.0;
  return static_cast<double>(-std::expm1(-std::log1p(z) / xi));
}

inline double dgpd_cdf(std::uint64_t k, double sigma, double xi) {
  return gpd_cdf(static_cast<double>(k) + 1.0, sigma, xi);
}

inline double dgpd_pmf(std::uint64_t k, double sigma, double xi) {
  const double y = static_cast<double>(k);
  return gpd_survival(y, sigma, xi) - gpd_survival(y + 1.0, sigma, xi);
}

// Linear scan for the smallest k with cdf(k) >= prob.
inline std::uint64_t dgpd_quantile_scan(double prob, double sigma, double xi) {
  std::uint64_t k = 0;
  while (dgpd_cdf(k, sigma, xi) < prob) ++k;
  return k;
}

// Uncorrected log-likelihood terms.
inline double gpd_logpdf(double y, double sigma, double xi) {
  if (xi == 0.0) return -std::log(sigma) - y / sigma;
  const double base = 1.0 + xi * y / sigma;
  if (base <= 0.0) return -INFINITY;
  return -std::log(sigma) - (1.0 + 1.0 / xi) * std::log(base);
}

inline double dgpd_logpmf(double k, double sigma, double xi) {
  const double m = gpd_survival(k, sigma, xi) - gpd_survival(k + 1.0, sigma, xi);
  return m > 0.0 ? std::log(m) : -INFINITY;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Cubic B-spline B_i at x from the divided-difference definition
//   B_i(x) = (t_{i+4} - t_i) [t_i, ..., t_{i+4}] (. - x)_+^3
// on distinct knots, with the right end of the knot range belonging to the
// last interval.
inline double bspline_divided_difference(double x, const std::vector<double>& t, std::size_t i) {
  constexpr int kOrder = 4;
  auto tp = [&](double s) {
    const double d = s - x;
    return d > 0.0 ? d * d * d : 0.0;
  };
  std::vector<double> dd(kOrder + 1);
  for (int j = 0; j <= kOrder; ++j) dd[static_cast<std::size_t>(j)] = tp(t[i + static_cast<std::size_t>(j)]);
  for (int level = 1; level <= kOrder; ++level) {
    for (int j = 0; j + level <= kOrder; ++j) {
      const auto a = static_cast<std::size_t>(j);
      const auto b = static_cast<std::size_t>(j + level);
      dd[a] = (dd[a + 1] - dd[a]) / (t[i + b] - t[i + a]);
    }
  }
  return (t[i + kOrder] - t[i]) * dd[0];
}

// Central differences with a step relative to each coordinate.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double rel_step = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * std::max(1.0, std::abs(x(j)));
    Eigen::VectorXd a = x, b = x;
    a(j) += h;
    b(j) -= h;
    g(j) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

// BFGS with Armijo backtracking, maximizing f. Returns the final iterate.
inline Eigen::VectorXd bfgs_maximize(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                     double grad_tol = 1e-7, int max_iter = 500) {
  auto grad = [&](const Eigen::VectorXd& p) { return fd_gradient(f, p, 1e-6); };
  const auto n = x.size();
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n) * 1e-3;
  double fx = f(x);
  Eigen::VectorXd g = grad(x);
  for (int it = 0; it < max_iter && g.norm() > grad_tol * std::max(1.0, std::abs(fx)); ++it) {
    Eigen::VectorXd dir = h_inv * g;
    if (dir.dot(g) <= 0.0) {
      h_inv = Eigen::MatrixXd::Identity(n, n) * 1e-3;
      dir = h_inv * g;
    }
    double step = 1.0;
    Eigen::VectorXd xn;
    double fn = -INFINITY;
    for (int k = 0; k < 60; ++k, step *= 0.5) {
      xn = x + step * dir;
      fn = f(xn);
      if (std::isfinite(fn) && fn >= fx + 1e-4 * step * g.dot(dir)) break;
    }
    if (!(fn >= fx)) break;
    const Eigen::VectorXd gn = grad(xn);
    const Eigen::VectorXd s = xn - x;
    const Eigen::VectorXd y = g - gn;  // curvature pair of -f
    const double sy = s.dot(y);
    if (sy > 1e-14) {
      const double r = 1.0 / sy;
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
      h_inv = (eye - r * s * y.transpose()) * h_inv * (eye - r * y * s.transpose()) + r * s * s.transpose();
    }
    x = xn;
    fx = fn;
    g = gn;
  }
  return x;
}

// Exceedances from a covariate-linked tail with sigma = exp(x' b_sigma) and
// xi = lo + (hi - lo) logistic(x' b_xi), drawn by inversion with the standard
// library's uniform distribution.
struct RegressionData {
  std::vector<double> y;
  std::vector<std::vector<double>> x;  // one column per covariate
};

inline RegressionData simulate_regression(std::uint64_t seed, std::size_t n, bool discrete,
                                          const std::vector<double>& b_sigma, double xi, std::size_t n_covariates) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  RegressionData d;
  d.x.assign(n_covariates, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double eta = b_sigma[0];
    for (std::size_t j = 0; j < n_covariates; ++j) {
      d.x[j][i] = normal(rng);
      eta += b_sigma[j + 1] * d.x[j][i];
    }
    const double sigma = std::exp(eta);
    const double u = unif(rng);
    const double q = xi == 0.0 ? -sigma * std::log1p(-u) : sigma * (std::pow(1.0 - u, -xi) - 1.0) / xi;
    d.y.push_back(discrete ? std::floor(q) : q);
  }
  return d;
}

}  // namespace oracle
