#pragma once

// Continuous and discrete generalized Pareto primitives.
//
// The discrete family is obtained by unit-differencing the continuous CDF:
//   P(K = k) = H(k + 1) - H(k),  k = 0, 1, 2, ...
// so its CDF at integer k is H(k + 1) and the mass is exactly normalized.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace potreg {

inline constexpr double kNearZeroShape = 1e-6;

struct ShapeBounds {
  double lo = -0.5;
  double hi = 1.0;

  [[nodiscard]] bool contains(double xi) const { return xi > lo && xi < hi; }
};

class GpdParams {
 public:
  GpdParams(double sigma, double xi, ShapeBounds bounds = {}) : sigma_(sigma), xi_(xi) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      throw std::invalid_argument("GpdParams: scale must be positive and finite, got " +
                                  std::to_string(sigma));
    }
    if (!std::isfinite(xi) || !bounds.contains(xi)) {
      throw std::invalid_argument("GpdParams: shape " + std::to_string(xi) +
                                  " outside bounds (" + std::to_string(bounds.lo) + ", " +
                                  std::to_string(bounds.hi) + ")");
    }
  }

  [[nodiscard]] double sigma() const { return sigma_; }
  [[nodiscard]] double xi() const { return xi_; }

  // Upper end of the support; infinite for xi >= 0.
  [[nodiscard]] double upper_endpoint() const {
    return xi_ < 0.0 ? -sigma_ / xi_ : std::numeric_limits<double>::infinity();
  }

  friend bool operator==(const GpdParams&, const GpdParams&) = default;

 private:
  double sigma_;
  double xi_;
};

struct LogDensityGradient {
  double d_sigma = 0.0;
  double d_xi = 0.0;
};

namespace detail {

// log1p(xi * t) / xi, continuous through xi = 0.
inline double log1p_ratio(double xi, double t) {
  const double x = xi * t;
  if (std::abs(xi) < kNearZeroShape && std::abs(x) < 1e-5) {
    return t * (1.0 - x / 2.0 + x * x / 3.0);
  }
  return std::log1p(x) / xi;
}

// expm1(xi * a) / xi, continuous through xi = 0.
inline double expm1_ratio(double xi, double a) {
  const double x = xi * a;
  if (std::abs(xi) < kNearZeroShape && std::abs(x) < 1e-5) {
    return a * (1.0 + x / 2.0 + x * x / 6.0);
  }
  return std::expm1(x) / xi;
}

// log survival log(1 - H(y)); -inf at or beyond the upper endpoint.
inline double log_survival(double y, const GpdParams& p) {
  if (y <= 0.0) return 0.0;
  const double t = y / p.sigma();
  if (p.xi() < 0.0 && 1.0 + p.xi() * t <= 0.0) return -std::numeric_limits<double>::infinity();
  return -log1p_ratio(p.xi(), t);
}

// Gradient of log survival with respect to (sigma, xi), y strictly inside the support.
inline LogDensityGradient log_survival_gradient(double y, const GpdParams& p) {
  if (y <= 0.0) return {};
  const double sigma = p.sigma();
  const double xi = p.xi();
  const double t = y / sigma;
  const double denom = 1.0 + xi * t;
  LogDensityGradient g;
  g.d_sigma = t / (sigma * denom);
  if (std::abs(xi) < kNearZeroShape) {
    g.d_xi = t * t / 2.0 - 2.0 * xi * t * t * t / 3.0 + 0.75 * xi * xi * t * t * t * t;
  } else {
    g.d_xi = log1p_ratio(xi, t) / xi - t / (xi * denom);
  }
  return g;
}

inline void require_finite(double y, const char* what) {
  if (!std::isfinite(y)) throw std::invalid_argument(std::string(what) + ": non-finite argument");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Continuous GPD

inline double gpd_cdf(double y, const GpdParams& p) {
  detail::require_finite(y, "gpd_cdf");
  if (y < 0.0) throw std::invalid_argument("gpd_cdf: negative argument");
  return -std::expm1(detail::log_survival(y, p));
}

inline double gpd_survival(double y, const GpdParams& p) {
  detail::require_finite(y, "gpd_survival");
  if (y < 0.0) throw std::invalid_argument("gpd_survival: negative argument");
  return std::exp(detail::log_survival(y, p));
}

inline bool gpd_in_support(double y, const GpdParams& p) {
  return y >= 0.0 && y < p.upper_endpoint();
}

// Returns nullopt when y lies outside the support.
inline std::optional<double> gpd_logpdf(double y, const GpdParams& p) {
  if (!std::isfinite(y) || !gpd_in_support(y, p)) return std::nullopt;
  const double t = y / p.sigma();
  return -std::log(p.sigma()) - (1.0 + p.xi()) * detail::log1p_ratio(p.xi(), t);
}

inline double gpd_quantile(double prob, const GpdParams& p) {
  if (!(prob >= 0.0) || !(prob <= 1.0)) {
    throw std::invalid_argument("gpd_quantile: probability outside [0, 1]");
  }
  if (prob == 1.0) {
    if (p.xi() >= 0.0) throw std::invalid_argument("gpd_quantile: infinite quantile at prob = 1");
    return p.upper_endpoint();
  }
  // sigma * ((1 - prob)^(-xi) - 1) / xi
  const double a = -std::log1p(-prob);
  return p.sigma() * detail::expm1_ratio(p.xi(), a);
}

inline LogDensityGradient gpd_log_density_gradient(double y, const GpdParams& p) {
  if (!gpd_in_support(y, p)) {
    throw std::domain_error("gpd_log_density_gradient: observation outside support");
  }
  const double sigma = p.sigma();
  const double xi = p.xi();
  const double t = y / sigma;
  const double denom = 1.0 + xi * t;
  LogDensityGradient g;
  g.d_sigma = -1.0 / sigma + (1.0 + xi) * t / (sigma * denom);
  if (std::abs(xi) < kNearZeroShape) {
    g.d_xi = t * t / 2.0 - t + xi * (t * t - 2.0 * t * t * t / 3.0) +
             xi * xi * (0.75 * t * t * t * t - t * t * t);
  } else {
    g.d_xi = detail::log1p_ratio(xi, t) / xi - (1.0 + xi) * t / (xi * denom);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Discrete GPD

namespace detail {

// log P(K = k) from the two neighbouring log survivals.
inline double dgpd_log_mass_from_survivals(double log_s_k, double log_s_next) {
  if (log_s_k == -std::numeric_limits<double>::infinity()) return log_s_k;
  if (log_s_next == -std::numeric_limits<double>::infinity()) return log_s_k;
  return log_s_k + std::log(-std::expm1(log_s_next - log_s_k));
}

}  // namespace detail

inline bool dgpd_in_support(std::uint64_t k, const GpdParams& p) {
  return static_cast<double>(k) < p.upper_endpoint();
}

inline double dgpd_cdf(std::uint64_t k, const GpdParams& p) {
  return gpd_cdf(static_cast<double>(k) + 1.0, p);
}

inline double dgpd_pmf(std::uint64_t k, const GpdParams& p) {
  const double y = static_cast<double>(k);
  const double ls0 = detail::log_survival(y, p);
  const double ls1 = detail::log_survival(y + 1.0, p);
  return std::exp(detail::dgpd_log_mass_from_survivals(ls0, ls1));
}

// Returns nullopt when k carries zero mass.
inline std::optional<double> dgpd_log_pmf(std::uint64_t k, const GpdParams& p) {
  if (!dgpd_in_support(k, p)) return std::nullopt;
  const double y = static_cast<double>(k);
  return detail::dgpd_log_mass_from_survivals(detail::log_survival(y, p),
                                              detail::log_survival(y + 1.0, p));
}

// Smallest k with dgpd_cdf(k) >= prob.
inline std::uint64_t dgpd_quantile(double prob, const GpdParams& p) {
  if (!(prob >= 0.0) || !(prob < 1.0)) {
    throw std::invalid_argument("dgpd_quantile: probability outside [0, 1)");
  }
  if (prob == 0.0) return 0;
  // H(k + 1) >= prob  <=>  k >= Q(prob) - 1
  const double q = gpd_quantile(prob, p);
  const double guess = std::ceil(q - 1.0);
  if (!(guess < 9.0e18)) throw std::overflow_error("dgpd_quantile: quantile exceeds integer range");
  std::uint64_t k = guess > 0.0 ? static_cast<std::uint64_t>(guess) : 0;
  while (k > 0 && dgpd_cdf(k - 1, p) >= prob) --k;
  while (dgpd_cdf(k, p) < prob) ++k;
  return k;
}

inline LogDensityGradient dgpd_log_mass_gradient(std::uint64_t k, const GpdParams& p) {
  if (!dgpd_in_support(k, p)) {
    throw std::domain_error("dgpd_log_mass_gradient: observation outside support");
  }
  const double y = static_cast<double>(k);
  const double ls0 = detail::log_survival(y, p);
  const double ls1 = detail::log_survival(y + 1.0, p);
  const LogDensityGradient g0 = detail::log_survival_gradient(y, p);
  if (ls1 == -std::numeric_limits<double>::infinity()) return g0;
  const LogDensityGradient g1 = detail::log_survival_gradient(y + 1.0, p);
  // d log(S0 - S1) = (S0 dlogS0 - S1 dlogS1) / (S0 - S1)
  const double r = std::exp(ls1 - ls0);
  const double one_minus_r = -std::expm1(ls1 - ls0);
  return {(g0.d_sigma - r * g1.d_sigma) / one_minus_r, (g0.d_xi - r * g1.d_xi) / one_minus_r};
}

// ---------------------------------------------------------------------------
// Sampling. Uniforms are built from the raw 64-bit engine output so draws are
// identical across standard library implementations.

namespace detail {

template <class Engine>
double open_uniform(Engine& rng) {
  // (0, 1): 53 random mantissa bits offset by half an ulp
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace detail

template <class Engine>
std::vector<double> gpd_sample(Engine& rng, const GpdParams& p, std::size_t n) {
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(gpd_quantile(detail::open_uniform(rng), p));
  return out;
}

// Floor of a continuous draw: P(floor(Y) = k) = H(k + 1) - H(k).
template <class Engine>
std::vector<std::uint64_t> dgpd_sample(Engine& rng, const GpdParams& p, std::size_t n) {
  std::vector<std::uint64_t> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = gpd_quantile(detail::open_uniform(rng), p);
    out.push_back(static_cast<std::uint64_t>(std::floor(y)));
  }
  return out;
}

}  // namespace potreg
