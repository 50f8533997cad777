#pragma once

// Robustified log-likelihood for covariate-linked GPD / DGPD regression.
//
// Each observation contributes
//
//   rho_c(l_i) - a_c(theta_i)
//
// where l_i is the log-density (or log-mass) at the observation,
// rho_c(z) = log((1 + e^(z + c)) / (1 + e^c)) bounds the influence of
// low-likelihood points, and a_c(theta) = E_theta[F_c(l(Y))] with
//
//   F_c(z) = 1 - log(1 + e^(z + c)) / e^(z + c).
//
// F_c solves F' + F = rho_c', so grad a_c = E_theta[w_c(l) * score] and the
// estimating equations are unbiased at the model. For c = inf, rho is the
// identity, F = 1, and the objective is the log-likelihood minus n.

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>

#include "potreg/design.hpp"
#include "potreg/distributions.hpp"
#include "potreg/pot.hpp"

namespace potreg {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct RobustConfig {
  double c = kInfinity;
  int max_iter = 200;
  double grad_tol = 1e-7;  // scaled by max(1, |objective|)
  int n_restarts = 1;
  double correction_tail_eps = 1e-10;
};

namespace detail {

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace detail

inline double rho(double z, double c) {
  if (std::isinf(c)) return z;
  return detail::softplus(z + c) - detail::softplus(c);
}

inline double rho_weight(double z, double c) {
  if (std::isinf(c)) return 1.0;
  return logistic(z + c);
}

struct CorrectionIntegrand {
  double value = 0.0;       // F_c(z)
  double derivative = 0.0;  // F_c'(z) = rho_weight(z) - F_c(z)
};

inline CorrectionIntegrand correction_integrand(double z, double c) {
  if (std::isinf(c)) return {1.0, 0.0};
  if (z == -kInfinity) return {0.0, 0.0};
  const double x = z + c;
  if (x < -9.0) {
    const double u = std::exp(x);
    return {u * (0.5 - u * (1.0 / 3.0 - u * 0.25)), u * (0.5 - u * (2.0 / 3.0 - u * 0.75))};
  }
  const double f = 1.0 - detail::softplus(x) * std::exp(-x);
  return {f, logistic(x) - f};
}

struct CorrectionValue {
  double value = 0.0;
  double d_sigma = 0.0;
  double d_xi = 0.0;
};

// E_theta[w_c(l) s s'] over (sigma, xi), s the score. This is minus the
// expected Jacobian of the robust estimating function at the model.
struct WeightedInformation {
  double ss = 0.0;
  double sx = 0.0;
  double xx = 0.0;
};

namespace detail {

// Exact summation covers k < kExactTerms; for xi >= 0 the remaining tail is
// smooth and is replaced by the midpoint integral int_{K - 1/2}^inf of the
// summand's real extension plus the first Euler-Maclaurin correction.
inline constexpr std::uint64_t kExactTerms = 256;

struct SummandTerms {
  double value = 0.0;
  double d_sigma = 0.0;
  double d_xi = 0.0;
  WeightedInformation info;
};

// F(l) P, w(l) P s and w(l) P s s' at real x >= 0 with P = S(x) - S(x + 1).
inline SummandTerms dgpd_summand(double x, const GpdParams& p, double c) {
  SummandTerms out;
  const double log_s0 = log_survival(x, p);
  const double log_s1 = log_survival(x + 1.0, p);
  if (!std::isfinite(log_s0) || !std::isfinite(log_s1)) return out;
  const auto g0 = log_survival_gradient(x, p);
  const auto g1 = log_survival_gradient(x + 1.0, p);
  const double em = std::expm1(log_s1 - log_s0);
  const double log_mass = log_s0 + std::log(-em);
  const double r = 1.0 + em;
  const double s_sigma = (g0.d_sigma - r * g1.d_sigma) / -em;
  const double s_xi = (g0.d_xi - r * g1.d_xi) / -em;
  const double mass = std::exp(log_mass);
  const auto ci = correction_integrand(log_mass, c);
  const double wm = (ci.value + ci.derivative) * mass;
  out.value = ci.value * mass;
  out.d_sigma = wm * s_sigma;
  out.d_xi = wm * s_xi;
  out.info = {wm * s_sigma * s_sigma, wm * s_sigma * s_xi, wm * s_xi * s_xi};
  return out;
}

// int_a^inf: four Gauss-Legendre panels over [a, a + 20 sigma], then
// x = b / v, v in (0, 1] for the remainder. 32 nodes per piece.
inline SummandTerms dgpd_tail_integral(double a, const GpdParams& p, double c) {
  using Rule = boost::math::quadrature::gauss<double, 32>;
  SummandTerms acc;
  auto add = [&](double x, double jac) {
    const auto t = dgpd_summand(x, p, c);
    acc.value += jac * t.value;
    acc.d_sigma += jac * t.d_sigma;
    acc.d_xi += jac * t.d_xi;
    acc.info.ss += jac * t.info.ss;
    acc.info.sx += jac * t.info.sx;
    acc.info.xx += jac * t.info.xx;
  };
  const auto& nodes = Rule::abscissa();
  const auto& weights = Rule::weights();
  // nodes are the non-negative half of [-1, 1]
  auto panel = [&](double lo, double hi) {
    const double mid = 0.5 * (lo + hi);
    const double half = 0.5 * (hi - lo);
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      add(mid + half * nodes[j], half * weights[j]);
      if (nodes[j] != 0.0) add(mid - half * nodes[j], half * weights[j]);
    }
  };
  const double width = 5.0 * p.sigma();
  for (int i = 0; i < 4; ++i) panel(a + i * width, a + (i + 1) * width);
  const double b = a + 4.0 * width;
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    for (double v : {0.5 * (1.0 + nodes[j]), 0.5 * (1.0 - nodes[j])}) {
      add(b / v, weights[j] * 0.5 * b / (v * v));
      if (nodes[j] == 0.0) break;
    }
  }
  // Euler-Maclaurin: sum_{k >= a + 1/2} g(k) = int_a^inf g + g'(a) / 24 + ...
  const double h = 0.25;
  add(a + h, 1.0 / (48.0 * h));
  add(a - h, -1.0 / (48.0 * h));
  return acc;
}

inline CorrectionValue dgpd_correction(const GpdParams& p, double c, double tail_eps, WeightedInformation* info) {
  constexpr std::uint64_t kMaxTerms = 50'000'000;
  const double sigma = p.sigma();
  const double xi = p.xi();
  const double endpoint = p.upper_endpoint();
  const bool ml = std::isinf(c);
  const double exp_c = ml ? 0.0 : std::exp(c);
  const bool tiny_shape = std::abs(xi) < kNearZeroShape;

  CorrectionValue out;
  double log_s0 = 0.0;
  LogDensityGradient g0{};
  for (std::uint64_t k = 0;; ++k) {
    const double y1 = static_cast<double>(k) + 1.0;
    const bool last = !(y1 < endpoint);
    double log_s1 = -kInfinity;
    LogDensityGradient g1{};
    if (!last) {
      const double t = y1 / sigma;
      const double x = xi * t;
      const double ratio = log1p_ratio(xi, t);  // log1p(xi t) / xi
      log_s1 = -ratio;
      g1.d_sigma = t / (sigma * (1.0 + x));
      g1.d_xi = tiny_shape ? t * t / 2.0 - 2.0 * xi * t * t * t / 3.0 + 0.75 * xi * xi * t * t * t * t
                           : ratio / xi - t / (xi * (1.0 + x));
    }

    double log_mass = log_s0;
    LogDensityGradient score = g0;
    if (!last) {
      const double em = std::expm1(log_s1 - log_s0);  // r - 1, r = S(k+1) / S(k)
      log_mass = log_s0 + std::log(-em);
      const double r = 1.0 + em;
      score = {(g0.d_sigma - r * g1.d_sigma) / -em, (g0.d_xi - r * g1.d_xi) / -em};
    }
    const double mass = std::exp(log_mass);

    double f = 1.0;
    double w = 1.0;
    if (!ml) {
      const double arg = log_mass + c;
      if (arg < -9.0) {
        const double u = exp_c * mass;
        f = u * (0.5 - u * (1.0 / 3.0 - u * 0.25));
        w = u / (1.0 + u);
      } else {
        const auto ci = correction_integrand(log_mass, c);
        f = ci.value;
        w = ci.value + ci.derivative;
      }
    }
    out.value += f * mass;
    const double wm = w * mass;
    out.d_sigma += wm * score.d_sigma;
    out.d_xi += wm * score.d_xi;
    if (info != nullptr) {
      info->ss += wm * score.d_sigma * score.d_sigma;
      info->sx += wm * score.d_sigma * score.d_xi;
      info->xx += wm * score.d_xi * score.d_xi;
    }

    if (last) break;
    const double s1 = std::exp(log_s1);
    // F is increasing and the mass decreasing in k, so the remainder of the
    // value sum is at most F(l_k) * P(K > k).
    if (f * s1 < tail_eps) break;
    if (!ml && xi >= 0.0 && k + 1 == kExactTerms) {
      const auto tail = dgpd_tail_integral(static_cast<double>(kExactTerms) - 0.5, p, c);
      out.value += tail.value;
      out.d_sigma += tail.d_sigma;
      out.d_xi += tail.d_xi;
      if (info != nullptr) {
        info->ss += tail.info.ss;
        info->sx += tail.info.sx;
        info->xx += tail.info.xx;
      }
      break;
    }
    if (k >= kMaxTerms) throw std::runtime_error("consistency correction: DGPD summation did not reach tail tolerance");
    log_s0 = log_s1;
    g0 = g1;
  }
  return out;
}

// With y = Q(1 - e^(-s)) the log-density is -(1 + xi) s - log(sigma), so
// a = int_0^inf F(-(1 + xi) s - log sigma) e^(-s) ds.
inline CorrectionValue gpd_correction(const GpdParams& p, double c, WeightedInformation* info) {
  using boost::math::quadrature::gauss_kronrod;
  constexpr double kAbsTol = 1e-9;
  const double log_sigma = std::log(p.sigma());
  const double slope = 1.0 + p.xi();
  auto z_of = [&](double s) { return -slope * s - log_sigma; };

  auto integrate = [&](auto&& f, const char* what, double tol) {
    double err = 0.0;
    const double v = gauss_kronrod<double, 31>::integrate(f, 0.0, std::numeric_limits<double>::infinity(), 15,
                                                          1e-12, &err);
    if (!(err <= tol) || !std::isfinite(v)) {
      throw std::runtime_error(std::string("consistency correction: quadrature for ") + what +
                               " did not converge (error estimate " + std::to_string(err) + ")");
    }
    return v;
  };

  CorrectionValue out;
  if (!std::isinf(c)) {
    out.value =
        integrate([&](double s) { return correction_integrand(z_of(s), c).value * std::exp(-s); }, "value", kAbsTol);
    const double d_log_sigma = integrate(
        [&](double s) { return -correction_integrand(z_of(s), c).derivative * std::exp(-s); }, "d_sigma", kAbsTol);
    out.d_sigma = d_log_sigma / p.sigma();
    out.d_xi = integrate(
        [&](double s) { return -correction_integrand(z_of(s), c).derivative * s * std::exp(-s); }, "d_xi", kAbsTol);
  } else {
    out.value = 1.0;
  }
  if (info != nullptr) {
    // Score at y(s) = sigma * expm1(xi s) / xi written in s, which stays
    // accurate near the upper endpoint when xi < 0.
    const double xi = p.xi();
    auto score = [&](double s) {
      const double a = xi * s;
      const double q = std::abs(a) < 1e-8 ? 1.0 - 0.5 * a : -std::expm1(-a) / a;  // (1 - e^-a) / a
      LogDensityGradient g;
      g.d_sigma = (-1.0 + (1.0 + xi) * s * q) / p.sigma();
      g.d_xi = std::abs(xi) < kNearZeroShape ? s * (-1.0 + 0.5 * s) + xi * (0.5 * s * s - s * s * s / 6.0)
                                             : (s / xi) * (1.0 - (1.0 + xi) * q);
      return g;
    };
    auto weighted = [&](double s, int which) {
      const double w = rho_weight(z_of(s), c) * std::exp(-s);
      if (w == 0.0) return 0.0;
      const auto g = score(s);
      return which == 0 ? w * g.d_sigma * g.d_sigma : which == 1 ? w * g.d_sigma * g.d_xi : w * g.d_xi * g.d_xi;
    };
    const double tol = 1e-6;
    info->ss = integrate([&](double s) { return weighted(s, 0); }, "information", tol);
    info->sx = integrate([&](double s) { return weighted(s, 1); }, "information", tol);
    info->xx = integrate([&](double s) { return weighted(s, 2); }, "information", tol);
  }
  return out;
}

}  // namespace detail

// a_c(theta) with its gradient in (sigma, xi).
inline CorrectionValue consistency_correction_with_gradient(const GpdParams& p, double c, Family family,
                                                            double tail_eps = 1e-10,
                                                            WeightedInformation* info = nullptr) {
  if (!(c > 0.0)) throw std::invalid_argument("consistency_correction: c must be positive");
  if (std::isinf(c) && info == nullptr) return {1.0, 0.0, 0.0};
  return family == Family::dgpd ? detail::dgpd_correction(p, c, tail_eps, info) : detail::gpd_correction(p, c, info);
}

inline double consistency_correction(const GpdParams& p, double c, Family family, double tail_eps = 1e-10) {
  return consistency_correction_with_gradient(p, c, family, tail_eps).value;
}

// ---------------------------------------------------------------------------

// One observation's contribution, differentiated in the linear predictors.
struct ObservationTerm {
  double value = 0.0;
  double d_eta_sigma = 0.0;
  double d_eta_xi = 0.0;
  double loglik = 0.0;
  double weight = 1.0;
};

inline std::optional<double> log_likelihood(double y, const GpdParams& p, Family family) {
  if (family == Family::gpd) return gpd_logpdf(y, p);
  return dgpd_log_pmf(static_cast<std::uint64_t>(y), p);
}

inline LogDensityGradient log_likelihood_gradient(double y, const GpdParams& p, Family family) {
  if (family == Family::gpd) return gpd_log_density_gradient(y, p);
  return dgpd_log_mass_gradient(static_cast<std::uint64_t>(y), p);
}

// An observation outside the support has log-likelihood -inf: weight 0 and
// rho = -softplus(c) for finite c; nullopt under maximum likelihood.
inline std::optional<ObservationTerm> observation_term(double y, double eta_sigma, double eta_xi, Family family,
                                                       ShapeBounds bounds, double c, double tail_eps,
                                                       bool with_gradient = true) {
  const GpdParams p(link_sigma(eta_sigma), link_xi(eta_xi, bounds), bounds);
  const auto ll = log_likelihood(y, p, family);
  if (!ll && std::isinf(c)) return std::nullopt;
  ObservationTerm t;
  t.loglik = ll ? *ll : -kInfinity;
  t.weight = rho_weight(t.loglik, c);
  if (!with_gradient) {
    t.value = rho(t.loglik, c) - consistency_correction(p, c, family, tail_eps);
    return t;
  }
  const auto corr = consistency_correction_with_gradient(p, c, family, tail_eps);
  t.value = rho(t.loglik, c) - corr.value;
  const auto g = ll ? log_likelihood_gradient(y, p, family) : LogDensityGradient{};
  t.d_eta_sigma = (t.weight * g.d_sigma - corr.d_sigma) * p.sigma();
  t.d_eta_xi = (t.weight * g.d_xi - corr.d_xi) * link_xi_derivative(eta_xi, bounds);
  return t;
}

// Objective over the stacked coefficient vector beta = (beta_sigma, beta_xi),
// maximized. Includes the spline penalty -0.5 * beta' S beta.
class RobustObjective {
 public:
  RobustObjective(const ExceedanceSet& data, const DesignMatrices& design, const RobustConfig& cfg)
      : values_(data.values), design_(design), cfg_(cfg) {
    if (static_cast<Eigen::Index>(values_.size()) != design_.rows()) {
      throw std::invalid_argument("RobustObjective: exceedance count does not match design rows");
    }
    if (!(cfg_.c > 0.0)) throw std::invalid_argument("RobustObjective: c must be positive");
    family_ = design_.layout.spec().family;
    bounds_ = design_.layout.spec().xi_bounds;
  }

  [[nodiscard]] Eigen::Index n_coef() const { return design_.n_coef(); }
  [[nodiscard]] std::size_t n_obs() const { return values_.size(); }
  [[nodiscard]] Family family() const { return family_; }
  [[nodiscard]] ShapeBounds bounds() const { return bounds_; }
  [[nodiscard]] const DesignMatrices& design() const { return design_; }
  [[nodiscard]] const RobustConfig& config() const { return cfg_; }

  [[nodiscard]] Eigen::VectorXd beta_sigma(const Eigen::VectorXd& beta) const { return beta.head(design_.p_sigma()); }
  [[nodiscard]] Eigen::VectorXd beta_xi(const Eigen::VectorXd& beta) const { return beta.tail(design_.p_xi()); }

  [[nodiscard]] double penalty(const Eigen::VectorXd& beta) const {
    const Eigen::VectorXd bs = beta_sigma(beta);
    const Eigen::VectorXd bx = beta_xi(beta);
    return 0.5 * (bs.dot(design_.penalty_sigma * bs) + bx.dot(design_.penalty_xi * bx));
  }

  // -inf when c is infinite and an observation falls outside the support.
  [[nodiscard]] double value(const Eigen::VectorXd& beta) const {
    const auto r = pass(beta, false, false);
    return r.feasible ? r.total - penalty(beta) : -kInfinity;
  }

  [[nodiscard]] Eigen::VectorXd gradient(const Eigen::VectorXd& beta) const {
    const auto r = feasible_pass(beta, false);
    return assemble_gradient(beta, r.ds, r.dx);
  }

  struct Evaluation {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::VectorXd weights;
    Eigen::VectorXd loglik;
    std::optional<Eigen::MatrixXd> expected_hessian;
  };

  [[nodiscard]] Evaluation evaluate(const Eigen::VectorXd& beta, bool with_expected_hessian = false) const {
    auto r = feasible_pass(beta, with_expected_hessian);
    Evaluation ev;
    ev.value = r.total - penalty(beta);
    ev.gradient = assemble_gradient(beta, r.ds, r.dx);
    ev.weights = std::move(r.weights);
    ev.loglik = std::move(r.loglik);
    if (with_expected_hessian) ev.expected_hessian = assemble_hessian(r.h_ss, r.h_sx, r.h_xx);
    return ev;
  }

  // Hessian from per-observation central differences of the eta-gradient,
  // assembled through the design (2x2 blocks per observation).
  [[nodiscard]] Eigen::MatrixXd hessian(const Eigen::VectorXd& beta) const {
    check(beta);
    const Eigen::VectorXd es = design_.x_sigma * beta_sigma(beta);
    const Eigen::VectorXd ex = design_.x_xi * beta_xi(beta);
    const auto n = static_cast<Eigen::Index>(values_.size());
    Eigen::VectorXd h_ss(n), h_sx(n), h_xx(n);
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const auto h = observation_hessian(i, es(idx(i)), ex(idx(i)));
      h_ss(idx(i)) = h(0, 0);
      h_sx(idx(i)) = h(0, 1);
      h_xx(idx(i)) = h(1, 1);
    }
    return assemble_hessian(h_ss, h_sx, h_xx);
  }

  // Expected-information approximation: minus sum_i x_i' E[w s s'] x_i in
  // the linear predictors, minus the penalty. Negative semidefinite.
  [[nodiscard]] Eigen::MatrixXd expected_hessian(const Eigen::VectorXd& beta) const {
    return *evaluate(beta, true).expected_hessian;
  }

  // Unpenalized per-observation gradients, one row per observation.
  [[nodiscard]] Eigen::MatrixXd scores(const Eigen::VectorXd& beta) const {
    const auto r = feasible_pass(beta, false);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(values_.size()), n_coef());
    out.leftCols(design_.p_sigma()) = design_.x_sigma.array().colwise() * r.ds.array();
    out.rightCols(design_.p_xi()) = design_.x_xi.array().colwise() * r.dx.array();
    return out;
  }

  [[nodiscard]] GpdParams params(const Eigen::VectorXd& beta, std::size_t i) const {
    return predict_params(beta_sigma(beta), beta_xi(beta), design_.x_sigma.row(idx(i)).transpose(),
                          design_.x_xi.row(idx(i)).transpose(), bounds_);
  }

 private:
  static Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

  void check(const Eigen::VectorXd& beta) const {
    if (beta.size() != n_coef()) throw std::invalid_argument("RobustObjective: coefficient dimension mismatch");
  }

  [[nodiscard]] std::optional<ObservationTerm> term(std::size_t i, double es, double ex, bool with_gradient) const {
    return observation_term(values_[i], es, ex, family_, bounds_, cfg_.c, cfg_.correction_tail_eps, with_gradient);
  }

  struct PassResult {
    bool feasible = true;
    double total = 0.0;
    Eigen::VectorXd ds, dx, weights, loglik, h_ss, h_sx, h_xx;
  };

  struct CorrectionEntry {
    CorrectionValue value;
    WeightedInformation info;
  };

  // One sweep over the observations. Corrections depend only on the
  // per-observation parameters and are shared between identical rows.
  [[nodiscard]] PassResult pass(const Eigen::VectorXd& beta, bool with_gradient, bool with_info) const {
    check(beta);
    const Eigen::VectorXd es = design_.x_sigma * beta_sigma(beta);
    const Eigen::VectorXd ex = design_.x_xi * beta_xi(beta);
    const auto n = static_cast<Eigen::Index>(values_.size());
    PassResult r;
    if (with_gradient) {
      r.ds.resize(n);
      r.dx.resize(n);
      r.weights.resize(n);
      r.loglik.resize(n);
    }
    if (with_info) {
      r.h_ss.resize(n);
      r.h_sx.resize(n);
      r.h_xx.resize(n);
    }
    std::map<std::pair<double, double>, CorrectionEntry> cache;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const double eta_s = es(idx(i));
      const double eta_x = ex(idx(i));
      const GpdParams p(link_sigma(eta_s), link_xi(eta_x, bounds_), bounds_);
      const auto ll_opt = log_likelihood(values_[i], p, family_);
      if (!ll_opt && std::isinf(cfg_.c)) {
        r.feasible = false;
        return r;
      }
      const double ll = ll_opt ? *ll_opt : -kInfinity;
      auto it = cache.find({eta_s, eta_x});
      if (it == cache.end()) {
        CorrectionEntry e;
        e.value = consistency_correction_with_gradient(p, cfg_.c, family_, cfg_.correction_tail_eps,
                                                       with_info ? &e.info : nullptr);
        it = cache.emplace(std::pair{eta_s, eta_x}, e).first;
      }
      const auto& corr = it->second;
      r.total += rho(ll, cfg_.c) - corr.value.value;
      if (!with_gradient && !with_info) continue;
      const double w = rho_weight(ll, cfg_.c);
      const double d_sigma = p.sigma();
      const double d_xi = link_xi_derivative(eta_x, bounds_);
      if (with_gradient) {
        const auto g = ll_opt ? log_likelihood_gradient(values_[i], p, family_) : LogDensityGradient{};
        r.ds(idx(i)) = (w * g.d_sigma - corr.value.d_sigma) * d_sigma;
        r.dx(idx(i)) = (w * g.d_xi - corr.value.d_xi) * d_xi;
        r.weights(idx(i)) = w;
        r.loglik(idx(i)) = ll;
      }
      if (with_info) {
        r.h_ss(idx(i)) = -corr.info.ss * d_sigma * d_sigma;
        r.h_sx(idx(i)) = -corr.info.sx * d_sigma * d_xi;
        r.h_xx(idx(i)) = -corr.info.xx * d_xi * d_xi;
      }
    }
    return r;
  }

  [[nodiscard]] PassResult feasible_pass(const Eigen::VectorXd& beta, bool with_info) const {
    auto r = pass(beta, true, with_info);
    if (!r.feasible) throw std::domain_error("RobustObjective: an observation lies outside the support");
    return r;
  }

  [[nodiscard]] Eigen::VectorXd assemble_gradient(const Eigen::VectorXd& beta, const Eigen::VectorXd& ds,
                                                  const Eigen::VectorXd& dx) const {
    Eigen::VectorXd g(n_coef());
    g.head(design_.p_sigma()) = design_.x_sigma.transpose() * ds - design_.penalty_sigma * beta_sigma(beta);
    g.tail(design_.p_xi()) = design_.x_xi.transpose() * dx - design_.penalty_xi * beta_xi(beta);
    return g;
  }

  [[nodiscard]] Eigen::MatrixXd assemble_hessian(const Eigen::VectorXd& h_ss, const Eigen::VectorXd& h_sx,
                                                 const Eigen::VectorXd& h_xx) const {
    const auto& xs = design_.x_sigma;
    const auto& xx = design_.x_xi;
    const Eigen::Index ps = design_.p_sigma();
    const Eigen::Index px = design_.p_xi();
    Eigen::MatrixXd hess(ps + px, ps + px);
    hess.topLeftCorner(ps, ps) = xs.transpose() * h_ss.asDiagonal() * xs - design_.penalty_sigma;
    hess.bottomRightCorner(px, px) = xx.transpose() * h_xx.asDiagonal() * xx - design_.penalty_xi;
    hess.topRightCorner(ps, px) = xs.transpose() * h_sx.asDiagonal() * xx;
    hess.bottomLeftCorner(px, ps) = hess.topRightCorner(ps, px).transpose();
    return hess;
  }

  [[nodiscard]] Eigen::Matrix2d observation_hessian(std::size_t i, double es, double ex) const {
    double h = 1e-5;
    for (int attempt = 0; attempt < 4; ++attempt, h *= 0.1) {
      const auto sp = term(i, es + h, ex, true);
      const auto sm = term(i, es - h, ex, true);
      const auto xp = term(i, es, ex + h, true);
      const auto xm = term(i, es, ex - h, true);
      if (!sp || !sm || !xp || !xm) continue;
      Eigen::Matrix2d m;
      m(0, 0) = (sp->d_eta_sigma - sm->d_eta_sigma) / (2.0 * h);
      m(1, 1) = (xp->d_eta_xi - xm->d_eta_xi) / (2.0 * h);
      m(0, 1) = m(1, 0) = 0.5 * ((sp->d_eta_xi - sm->d_eta_xi) + (xp->d_eta_sigma - xm->d_eta_sigma)) / (2.0 * h);
      return m;
    }
    throw std::domain_error("RobustObjective: Hessian stencil leaves the support at observation " +
                            std::to_string(i));
  }

  std::vector<double> values_;
  DesignMatrices design_;
  RobustConfig cfg_;
  Family family_ = Family::dgpd;
  ShapeBounds bounds_{};
};

inline double robust_objective(const Eigen::VectorXd& beta_sigma, const Eigen::VectorXd& beta_xi,
                               const ExceedanceSet& data, const DesignMatrices& design, const RobustConfig& cfg) {
  Eigen::VectorXd beta(beta_sigma.size() + beta_xi.size());
  beta << beta_sigma, beta_xi;
  return RobustObjective(data, design, cfg).value(beta);
}

inline Eigen::VectorXd robust_gradient(const Eigen::VectorXd& beta_sigma, const Eigen::VectorXd& beta_xi,
                                       const ExceedanceSet& data, const DesignMatrices& design,
                                       const RobustConfig& cfg) {
  Eigen::VectorXd beta(beta_sigma.size() + beta_xi.size());
  beta << beta_sigma, beta_xi;
  return RobustObjective(data, design, cfg).gradient(beta);
}

}  // namespace potreg
