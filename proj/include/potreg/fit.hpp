#pragma once

// Newton ascent on the robust objective, sandwich covariance and the
// tuning-constant calibration.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "potreg/design.hpp"
#include "potreg/pot.hpp"
#include "potreg/robust.hpp"

namespace potreg {

struct FitResult {
  Eigen::VectorXd beta_sigma;
  Eigen::VectorXd beta_xi;
  Eigen::VectorXd weights;
  double objective = -kInfinity;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = kInfinity;
  double gradient_tolerance = 0.0;
  int restart = 0;  // index of the start that produced this result
  double c = kInfinity;
  std::optional<Eigen::MatrixXd> covariance;
  bool covariance_singular = false;
  std::vector<std::string> warnings;

  // Echo of the model: spec, standardization and knots.
  DesignLayout layout;
  ResponseKind kind = ResponseKind::count;
  double threshold = 0.0;
  std::size_t n_obs = 0;

  [[nodiscard]] Eigen::VectorXd beta() const {
    Eigen::VectorXd b(beta_sigma.size() + beta_xi.size());
    b << beta_sigma, beta_xi;
    return b;
  }

  [[nodiscard]] GpdParams params_at(const std::map<std::string, double>& record) const {
    const auto [rs, rx] = layout.rows(record);
    return predict_params(beta_sigma, beta_xi, rs, rx, layout.spec().xi_bounds);
  }
};

namespace detail {

// Intercepts from the method of moments on the exceedances; slopes zero.
inline Eigen::VectorXd initial_coefficients(const ExceedanceSet& data, const DesignMatrices& design) {
  const auto& spec = design.layout.spec();
  const ShapeBounds b = spec.xi_bounds;
  const double offset = spec.family == Family::dgpd ? 0.5 : 0.0;
  const auto n = static_cast<double>(data.values.size());
  double mean = 0.0;
  for (double v : data.values) mean += v + offset;
  mean /= n;
  double var = 0.0;
  for (double v : data.values) var += (v + offset - mean) * (v + offset - mean);
  var = data.values.size() > 1 ? var / (n - 1.0) : 0.0;

  double xi = var > 0.0 ? 0.5 * (1.0 - mean * mean / var) : 0.1;
  // xi >= 0 keeps every observation inside the support at the start
  const double margin = 0.05 * (b.hi - b.lo);
  xi = std::clamp(xi, std::max(0.0, b.lo + margin), b.hi - margin);
  const double sigma = std::max(mean * (1.0 - xi), 1e-3);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(design.n_coef());
  beta(0) = link_sigma_inv(sigma);
  beta(design.p_sigma()) = link_xi_inv(xi, b);
  return beta;
}

struct NewtonOutcome {
  Eigen::VectorXd beta;
  RobustObjective::Evaluation eval;
  bool converged = false;
  int iterations = 0;
  double tolerance = 0.0;
  std::string failure;
};

inline NewtonOutcome newton_ascent(const RobustObjective& obj, Eigen::VectorXd beta) {
  constexpr int kMaxHalvings = 30;
  const auto& cfg = obj.config();
  NewtonOutcome out;
  if (!std::isfinite(obj.value(beta))) {
    out.beta = beta;
    out.failure = "starting point outside the support";
    return out;
  }
  const bool expected = !std::isinf(cfg.c);
  auto ev = obj.evaluate(beta, expected);
  for (;;) {
    out.tolerance = cfg.grad_tol * std::max(1.0, std::abs(ev.value));
    if (ev.gradient.norm() <= out.tolerance) {
      out.converged = true;
      break;
    }
    if (out.iterations >= cfg.max_iter) {
      out.failure = "iteration limit reached";
      break;
    }

    // Newton direction on the negated Hessian with eigenvalues made positive.
    // Robust fits use expected information; its cost is a by-product of the
    // correction sums.
    Eigen::MatrixXd neg_h;
    try {
      neg_h = expected ? Eigen::MatrixXd(-*ev.expected_hessian) : Eigen::MatrixXd(-obj.hessian(beta));
    } catch (const std::exception& e) {
      out.failure = e.what();
      break;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (neg_h + neg_h.transpose()));
    Eigen::VectorXd lambda = eig.eigenvalues().cwiseAbs();
    const double floor = 1e-8 * std::max(1.0, lambda.maxCoeff());
    lambda = lambda.cwiseMax(floor);
    const Eigen::VectorXd dir =
        eig.eigenvectors() * (eig.eigenvectors().transpose() * ev.gradient).cwiseQuotient(lambda);

    // Near the optimum the predicted ascent falls below the rounding level of
    // the objective; there a step that shrinks the gradient is accepted.
    const double noise = 1e-12 * std::max(1.0, std::abs(ev.value));
    const double gnorm = ev.gradient.norm();
    bool accepted = false;
    double step = 1.0;
    for (int h = 0; h <= kMaxHalvings; ++h, step *= 0.5) {
      const Eigen::VectorXd cand = beta + step * dir;
      const double v = obj.value(cand);
      if (!std::isfinite(v)) continue;
      if (v >= ev.value || (v >= ev.value - noise && obj.gradient(cand).norm() < gnorm)) {
        beta = cand;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.failure = "line search failed after step halving";
      break;
    }
    ++out.iterations;
    ev = obj.evaluate(beta, expected);
  }
  out.beta = beta;
  out.eval = std::move(ev);
  return out;
}

}  // namespace detail

// Maximizes the robust objective. Starts from `start` when given, otherwise
// from method-of-moments intercepts plus cfg.n_restarts jittered copies.
inline FitResult fit(const ExceedanceSet& data, const DesignMatrices& design, const RobustConfig& cfg,
                     const std::optional<Eigen::VectorXd>& start = std::nullopt) {
  const RobustObjective obj(data, design, cfg);
  FitResult best;
  best.layout = design.layout;
  best.kind = data.kind;
  best.threshold = data.threshold;
  best.n_obs = data.size();
  best.c = cfg.c;

  std::vector<std::string> warnings;
  if (static_cast<Eigen::Index>(data.size()) < design.n_coef()) {
    warnings.push_back("fewer exceedances (" + std::to_string(data.size()) + ") than coefficients (" +
                       std::to_string(design.n_coef()) + ")");
  }

  std::vector<Eigen::VectorXd> starts;
  if (start) {
    if (start->size() != design.n_coef()) throw std::invalid_argument("fit: start has wrong dimension");
    starts.push_back(*start);
  } else {
    const Eigen::VectorXd base = detail::initial_coefficients(data, design);
    starts.push_back(base);
    constexpr std::array<std::array<double, 2>, 4> kJitter{{{0.25, 0.25}, {-0.25, -0.25}, {0.25, -0.25}, {-0.25, 0.25}}};
    for (int r = 0; r < cfg.n_restarts; ++r) {
      Eigen::VectorXd b = base;
      const auto& j = kJitter[static_cast<std::size_t>(r) % kJitter.size()];
      const double scale = 1.0 + static_cast<double>(r / 4);
      b(0) += j[0] * scale;
      b(design.p_sigma()) += j[1] * scale;
      starts.push_back(b);
    }
  }

  bool have = false;
  std::string last_failure;
  for (std::size_t r = 0; r < starts.size(); ++r) {
    auto out = detail::newton_ascent(obj, starts[r]);
    if (out.eval.gradient.size() == 0) {
      warnings.push_back("start " + std::to_string(r) + ": " + out.failure);
      continue;
    }
    if (!out.converged) last_failure = out.failure;
    const double gnorm = out.eval.gradient.norm();
    // best objective, then smaller gradient norm, then earlier start
    const bool better = !have || out.eval.value > best.objective ||
                        (out.eval.value == best.objective && gnorm < best.gradient_norm);
    if (!better) continue;
    have = true;
    best.beta_sigma = obj.beta_sigma(out.beta);
    best.beta_xi = obj.beta_xi(out.beta);
    best.weights = out.eval.weights;
    best.objective = out.eval.value;
    best.converged = out.converged;
    best.iterations = out.iterations;
    best.gradient_norm = gnorm;
    best.gradient_tolerance = out.tolerance;
    best.restart = static_cast<int>(r);
  }
  if (!have) {
    warnings.push_back("no start produced a finite objective");
    best.beta_sigma = obj.beta_sigma(starts.front());
    best.beta_xi = obj.beta_xi(starts.front());
  } else if (!best.converged) {
    warnings.push_back("not converged: " + (last_failure.empty() ? std::string("unknown") : last_failure));
  }
  best.warnings = std::move(warnings);
  return best;
}

struct SandwichResult {
  Eigen::MatrixXd covariance;
  bool singular = false;
};

// B^-1 M B^-1 with B the negated Hessian and M the sum of outer products of
// per-observation scores. A singular B falls back to its pseudo-inverse.
inline SandwichResult sandwich_covariance(const FitResult& result, const ExceedanceSet& data,
                                          const DesignMatrices& design, const RobustConfig& cfg) {
  RobustConfig c = cfg;
  c.c = result.c;
  const RobustObjective obj(data, design, c);
  const Eigen::VectorXd beta = result.beta();
  const Eigen::MatrixXd bread = -obj.hessian(beta);
  const Eigen::MatrixXd s = obj.scores(beta);
  const Eigen::MatrixXd meat = s.transpose() * s;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (bread + bread.transpose()));
  const Eigen::VectorXd lambda = eig.eigenvalues();
  const double cutoff = 1e-10 * std::max(1.0, lambda.cwiseAbs().maxCoeff());
  SandwichResult out;
  Eigen::VectorXd inv(lambda.size());
  for (Eigen::Index j = 0; j < lambda.size(); ++j) {
    if (lambda(j) <= cutoff) {
      out.singular = true;
      inv(j) = 0.0;
    } else {
      inv(j) = 1.0 / lambda(j);
    }
  }
  const Eigen::MatrixXd b_inv = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  const Eigen::MatrixXd cov = b_inv * meat * b_inv;
  out.covariance = 0.5 * (cov + cov.transpose());
  return out;
}

// Log-likelihood at the mode of the fitted distribution for observation i.
inline double modal_log_likelihood(const GpdParams& p, Family family) {
  return family == Family::dgpd ? *dgpd_log_pmf(0, p) : -std::log(p.sigma());
}

// Smallest c giving weight >= 0.95 to every point whose log-likelihood is
// within 2 of its observation's modal log-likelihood.
inline double calibrate_tuning_constant(const FitResult& result, const DesignMatrices& design) {
  constexpr double kMinC = 0.1;
  const double logit95 = std::log(0.95 / 0.05);
  const auto bounds = design.layout.spec().xi_bounds;
  const auto family = design.layout.spec().family;
  double c = kMinC;
  for (Eigen::Index i = 0; i < design.rows(); ++i) {
    const auto p = predict_params(result.beta_sigma, result.beta_xi, design.x_sigma.row(i).transpose(),
                                  design.x_xi.row(i).transpose(), bounds);
    c = std::max(c, logit95 + 2.0 - modal_log_likelihood(p, family));
  }
  return c;
}

// Robust fit with c calibrated from the fitted model: start from the
// maximum-likelihood fit and alternate calibration and refitting.
inline FitResult fit_calibrated(const ExceedanceSet& data, const DesignMatrices& design, RobustConfig cfg,
                                const FitResult* ml_fit = nullptr, int rounds = 3) {
  FitResult ml;
  if (ml_fit == nullptr) {
    cfg.c = kInfinity;
    ml = fit(data, design, cfg);
    ml_fit = &ml;
  }
  double c = calibrate_tuning_constant(*ml_fit, design);
  FitResult result;
  for (int r = 0; r < rounds; ++r) {
    cfg.c = c;
    result = fit(data, design, cfg);
    const double next = calibrate_tuning_constant(result, design);
    if (std::abs(next - c) < 1e-3) break;
    c = next;
  }
  return result;
}

struct LambdaCandidate {
  double lambda = 0.0;
  double aic = kInfinity;
  double edf = 0.0;
  bool converged = false;
};

// Refits with every spline penalty set to each grid value and reports
// AIC = -2 loglik + 2 edf, edf = tr(F (F + S)^-1) with F the negated
// unpenalized Hessian.
inline std::vector<LambdaCandidate> lambda_grid_aic(const ExceedanceSet& data, const ModelSpec& spec,
                                                    const RobustConfig& cfg, const std::vector<double>& grid) {
  std::vector<LambdaCandidate> out;
  for (double lambda : grid) {
    ModelSpec s = spec;
    for (auto* terms : {&s.sigma_terms, &s.xi_terms}) {
      for (auto& t : *terms) {
        if (t.kind == TermKind::spline) t.lambda = lambda;
      }
    }
    const auto design = build_design(data.covariates, s);
    const auto result = fit(data, design, cfg);
    LambdaCandidate row;
    row.lambda = lambda;
    row.converged = result.converged;
    if (std::isfinite(result.objective)) {
      const RobustObjective obj(data, design, cfg);
      const auto ev = obj.evaluate(result.beta());
      const Eigen::MatrixXd pen_h = -obj.hessian(result.beta());
      Eigen::MatrixXd penalty = Eigen::MatrixXd::Zero(pen_h.rows(), pen_h.cols());
      penalty.topLeftCorner(design.p_sigma(), design.p_sigma()) = design.penalty_sigma;
      penalty.bottomRightCorner(design.p_xi(), design.p_xi()) = design.penalty_xi;
      const Eigen::MatrixXd unpen = pen_h - penalty;
      row.edf = (pen_h.ldlt().solve(unpen)).trace();
      row.aic = -2.0 * ev.loglik.sum() + 2.0 * row.edf;
    }
    out.push_back(row);
  }
  return out;
}

}  // namespace potreg
