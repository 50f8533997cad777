#pragma once

// Charge-at-Risk: the level-alpha quantile of the daily response under a
// covariate scenario, composed from the exceedance rate zeta(x) and the
// fitted tail: P(Y <= q) = 1 - zeta + zeta * F_tail(q - u).

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "potreg/fit.hpp"
#include "potreg/pot.hpp"

namespace potreg {

enum class RateModel { constant, logistic };

inline const char* to_string(RateModel m) { return m == RateModel::constant ? "constant" : "logistic"; }

inline RateModel rate_model_from_string(const std::string& s) {
  if (s == "constant") return RateModel::constant;
  if (s == "logistic") return RateModel::logistic;
  throw StageError("config", "unknown rate_model '" + s + "' (expected constant or logistic)");
}

inline constexpr double kSeparationGuard = 30.0;

// P(response > u | x) through a logistic link on standardized covariates.
// The constant model is the empirical rate and ignores covariates.
struct ExceedanceRateFit {
  RateModel model = RateModel::logistic;
  double threshold = 0.0;
  std::vector<std::string> covariates;
  std::vector<Standardization> standardization;  // aligned with covariates
  Eigen::VectorXd beta;                          // intercept first
  bool converged = false;
  bool separation = false;
  int iterations = 0;
  std::size_t n_obs = 0;
  std::size_t n_exceed = 0;

  [[nodiscard]] double zeta(const std::map<std::string, double>& record) const {
    if (model == RateModel::constant) return static_cast<double>(n_exceed) / static_cast<double>(n_obs);
    double eta = beta(0);
    for (std::size_t j = 0; j < covariates.size(); ++j) {
      const auto it = record.find(covariates[j]);
      if (it == record.end()) throw StageError("care", "missing covariate '" + covariates[j] + "'");
      if (!std::isfinite(it->second)) {
        throw StageError("care", "non-finite value for covariate '" + covariates[j] + "'");
      }
      eta += beta(static_cast<Eigen::Index>(j) + 1) * standardization[j].apply(it->second);
    }
    return logistic(eta);
  }

  [[nodiscard]] bool extrapolates(const std::map<std::string, double>& record) const {
    if (model == RateModel::constant) return false;
    for (const auto& s : standardization) {
      const auto it = record.find(s.covariate);
      if (it != record.end() && (it->second < s.min || it->second > s.max)) return true;
    }
    return false;
  }
};

// Iteratively reweighted least squares to a score tolerance of 1e-8. Rows
// with a missing response or covariate are skipped. Coefficients beyond
// kSeparationGuard flag the fit as separated and stop the iteration.
inline ExceedanceRateFit fit_exceedance_rate(std::span<const double> response, const CovariateTable& covariates,
                                             double threshold, const std::vector<std::string>& names,
                                             RateModel model = RateModel::logistic, int max_iter = 100) {
  ExceedanceRateFit out;
  out.model = model;
  out.threshold = threshold;
  if (model == RateModel::logistic) out.covariates = names;

  std::vector<const std::vector<double>*> cols;
  for (const auto& name : out.covariates) {
    const auto* c = covariates.find(name);
    if (c == nullptr) throw StageError("design", "unknown covariate '" + name + "'");
    if (c->size() != response.size()) throw StageError("care", "covariate '" + name + "' length mismatch");
    cols.push_back(c);
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < response.size(); ++i) {
    if (is_missing(response[i])) continue;
    if (std::all_of(cols.begin(), cols.end(), [&](const auto* c) { return std::isfinite((*c)[i]); })) {
      rows.push_back(i);
    }
  }
  out.n_obs = rows.size();
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const bool exceed = response[rows[r]] > threshold;
    y(static_cast<Eigen::Index>(r)) = exceed ? 1.0 : 0.0;
    out.n_exceed += exceed ? 1 : 0;
  }
  if (out.n_exceed == 0 || out.n_exceed == out.n_obs) {
    throw StageError("care", "exceedance-rate fit needs both exceedance and non-exceedance days");
  }

  const double rate = static_cast<double>(out.n_exceed) / static_cast<double>(out.n_obs);
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(cols.size()) + 1;
  Eigen::MatrixXd x(n, p);
  x.col(0).setOnes();
  for (std::size_t j = 0; j < cols.size(); ++j) {
    Standardization s;
    s.covariate = out.covariates[j];
    s.min = std::numeric_limits<double>::infinity();
    s.max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (std::size_t r : rows) {
      const double v = (*cols[j])[r];
      sum += v;
      s.min = std::min(s.min, v);
      s.max = std::max(s.max, v);
    }
    s.center = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t r : rows) ss += ((*cols[j])[r] - s.center) * ((*cols[j])[r] - s.center);
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    s.scale = sd > 0.0 ? sd : 1.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      x(r, static_cast<Eigen::Index>(j) + 1) = s.apply((*cols[j])[rows[static_cast<std::size_t>(r)]]);
    }
    out.standardization.push_back(s);
  }

  out.beta = Eigen::VectorXd::Zero(p);
  out.beta(0) = std::log(rate) - std::log1p(-rate);
  if (model == RateModel::constant) {
    out.converged = true;
    return out;
  }
  for (int it = 0; it <= max_iter; ++it) {
    out.iterations = it;
    const Eigen::VectorXd eta = x * out.beta;
    Eigen::VectorXd mu(n), w(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      mu(r) = logistic(eta(r));
      w(r) = mu(r) * (1.0 - mu(r));
    }
    const Eigen::VectorXd score = x.transpose() * (y - mu);
    if (score.lpNorm<Eigen::Infinity>() <= 1e-8) {
      out.converged = true;
      break;
    }
    if (it == max_iter) break;
    const Eigen::MatrixXd info = x.transpose() * w.asDiagonal() * x;
    out.beta += info.ldlt().solve(score);
    if (!out.beta.allFinite() || out.beta.cwiseAbs().maxCoeff() > kSeparationGuard) {
      out.separation = true;
      break;
    }
  }
  return out;
}

struct CareEstimate {
  double alpha = 0.0;
  double threshold = 0.0;
  double zeta = 0.0;
  double tail_level = kMissing;     // p' = (alpha - (1 - zeta)) / zeta; missing when censored
  double tail_quantile = kMissing;  // on the exceedance scale
  double value = 0.0;               // original response scale
  bool censored_below_threshold = false;
  bool extrapolated = false;
};

// CaRe from its ingredients. Counts use the smallest integer whose CDF
// reaches the level and undo the u + 1 shift of the exceedance scale.
inline CareEstimate care_from_parts(double alpha, double threshold, double zeta, const GpdParams& tail,
                                    ResponseKind kind) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw StageError("care", "alpha must lie in (0, 1)");
  if (!(zeta > 0.0 && zeta < 1.0)) throw StageError("care", "exceedance rate must lie in (0, 1)");
  CareEstimate e;
  e.alpha = alpha;
  e.threshold = threshold;
  e.zeta = zeta;
  if (alpha <= 1.0 - zeta) {
    e.censored_below_threshold = true;
    e.value = threshold;
    return e;
  }
  e.tail_level = (alpha - (1.0 - zeta)) / zeta;
  if (kind == ResponseKind::odds) {
    e.tail_quantile = gpd_quantile(e.tail_level, tail);
    e.value = threshold + e.tail_quantile;
  } else {
    e.tail_quantile = static_cast<double>(dgpd_quantile(e.tail_level, tail));
    e.value = threshold + 1.0 + e.tail_quantile;
  }
  return e;
}

inline CareEstimate care(const FitResult& tail_fit, const ExceedanceRateFit& rate_fit,
                         const std::map<std::string, double>& scenario, double alpha) {
  auto e = care_from_parts(alpha, tail_fit.threshold, rate_fit.zeta(scenario), tail_fit.params_at(scenario),
                           tail_fit.kind);
  e.extrapolated = tail_fit.layout.extrapolates(scenario) || rate_fit.extrapolates(scenario);
  return e;
}

inline std::vector<CareEstimate> care_curve(const FitResult& tail_fit, const ExceedanceRateFit& rate_fit,
                                            const std::map<std::string, double>& scenario,
                                            std::span<const double> alphas) {
  for (std::size_t i = 1; i < alphas.size(); ++i) {
    if (!(alphas[i] >= alphas[i - 1])) throw StageError("care", "alpha grid must be sorted ascending");
  }
  std::vector<CareEstimate> out;
  out.reserve(alphas.size());
  for (double a : alphas) out.push_back(care(tail_fit, rate_fit, scenario, a));
  return out;
}

struct CongestionProbability {
  bool computable = true;  // false when the capacity lies below the threshold
  double probability = kMissing;
  double lower_bound = kMissing;  // set when not computable: P >= zeta
};

// P(Y > L | x). Counts: zeta * P(W >= L - u) with W = Y - u - 1.
inline CongestionProbability congestion_from_parts(double capacity, double threshold, double zeta,
                                                   const GpdParams& tail, ResponseKind kind) {
  CongestionProbability out;
  if (!std::isfinite(capacity) && capacity > 0.0) {
    out.probability = 0.0;
    return out;
  }
  if (!(capacity >= threshold)) {
    out.computable = false;
    out.lower_bound = zeta;
    return out;
  }
  if (kind == ResponseKind::odds) {
    out.probability = zeta * gpd_survival(capacity - threshold, tail);
  } else {
    const double m = std::floor(capacity) - threshold - 1.0;  // P(W > m)
    if (m < 0.0) {
      out.probability = zeta;
    } else {
      out.probability = zeta * gpd_survival(m + 1.0, tail);
    }
  }
  return out;
}

inline CongestionProbability congestion_probability(const FitResult& tail_fit, const ExceedanceRateFit& rate_fit,
                                                    const std::map<std::string, double>& scenario,
                                                    double capacity) {
  return congestion_from_parts(capacity, tail_fit.threshold, rate_fit.zeta(scenario), tail_fit.params_at(scenario),
                               tail_fit.kind);
}

}  // namespace potreg
