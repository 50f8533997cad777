#pragma once

// Synthetic daily series with a known covariate-linked tail, outlier
// contamination, and the robust-versus-likelihood replication harness.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "potreg/fit.hpp"
#include "potreg/pot.hpp"

namespace potreg {

// x_t = mean + amplitude * sin(2 pi (t / period + phase)) + N(0, noise_sd)
struct CovariateGenerator {
  std::string name;
  double mean = 0.0;
  double amplitude = 0.0;
  double period = 365.25;
  double phase = 0.0;
  double noise_sd = 0.0;
};

enum class ContaminationMechanism { multiply, shift };

inline const char* to_string(ContaminationMechanism m) {
  return m == ContaminationMechanism::multiply ? "multiply" : "shift";
}

struct Contamination {
  double fraction = 0.0;
  ContaminationMechanism mechanism = ContaminationMechanism::multiply;
  double factor = 10.0;  // multiply
  double shift = 0.0;    // shift
};

struct ScenarioConfig {
  std::size_t n_days = 1000;
  Family family = Family::dgpd;
  std::vector<CovariateGenerator> generators;
  // Raw-scale linear predictors: intercept then one slope per listed covariate.
  std::vector<std::string> sigma_covariates;
  std::vector<std::string> xi_covariates;
  Eigen::VectorXd beta_sigma = Eigen::VectorXd::Zero(1);
  Eigen::VectorXd beta_xi = Eigen::VectorXd::Zero(1);
  ShapeBounds xi_bounds{};
  double threshold = 20.0;    // integer for counts
  double exceed_prob = 0.25;  // P(day lies in the tail region)
  double bulk_min = 0.0;      // bulk filler is uniform on [bulk_min, threshold]
  Contamination contamination;
  std::size_t n_replicates = 100;
  std::uint64_t base_seed = 1;
  RobustConfig robust;       // robust.c is used only when calibrate_c is false
  bool calibrate_c = true;
  std::size_t n_threads = 1;

  [[nodiscard]] ResponseKind kind() const { return family == Family::dgpd ? ResponseKind::count : ResponseKind::odds; }

  void validate() const {
    if (n_days == 0) throw StageError("config", "n_days must be positive");
    if (!(contamination.fraction >= 0.0 && contamination.fraction < 1.0)) {
      throw StageError("config", "contamination fraction must lie in [0, 1)");
    }
    if (!(exceed_prob > 0.0 && exceed_prob < 1.0)) throw StageError("config", "exceed_prob must lie in (0, 1)");
    if (family == Family::dgpd && threshold != std::floor(threshold)) {
      throw StageError("config", "count threshold must be integer-valued");
    }
    if (!(bulk_min <= threshold)) throw StageError("config", "bulk_min must not exceed the threshold");
    if (beta_sigma.size() != static_cast<Eigen::Index>(sigma_covariates.size()) + 1 ||
        beta_xi.size() != static_cast<Eigen::Index>(xi_covariates.size()) + 1) {
      throw StageError("config", "true coefficients must have one intercept plus one slope per covariate");
    }
    auto known = [&](const std::string& n) {
      return std::any_of(generators.begin(), generators.end(), [&](const auto& g) { return g.name == n; });
    };
    for (const auto* list : {&sigma_covariates, &xi_covariates}) {
      for (const auto& n : *list) {
        if (!known(n)) throw StageError("config", "no generator for covariate '" + n + "'");
      }
    }
    for (const auto& g : generators) {
      if (!std::isfinite(g.mean) || !std::isfinite(g.amplitude) || !(g.period > 0.0) || !(g.noise_sd >= 0.0)) {
        throw StageError("config", "generator '" + g.name + "' has invalid parameters");
      }
    }
  }

  // The model the study fits: linear terms on the truth's covariates.
  [[nodiscard]] ModelSpec model_spec() const {
    ModelSpec spec = ModelSpec::intercept_only(family, xi_bounds);
    for (const auto& n : sigma_covariates) spec.sigma_terms.push_back(Term::linear(n));
    for (const auto& n : xi_covariates) spec.xi_terms.push_back(Term::linear(n));
    return spec;
  }
};

// splitmix64 finalizer over (base, stream, index): independent streams per
// replicate without sequential state.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index, std::uint64_t stream = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ index) ^ stream);
}

struct SimulatedSeries {
  ResponseKind kind = ResponseKind::count;
  DailySeries series;
  std::vector<double> response;
  std::vector<bool> in_tail;       // drawn from the tail model
  std::vector<bool> contaminated;  // all false until contaminate()
  std::vector<GpdParams> truth;    // tail parameters per day
};

namespace detail {

// Box-Muller on the 53-bit uniform, so draws do not depend on the standard
// library's distribution implementations.
template <class Engine>
double standard_normal(Engine& rng) {
  const double u1 = open_uniform(rng);
  const double u2 = open_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline void set_counts(DailySeries& s, std::size_t t, double y) {
  const auto total = static_cast<std::int64_t>(y);
  const std::int64_t pos = total / 3;
  s.positives[t] = pos;
  s.negatives[t] = total - pos;
  s.visits[t] = total;
}

}  // namespace detail

// Counts: the total (positives + negatives) carries the response. Odds
// responses are returned in `response` only; the series count columns stay
// missing.
inline SimulatedSeries generate(const ScenarioConfig& cfg, std::uint64_t replicate) {
  cfg.validate();
  std::mt19937_64 rng(derive_seed(cfg.base_seed, replicate, 0));
  SimulatedSeries out;
  out.kind = cfg.kind();
  const std::size_t n = cfg.n_days;
  auto& s = out.series;
  s.visits.assign(n, std::nullopt);
  s.positives.assign(n, std::nullopt);
  s.negatives.assign(n, std::nullopt);
  const std::chrono::sys_days start{std::chrono::year{2020} / 1 / 1};
  for (std::size_t t = 0; t < n; ++t) s.dates.emplace_back(start + std::chrono::days{static_cast<long>(t)});

  s.covariates.n_rows = n;
  for (const auto& g : cfg.generators) {
    std::vector<double> col(n);
    for (std::size_t t = 0; t < n; ++t) {
      const double season = std::sin(2.0 * std::numbers::pi * (static_cast<double>(t) / g.period + g.phase));
      col[t] = g.mean + g.amplitude * season + g.noise_sd * detail::standard_normal(rng);
    }
    s.covariates.add(g.name, std::move(col));
  }

  auto linear = [&](const Eigen::VectorXd& beta, const std::vector<std::string>& names, std::size_t t) {
    double eta = beta(0);
    for (std::size_t j = 0; j < names.size(); ++j) {
      eta += beta(static_cast<Eigen::Index>(j) + 1) * (*s.covariates.find(names[j]))[t];
    }
    return eta;
  };

  const bool counts = cfg.family == Family::dgpd;
  out.response.resize(n);
  out.in_tail.assign(n, false);
  out.contaminated.assign(n, false);
  for (std::size_t t = 0; t < n; ++t) {
    const GpdParams p(link_sigma(linear(cfg.beta_sigma, cfg.sigma_covariates, t)),
                      link_xi(linear(cfg.beta_xi, cfg.xi_covariates, t), cfg.xi_bounds), cfg.xi_bounds);
    out.truth.push_back(p);
    const bool tail = detail::open_uniform(rng) < cfg.exceed_prob;
    out.in_tail[t] = tail;
    double y = 0.0;
    if (tail) {
      y = counts ? cfg.threshold + 1.0 + static_cast<double>(dgpd_sample(rng, p, 1).front())
                 : cfg.threshold + gpd_sample(rng, p, 1).front();
    } else {
      const double u = detail::open_uniform(rng);
      y = counts ? cfg.bulk_min + std::floor(u * (cfg.threshold - cfg.bulk_min + 1.0))
                 : cfg.bulk_min + u * (cfg.threshold - cfg.bulk_min);
    }
    out.response[t] = y;
    if (counts) detail::set_counts(s, t, y);
  }
  return out;
}

// Transforms ceil(fraction * n) tail-region rows chosen uniformly without
// replacement; n is the number of tail-region rows. Returns the mask.
template <class Engine>
std::vector<bool> contaminate(SimulatedSeries& sim, const Contamination& c, Engine& rng) {
  if (!(c.fraction >= 0.0 && c.fraction < 1.0)) throw StageError("simulate", "contamination fraction must lie in [0, 1)");
  std::vector<std::size_t> pool;
  for (std::size_t t = 0; t < sim.in_tail.size(); ++t) {
    if (sim.in_tail[t]) pool.push_back(t);
  }
  const auto m = static_cast<std::size_t>(std::ceil(c.fraction * static_cast<double>(pool.size())));
  const bool counts = sim.kind == ResponseKind::count;
  for (std::size_t k = 0; k < m; ++k) {
    const auto j = k + static_cast<std::size_t>(detail::open_uniform(rng) * static_cast<double>(pool.size() - k));
    std::swap(pool[k], pool[std::min(j, pool.size() - 1)]);
    const std::size_t t = pool[k];
    double& y = sim.response[t];
    y = c.mechanism == ContaminationMechanism::multiply ? y * c.factor : y + c.shift;
    if (counts) {
      y = std::round(y);
      detail::set_counts(sim.series, t, y);
    }
    sim.contaminated[t] = true;
  }
  return sim.contaminated;
}

struct ReplicateRecord {
  std::size_t replicate = 0;
  std::string estimator;  // "ml" or "robust"
  bool ok = false;
  bool converged = false;
  double c = kInfinity;
  std::size_t n_exceedances = 0;
  std::size_t n_contaminated = 0;
  int iterations = 0;
  Eigen::VectorXd coefficients;  // raw scale, sigma block then xi block
  double mean_weight_contaminated = kMissing;
  double mean_weight_clean = kMissing;
  std::string error;
};

struct StudyResult {
  std::vector<std::string> coefficient_names;
  Eigen::VectorXd truth;
  std::vector<ReplicateRecord> records;  // replicate-major, ml before robust
};

inline std::vector<std::string> study_coefficient_names(const ScenarioConfig& cfg) {
  std::vector<std::string> names{"sigma:(Intercept)"};
  for (const auto& n : cfg.sigma_covariates) names.push_back("sigma:" + n);
  names.push_back("xi:(Intercept)");
  for (const auto& n : cfg.xi_covariates) names.push_back("xi:" + n);
  return names;
}

// One replicate: generate, contaminate, extract at the configured
// threshold, fit by likelihood and by the robust estimator.
inline std::array<ReplicateRecord, 2> run_replicate(const ScenarioConfig& cfg, std::size_t replicate) {
  std::array<ReplicateRecord, 2> rec;
  rec[0].estimator = "ml";
  rec[1].estimator = "robust";
  for (auto& r : rec) r.replicate = replicate;
  try {
    auto sim = generate(cfg, replicate);
    std::mt19937_64 rng(derive_seed(cfg.base_seed, replicate, 1));
    contaminate(sim, cfg.contamination, rng);

    const auto spec = cfg.model_spec();
    const auto names = spec.covariates();
    const auto ex = extract_exceedances(sim.response, sim.series.covariates, cfg.kind(), cfg.threshold, names);
    const auto design = build_design(ex.covariates, spec);
    std::vector<bool> dirty(ex.size());
    std::size_t n_dirty = 0;
    for (std::size_t i = 0; i < ex.size(); ++i) {
      dirty[i] = sim.contaminated[ex.source_indices[i]];
      n_dirty += dirty[i] ? 1 : 0;
    }

    auto record = [&](ReplicateRecord& r, const FitResult& f) {
      r.ok = std::isfinite(f.objective);
      r.converged = f.converged;
      r.c = f.c;
      r.iterations = f.iterations;
      r.n_exceedances = ex.size();
      r.n_contaminated = n_dirty;
      const auto& layout = design.layout;
      const Eigen::VectorXd bs = raw_scale_coefficients(layout, layout.sigma(), f.beta_sigma);
      const Eigen::VectorXd bx = raw_scale_coefficients(layout, layout.xi(), f.beta_xi);
      r.coefficients.resize(bs.size() + bx.size());
      r.coefficients << bs, bx;
      double wc = 0.0, wk = 0.0;
      for (std::size_t i = 0; i < ex.size(); ++i) (dirty[i] ? wc : wk) += f.weights(static_cast<Eigen::Index>(i));
      if (n_dirty > 0) r.mean_weight_contaminated = wc / static_cast<double>(n_dirty);
      if (n_dirty < ex.size()) r.mean_weight_clean = wk / static_cast<double>(ex.size() - n_dirty);
      if (!r.ok) r.error = "no finite objective";
    };

    RobustConfig ml_cfg = cfg.robust;
    ml_cfg.c = kInfinity;
    const auto ml = fit(ex, design, ml_cfg);
    record(rec[0], ml);
    try {
      const auto robust = cfg.calibrate_c ? fit_calibrated(ex, design, cfg.robust, &ml)
                                                   : fit(ex, design, cfg.robust);
      record(rec[1], robust);
    } catch (const std::exception& e) {
      rec[1].error = e.what();
    }
  } catch (const std::exception& e) {
    for (auto& r : rec) {
      if (r.error.empty() && !r.ok) r.error = e.what();
    }
  }
  return rec;
}

// Replicates run on cfg.n_threads workers; records are stored by index so
// the result does not depend on scheduling.
inline StudyResult run_study(const ScenarioConfig& cfg) {
  cfg.validate();
  StudyResult out;
  out.coefficient_names = study_coefficient_names(cfg);
  out.truth.resize(cfg.beta_sigma.size() + cfg.beta_xi.size());
  out.truth << cfg.beta_sigma, cfg.beta_xi;
  out.records.resize(2 * cfg.n_replicates);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r = next++; r < cfg.n_replicates; r = next++) {
      auto rec = run_replicate(cfg, r);
      out.records[2 * r] = std::move(rec[0]);
      out.records[2 * r + 1] = std::move(rec[1]);
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(cfg.n_threads, 1, std::max<std::size_t>(1, cfg.n_replicates));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker);
  }
  return out;
}

struct SummaryRow {
  std::string estimator;
  std::string coefficient;
  double truth = 0.0;
  double bias = kMissing;
  double rmse = kMissing;
  double median_abs_error = kMissing;
  std::size_t n_ok = 0;
  double convergence_rate = 0.0;  // converged / replicates
  double mean_weight_contaminated = kMissing;
  double mean_weight_clean = kMissing;
};

// Per estimator and coefficient over the replicates that produced an
// estimate. Weight means average the per-replicate means that exist.
inline std::vector<SummaryRow> summarize(const StudyResult& result) {
  std::vector<SummaryRow> rows;
  for (const char* est : {"ml", "robust"}) {
    std::vector<const ReplicateRecord*> recs;
    std::size_t n_total = 0, n_conv = 0;
    double wc = 0.0, wk = 0.0;
    std::size_t nc = 0, nk = 0;
    for (const auto& r : result.records) {
      if (r.estimator != est) continue;
      ++n_total;
      n_conv += r.converged ? 1 : 0;
      if (!r.ok) continue;
      recs.push_back(&r);
      if (!std::isnan(r.mean_weight_contaminated)) {
        wc += r.mean_weight_contaminated;
        ++nc;
      }
      if (!std::isnan(r.mean_weight_clean)) {
        wk += r.mean_weight_clean;
        ++nk;
      }
    }
    for (std::size_t j = 0; j < result.coefficient_names.size(); ++j) {
      SummaryRow row;
      row.estimator = est;
      row.coefficient = result.coefficient_names[j];
      row.truth = result.truth(static_cast<Eigen::Index>(j));
      row.n_ok = recs.size();
      row.convergence_rate = n_total > 0 ? static_cast<double>(n_conv) / static_cast<double>(n_total) : 0.0;
      if (nc > 0) row.mean_weight_contaminated = wc / static_cast<double>(nc);
      if (nk > 0) row.mean_weight_clean = wk / static_cast<double>(nk);
      if (!recs.empty()) {
        std::vector<double> err;
        double sum = 0.0, sq = 0.0;
        for (const auto* r : recs) {
          const double e = r->coefficients(static_cast<Eigen::Index>(j)) - row.truth;
          sum += e;
          sq += e * e;
          err.push_back(std::abs(e));
        }
        const auto m = static_cast<double>(recs.size());
        row.bias = sum / m;
        row.rmse = std::sqrt(sq / m);
        std::sort(err.begin(), err.end());
        const std::size_t h = err.size() / 2;
        row.median_abs_error = err.size() % 2 == 1 ? err[h] : 0.5 * (err[h - 1] + err[h]);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace potreg
