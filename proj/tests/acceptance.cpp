// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: potreg_acceptance [criterion numbers...]  (default: all six)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "potreg/care.hpp"
#include "potreg/fit.hpp"
#include "potreg/io/artifacts.hpp"
#include "potreg/simulation.hpp"
#include "support.hpp"

using namespace potreg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Distributions

Outcome distributions() {
  Outcome o;
  double worst_norm = 0.0;
  for (double sigma : {0.1, 1.0, 10.0, 100.0}) {
    for (double xi : {-0.45, -0.2, 0.0, 0.1, 0.5, 0.9}) {
      const GpdParams p(sigma, xi);
      constexpr std::uint64_t kTerms = 100000;
      double sum = 0.0;
      for (std::uint64_t k = 0; k < kTerms; ++k) sum += dgpd_pmf(k, p);
      worst_norm = std::max(worst_norm, std::abs(1.0 - (sum + gpd_survival(static_cast<double>(kTerms), p))));
    }
  }
  if (!(worst_norm < 1e-8)) o.pass = false;

  double worst_trip = 0.0;
  for (double sigma : {0.1, 1.0, 10.0}) {
    for (double xi : {-0.45, -0.1, 0.0, 0.1, 0.5, 0.9}) {
      const GpdParams p(sigma, xi);
      for (int k = 1; k < 1000; ++k) {
        const double prob = k / 1000.0;
        worst_trip = std::max(worst_trip, std::abs(gpd_cdf(gpd_quantile(prob, p), p) - prob) / prob);
      }
    }
  }
  if (!(worst_trip < 1e-10)) o.pass = false;

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    const double sigma = 0.1 + 20.0 * u(rng);
    const double xi = -0.45 + 1.35 * u(rng);
    const double prob = 0.999 * u(rng);
    if (dgpd_quantile(prob, GpdParams(sigma, xi)) != oracle::dgpd_quantile_scan(prob, sigma, xi)) ++mismatches;
  }
  if (mismatches != 0) o.pass = false;
  o.detail = "normalization " + fmt("%.2e", worst_norm) + ", round trip " + fmt("%.2e", worst_trip) +
             ", quantile mismatches " + std::to_string(mismatches) + "/10000";
  return o;
}

// ---------------------------------------------------------------------------
// 2. Gradients

ExceedanceSet make_set(std::vector<double> values, Family family, CovariateTable cov) {
  ExceedanceSet s;
  s.kind = family == Family::dgpd ? ResponseKind::count : ResponseKind::odds;
  s.values = std::move(values);
  for (std::size_t i = 0; i < s.values.size(); ++i) s.source_indices.push_back(i);
  cov.n_rows = s.values.size();
  s.covariates = std::move(cov);
  return s;
}

Outcome gradients() {
  Outcome o;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> jitter(0.0, 0.3);
  int points = 0, bad = 0;
  double worst = 0.0;
  std::uint64_t seed = 500;
  for (Family fam : {Family::gpd, Family::dgpd}) {
    for (double c : {2.0, 5.0, kInfinity}) {
      for (bool spline : {false, true}) {
        for (int rep = 0; rep < 9; ++rep) {
          const auto sim = oracle::simulate_regression(seed++, 80, fam == Family::dgpd, {1.0, 0.3, -0.2}, 0.2, 2);
          CovariateTable cov;
          cov.add("x1", sim.x[0]);
          cov.add("x2", sim.x[1]);
          const auto data = make_set(sim.y, fam, cov);
          ModelSpec spec = ModelSpec::intercept_only(fam);
          if (spline) {
            spec.sigma_terms.push_back(Term::spline("x1", 5, 1.5));
          } else {
            spec.sigma_terms.push_back(Term::linear("x1"));
          }
          spec.sigma_terms.push_back(Term::linear("x2"));
          spec.xi_terms.push_back(Term::linear("x2"));
          const auto design = build_design(data.covariates, spec);
          RobustConfig cfg;
          cfg.c = c;

          // random point with every observation inside the support
          Eigen::VectorXd beta;
          double value = -INFINITY;
          while (!std::isfinite(value)) {
            beta = Eigen::VectorXd::Zero(design.n_coef());
            beta(0) = 1.0 + jitter(rng);
            for (Eigen::Index j = 1; j < design.p_sigma(); ++j) beta(j) = jitter(rng);
            beta(design.p_sigma()) = link_xi_inv(0.2) + jitter(rng);
            beta(design.p_sigma() + 1) = 0.3 * jitter(rng);
            value = robust_objective(beta.head(design.p_sigma()), beta.tail(design.p_xi()), data, design, cfg);
          }
          const auto f = [&](const Eigen::VectorXd& b) {
            return robust_objective(b.head(design.p_sigma()), b.tail(design.p_xi()), data, design, cfg);
          };
          const Eigen::VectorXd g =
              robust_gradient(beta.head(design.p_sigma()), beta.tail(design.p_xi()), data, design, cfg);
          const Eigen::VectorXd fd = oracle::fd_gradient(f, beta);
          const double rel = (g - fd).cwiseAbs().maxCoeff() / std::max(1.0, fd.cwiseAbs().maxCoeff());
          worst = std::max(worst, rel);
          ++points;
          if (!(rel < 1e-5)) ++bad;
        }
      }
    }
  }
  o.pass = bad == 0 && points >= 100;
  o.detail = std::to_string(points) + " points, worst relative error " + fmt("%.2e", worst);
  return o;
}

// ---------------------------------------------------------------------------
// 3. ML recovery

struct Recovery {
  Eigen::VectorXd mean;
  Eigen::VectorXd se;  // Monte-Carlo standard error of the mean
  int failed = 0;
};

Recovery ml_recovery(std::size_t n, int reps, const Eigen::VectorXd& truth) {
  std::vector<Eigen::VectorXd> est;
  Recovery r;
  for (int rep = 0; rep < reps; ++rep) {
    const auto sim = oracle::simulate_regression(derive_seed(3003, static_cast<std::uint64_t>(rep), n), n, true,
                                                 {truth(0), truth(1), truth(2)}, link_xi(truth(3)), 2);
    CovariateTable cov;
    cov.add("x1", sim.x[0]);
    cov.add("x2", sim.x[1]);
    const auto data = make_set(sim.y, Family::dgpd, cov);
    ModelSpec spec = ModelSpec::intercept_only(Family::dgpd);
    spec.sigma_terms.push_back(Term::linear("x1"));
    spec.sigma_terms.push_back(Term::linear("x2"));
    const auto design = build_design(data.covariates, spec);
    const auto f = fit(data, design, RobustConfig{});
    if (!f.converged) {
      ++r.failed;
      continue;
    }
    Eigen::VectorXd b(4);
    b.head(3) = raw_scale_coefficients(design.layout, design.layout.sigma(), f.beta_sigma);
    b(3) = f.beta_xi(0);
    est.push_back(b);
  }
  const auto m = static_cast<double>(est.size());
  r.mean = Eigen::VectorXd::Zero(4);
  for (const auto& b : est) r.mean += b;
  r.mean /= m;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(4);
  for (const auto& b : est) var += (b - r.mean).cwiseAbs2();
  r.se = (var / (m - 1.0) / m).cwiseSqrt();
  return r;
}

Outcome recovery() {
  Outcome o;
  Eigen::VectorXd truth(4);
  truth << std::log(3.0), 0.3, -0.2, link_xi_inv(0.2);
  const auto r2000 = ml_recovery(2000, 100, truth);
  const Eigen::VectorXd z = (r2000.mean - truth).cwiseQuotient(r2000.se);
  if (!(z.cwiseAbs().maxCoeff() < 3.0) || r2000.failed > 0) o.pass = false;

  const auto r500 = ml_recovery(500, 100, truth);
  const auto r8000 = ml_recovery(8000, 100, truth);
  // |bias| may not grow with n beyond two combined Monte-Carlo errors
  bool monotone = true;
  for (Eigen::Index j = 0; j < 4; ++j) {
    const double b[3] = {std::abs(r500.mean(j) - truth(j)), std::abs(r2000.mean(j) - truth(j)),
                         std::abs(r8000.mean(j) - truth(j))};
    const double s[3] = {r500.se(j), r2000.se(j), r8000.se(j)};
    for (int k = 0; k < 2; ++k) {
      if (b[k + 1] > b[k] + 2.0 * std::hypot(s[k], s[k + 1])) monotone = false;
    }
  }
  if (!monotone) o.pass = false;
  std::ostringstream d;
  d << "max |z| " << fmt("%.2f", z.cwiseAbs().maxCoeff()) << " at n=2000, failures "
    << r500.failed + r2000.failed + r8000.failed << ", bias nonincreasing " << (monotone ? "yes" : "no") << " (";
  for (Eigen::Index j = 0; j < 4; ++j) {
    d << (j ? "; " : "") << fmt("%.4f", std::abs(r500.mean(j) - truth(j))) << ","
      << fmt("%.4f", std::abs(r2000.mean(j) - truth(j))) << "," << fmt("%.4f", std::abs(r8000.mean(j) - truth(j)));
  }
  d << ")";
  o.detail = d.str();
  return o;
}

// ---------------------------------------------------------------------------
// 4. Robustness

ScenarioConfig bundled_study() {
  auto j = io::read_json_file(fs::path(POTREG_SOURCE_DIR) / "configs/study.json", "config");
  j.erase("output_dir");
  auto c = io::scenario_config_from(j);
  c.n_replicates = 200;
  return c;
}

double rmse_of(const StudyResult& r, const std::string& estimator, Eigen::Index j) {
  double sq = 0.0;
  int n = 0;
  for (const auto& rec : r.records) {
    if (rec.estimator != estimator || !rec.ok) continue;
    sq += std::pow(rec.coefficients(j) - r.truth(j), 2);
    ++n;
  }
  return n ? std::sqrt(sq / n) : INFINITY;
}

Outcome robustness() {
  Outcome o;
  auto cfg = bundled_study();
  cfg.contamination = {0.05, ContaminationMechanism::multiply, 10.0, 0.0};
  const auto dirty = run_study(cfg);
  cfg.contamination.fraction = 0.0;
  const auto clean = run_study(cfg);

  const double ml_dirty = rmse_of(dirty, "ml", 0), rob_dirty = rmse_of(dirty, "robust", 0);
  const double ml_clean = rmse_of(clean, "ml", 0), rob_clean = rmse_of(clean, "robust", 0);
  int weight_ok = 0, robust_reps = 0;
  for (const auto& rec : dirty.records) {
    if (rec.estimator != "robust") continue;
    ++robust_reps;
    if (rec.ok && rec.mean_weight_contaminated < rec.mean_weight_clean) ++weight_ok;
  }
  const double share = static_cast<double>(weight_ok) / robust_reps;
  o.pass = rob_dirty < ml_dirty && share >= 0.95 && rob_clean <= 1.25 * ml_clean;
  o.detail = "sigma intercept RMSE contaminated robust " + fmt("%.4f", rob_dirty) + " vs ML " + fmt("%.4f", ml_dirty) +
             "; weight ordering " + std::to_string(weight_ok) + "/" + std::to_string(robust_reps) +
             "; clean ratio " + fmt("%.3f", rob_clean / ml_clean);
  return o;
}

// ---------------------------------------------------------------------------
// 5. CaRe

Outcome care_checks() {
  Outcome o;
  const auto e = care_from_parts(0.95, 100.0, 0.1, GpdParams(1.0, 0.0), ResponseKind::odds);
  const double worked = std::abs(e.value - (100.0 + std::log(2.0)));
  if (!(worked < 1e-9)) o.pass = false;

  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_inverse = 0.0;
  int bracket_fail = 0;
  for (int i = 0; i < 1000; ++i) {
    const double zeta = 0.02 + 0.5 * u(rng);
    const double alpha = 1.0 - zeta + zeta * (0.001 + 0.998 * u(rng));
    const GpdParams tail(0.1 + 20.0 * u(rng), -0.45 + 1.4 * u(rng));
    const double thr = std::floor(100.0 * u(rng));
    const auto ce = care_from_parts(alpha, thr, zeta, tail, ResponseKind::odds);
    worst_inverse = std::max(
        worst_inverse,
        std::abs(congestion_from_parts(ce.value, thr, zeta, tail, ResponseKind::odds).probability - (1.0 - alpha)));
    const auto de = care_from_parts(alpha, thr, zeta, tail, ResponseKind::count);
    const double at = congestion_from_parts(de.value, thr, zeta, tail, ResponseKind::count).probability;
    const double below = congestion_from_parts(de.value - 1.0, thr, zeta, tail, ResponseKind::count).probability;
    if (!(at <= 1.0 - alpha + 1e-15 && below > 1.0 - alpha)) ++bracket_fail;
  }
  if (!(worst_inverse < 1e-9) || bracket_fail > 0) o.pass = false;

  std::vector<double> grid;
  for (int k = 1; k <= 99; ++k) grid.push_back(k / 100.0);
  int curves = 0, non_monotone = 0;
  CovariateTable none;
  none.n_rows = 1;
  for (auto kind : {ResponseKind::odds, ResponseKind::count}) {
    const auto design = build_design(none, ModelSpec::intercept_only(family_for(kind)));
    for (double xi : {-0.4, -0.1, 0.0, 0.2, 0.6}) {
      for (double zeta : {0.05, 0.3}) {
        FitResult f;
        f.layout = design.layout;
        f.kind = kind;
        f.threshold = 30.0;
        f.beta_sigma = Eigen::VectorXd::Constant(1, std::log(4.0));
        f.beta_xi = Eigen::VectorXd::Constant(1, link_xi_inv(xi));
        ExceedanceRateFit rate;
        rate.model = RateModel::constant;
        rate.n_obs = 1000;
        rate.n_exceed = static_cast<std::size_t>(std::llround(zeta * 1000));
        rate.converged = true;
        const auto curve = care_curve(f, rate, {}, grid);
        ++curves;
        for (std::size_t i = 1; i < curve.size(); ++i) {
          if (curve[i].value < curve[i - 1].value) {
            ++non_monotone;
            break;
          }
        }
      }
    }
  }
  if (non_monotone > 0) o.pass = false;
  o.detail = "worked example error " + fmt("%.1e", worked) + ", inverse " + fmt("%.1e", worst_inverse) +
             ", bracketing failures " + std::to_string(bracket_fail) + "/1000, monotone curves " +
             std::to_string(curves - non_monotone) + "/" + std::to_string(curves);
  return o;
}

// ---------------------------------------------------------------------------
// 6. CLI determinism and exit codes

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + POTREG_CLI + "\" " + args + " --quiet > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Every regular file under root, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

Outcome pipeline() {
  Outcome o;
  const fs::path src = POTREG_SOURCE_DIR;
  const fs::path work = fs::temp_directory_path() / "potreg_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  fs::copy(src / "configs", work / "configs");
  fs::copy(src / "data", work / "data");
  const fs::path cfg = work / "configs";
  const fs::path log = work / "cli.log";

  std::vector<std::string> notes;
  std::map<std::string, std::string> first;
  for (int round = 0; round < 2; ++round) {
    fs::remove_all(work / "out");
    const std::vector<std::string> steps{
        "fit --config \"" + (cfg / "fit_counts.json").string() + "\"",
        "fit --config \"" + (cfg / "fit_odds.json").string() + "\"",
        "care --config \"" + (cfg / "care.json").string() + "\"",
        "simulate --config \"" + (cfg / "study_quick.json").string() + "\"",
    };
    for (const auto& s : steps) {
      const int code = run_cli(s, log);
      if (code != 0) {
        o.pass = false;
        notes.push_back("'" + s.substr(0, s.find(' ')) + "' exited " + std::to_string(code) + ": " + slurp(log));
      }
    }
    const auto snap = snapshot(work / "out");
    if (round == 0) {
      first = snap;
    } else if (snap != first || snap.empty()) {
      o.pass = false;
      notes.push_back("artifacts differ between runs");
    }
  }

  // error contract on copies of the counts config
  auto base = io::read_json_file(cfg / "fit_counts.json", "config");
  const auto expect = [&](const std::string& name, io::Json j, int code, const std::string& needle,
                          const std::string& artifact) {
    j["output_dir"] = "../out/" + name;
    io::write_json_file(cfg / (name + ".json"), j, "config");
    const int got = run_cli("fit --config \"" + (cfg / (name + ".json")).string() + "\"", log);
    const std::string text = slurp(log);
    const bool ok = got == code && text.find(needle) != std::string::npos &&
                    (artifact.empty() || fs::exists(work / "out" / name / artifact));
    if (!ok) {
      o.pass = false;
      notes.push_back(name + ": exit " + std::to_string(got) + ", output: " + text);
    }
    return ok;
  };
  auto unknown = base;
  unknown["model"]["sigma"] = io::Json::array({"intercept", "wind_speed"});
  auto above = base;
  above["threshold"] = io::Json{{"value", 1e9}};
  auto stalled = base;
  stalled["robust"] = io::Json{{"c", "inf"}, {"max_iter", 1}};
  int contract = 0;
  contract += expect("unknown_covariate", unknown, 1, "error [design]", "");
  contract += expect("threshold_above_data", above, 1, "error [extract]: empty exceedance set", "");
  contract += expect("non_convergence", stalled, 2, "", "fit.json");

  o.detail = std::to_string(first.size()) + " artifacts byte-identical across two runs" +
             (o.pass ? "" : " (see notes)") + ", exit-code scenarios " + std::to_string(contract) + "/3";
  for (const auto& n : notes) o.detail += "\n    " + n;
  if (o.pass) fs::remove_all(work);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"distribution correctness", distributions},
      {"gradient suite", gradients},
      {"ML recovery and consistency", recovery},
      {"robustness under contamination", robustness},
      {"CaRe correctness", care_checks},
      {"pipeline determinism", pipeline},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << " [" << fmt("%.1f", secs) << " s]" << std::endl;
  }
  return all ? 0 : 1;
}
