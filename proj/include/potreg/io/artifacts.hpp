#pragma once

// JSON configs and artifacts. Every artifact carries schema_version "1";
// readers reject any other version. Non-finite numbers are written as the
// strings "inf", "-inf" and "nan".

#include <Eigen/Dense>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "potreg/care.hpp"
#include "potreg/fit.hpp"
#include "potreg/simulation.hpp"

namespace potreg::io {

using Json = nlohmann::ordered_json;

inline constexpr const char* kSchemaVersion = "1";

// ---------------------------------------------------------------------------
// Scalars

inline Json number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double to_number(const Json& j, const std::string& what, const std::string& stage) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInfinity;
    if (s == "-inf") return -kInfinity;
    if (s == "nan") return kMissing;
  }
  throw StageError(stage, what + ": expected a number");
}

inline Json vector_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

inline Eigen::VectorXd vector_from(const Json& j, const std::string& what, const std::string& stage) {
  if (!j.is_array()) throw StageError(stage, what + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = to_number(j[i], what, stage);
  return v;
}

// Typed field access with stage-named errors.
class Reader {
 public:
  Reader(const Json& j, std::string where, std::string stage)
      : j_(j), where_(std::move(where)), stage_(std::move(stage)) {
    if (!j_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& msg) const { throw StageError(stage_, where_ + ": " + msg); }

  [[nodiscard]] bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  [[nodiscard]] const Json& at(const std::string& key) const {
    if (!j_.contains(key)) fail("missing field '" + key + "'");
    return j_.at(key);
  }

  [[nodiscard]] Reader object(const std::string& key) const { return {at(key), where_ + "." + key, stage_}; }

  [[nodiscard]] double num(const std::string& key) const { return to_number(at(key), where_ + "." + key, stage_); }
  [[nodiscard]] double num(const std::string& key, double fallback) const { return has(key) ? num(key) : fallback; }

  [[nodiscard]] std::string str(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_string()) fail("field '" + key + "' must be a string");
    return v.get<std::string>();
  }
  [[nodiscard]] std::string str(const std::string& key, const std::string& fallback) const {
    return has(key) ? str(key) : fallback;
  }

  [[nodiscard]] bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    if (!at(key).is_boolean()) fail("field '" + key + "' must be true or false");
    return at(key).get<bool>();
  }

  [[nodiscard]] long long integer(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    const auto& v = at(key);
    if (!v.is_number_integer()) fail("field '" + key + "' must be an integer");
    return v.get<long long>();
  }

  [[nodiscard]] std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& v = at(key);
    if (!v.is_number_unsigned()) fail("field '" + key + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  [[nodiscard]] std::vector<double> numbers(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_array()) fail("field '" + key + "' must be an array");
    std::vector<double> out;
    for (const auto& e : v) out.push_back(to_number(e, where_ + "." + key, stage_));
    return out;
  }

  [[nodiscard]] std::vector<std::string> strings(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_array()) fail("field '" + key + "' must be an array");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) fail("field '" + key + "' must hold strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  void only(std::initializer_list<const char*> keys) const {
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items()) {
      if (!allowed.contains(k)) fail("unknown field '" + k + "'");
    }
  }

  [[nodiscard]] const Json& json() const { return j_; }

 private:
  const Json& j_;
  std::string where_;
  std::string stage_;
};

inline Json read_json_file(const std::filesystem::path& path, const std::string& stage) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError(stage, "cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw StageError(stage, "invalid JSON in '" + path.string() + "': " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const Json& j, const std::string& stage) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError(stage, "cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

inline void check_schema(const Json& j, const std::string& artifact, const std::string& stage) {
  if (!j.is_object() || !j.contains("schema_version")) throw StageError(stage, artifact + ": missing schema_version");
  const auto& v = j.at("schema_version");
  if (!v.is_string() || v.get<std::string>() != kSchemaVersion) {
    throw StageError(stage, artifact + ": unsupported schema_version " + v.dump());
  }
  if (!j.contains("artifact") || j.at("artifact") != artifact) {
    throw StageError(stage, "expected a '" + artifact + "' artifact");
  }
}

// ---------------------------------------------------------------------------
// Model specification
//
// Terms: "intercept", a covariate name (linear), {"linear": name} or
// {"spline": name, "knots": k, "lambda": l}.

inline Json term_json(const Term& t) {
  switch (t.kind) {
    case TermKind::intercept: return "intercept";
    case TermKind::linear: return Json{{"linear", t.covariate}};
    case TermKind::spline: return Json{{"spline", t.covariate}, {"knots", t.n_knots}, {"lambda", number(t.lambda)}};
  }
  return nullptr;
}

inline Term term_from(const Json& j, const std::string& where, const std::string& stage) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    return s == "intercept" ? Term::intercept() : Term::linear(s);
  }
  const Reader r(j, where, stage);
  if (r.has("linear")) {
    r.only({"linear"});
    return Term::linear(r.str("linear"));
  }
  if (r.has("spline")) {
    r.only({"spline", "knots", "lambda"});
    return Term::spline(r.str("spline"), static_cast<int>(r.integer("knots", 8)), r.num("lambda", 1.0));
  }
  r.fail("term must be \"intercept\", a covariate name, {\"linear\": ...} or {\"spline\": ...}");
}

inline Json spec_json(const ModelSpec& s) {
  Json sigma = Json::array(), xi = Json::array();
  for (const auto& t : s.sigma_terms) sigma.push_back(term_json(t));
  for (const auto& t : s.xi_terms) xi.push_back(term_json(t));
  return Json{{"family", to_string(s.family)},
              {"sigma", sigma},
              {"xi", xi},
              {"xi_bounds", Json::array({number(s.xi_bounds.lo), number(s.xi_bounds.hi)})}};
}

// An omitted term list is intercept-only; an omitted intercept is added.
inline ModelSpec spec_from(const Reader& r, Family family) {
  r.only({"family", "sigma", "xi", "xi_bounds"});
  ModelSpec s;
  s.family = family;
  if (r.has("family") && family_from_string(r.str("family")) != family) {
    r.fail("family '" + r.str("family") + "' does not match the response kind");
  }
  auto terms = [&](const char* key) {
    std::vector<Term> out;
    if (!r.has(key)) return std::vector<Term>{Term::intercept()};
    const auto& a = r.at(key);
    if (!a.is_array()) r.fail(std::string("field '") + key + "' must be an array");
    for (std::size_t i = 0; i < a.size(); ++i) {
      out.push_back(term_from(a[i], std::string(key) + "[" + std::to_string(i) + "]", "config"));
    }
    if (std::none_of(out.begin(), out.end(), [](const Term& t) { return t.kind == TermKind::intercept; })) {
      out.insert(out.begin(), Term::intercept());
    }
    return out;
  };
  s.sigma_terms = terms("sigma");
  s.xi_terms = terms("xi");
  if (r.has("xi_bounds")) {
    const auto b = r.numbers("xi_bounds");
    if (b.size() != 2) r.fail("xi_bounds must be [lo, hi]");
    s.xi_bounds = {b[0], b[1]};
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Robust settings. "c" is "auto" (calibrated), "inf" or a positive number.

struct RobustSettings {
  RobustConfig config;
  bool calibrate = true;
};

inline RobustSettings robust_from(const Reader& r) {
  r.only({"c", "max_iter", "grad_tol", "n_restarts", "correction_tail_eps"});
  RobustSettings out;
  if (r.has("c")) {
    const auto& c = r.at("c");
    if (c.is_string() && c.get<std::string>() == "auto") {
      out.calibrate = true;
    } else {
      out.calibrate = false;
      out.config.c = to_number(c, "robust.c", "config");
      if (!(out.config.c > 0.0) || std::isnan(out.config.c)) r.fail("c must be \"auto\", \"inf\" or positive");
    }
  }
  out.config.max_iter = static_cast<int>(r.integer("max_iter", out.config.max_iter));
  out.config.grad_tol = r.num("grad_tol", out.config.grad_tol);
  out.config.n_restarts = static_cast<int>(r.integer("n_restarts", out.config.n_restarts));
  out.config.correction_tail_eps = r.num("correction_tail_eps", out.config.correction_tail_eps);
  if (out.config.max_iter < 1 || !(out.config.grad_tol > 0.0) || out.config.n_restarts < 0 ||
      !(out.config.correction_tail_eps > 0.0)) {
    r.fail("max_iter >= 1, grad_tol > 0, n_restarts >= 0 and correction_tail_eps > 0 required");
  }
  return out;
}

inline Json robust_json(const RobustConfig& c, bool calibrated) {
  return Json{{"c", number(c.c)},
              {"calibrated", calibrated},
              {"max_iter", c.max_iter},
              {"grad_tol", number(c.grad_tol)},
              {"n_restarts", c.n_restarts},
              {"correction_tail_eps", number(c.correction_tail_eps)}};
}

// ---------------------------------------------------------------------------
// Run configuration

inline const char* to_string(CountSource s) {
  switch (s) {
    case CountSource::total: return "total";
    case CountSource::positives: return "positives";
    case CountSource::negatives: return "negatives";
    case CountSource::visits: return "visits";
  }
  return "total";
}

inline CountSource count_source_from_string(const std::string& s) {
  if (s == "total") return CountSource::total;
  if (s == "positives") return CountSource::positives;
  if (s == "negatives") return CountSource::negatives;
  if (s == "visits") return CountSource::visits;
  throw StageError("config", "unknown count_source '" + s + "'");
}

inline ResponseKind response_kind_from_string(const std::string& s) {
  if (s == "count") return ResponseKind::count;
  if (s == "odds") return ResponseKind::odds;
  throw StageError("config", "unknown response kind '" + s + "' (expected count or odds)");
}

inline Json response_json(const ResponseOptions& o) {
  return Json{{"kind", to_string(o.kind)},
              {"count_source", to_string(o.count_source)},
              {"odds_correction", number(o.odds_correction)}};
}

inline ResponseOptions response_from(const Reader& r) {
  r.only({"kind", "count_source", "odds_correction"});
  ResponseOptions o;
  o.kind = response_kind_from_string(r.str("kind", "count"));
  o.count_source = count_source_from_string(r.str("count_source", "total"));
  o.odds_correction = r.num("odds_correction", 0.5);
  if (!(o.odds_correction >= 0.0)) r.fail("odds_correction must be >= 0");
  return o;
}

struct ThresholdRule {
  std::optional<double> quantile;  // exactly one of quantile and value is set
  std::optional<double> value;
};

struct RunConfig {
  std::filesystem::path input;
  ResponseOptions response;
  ThresholdRule threshold;
  ModelSpec spec;
  RobustSettings robust;
  RateModel rate_model = RateModel::logistic;
  bool covariance = true;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 1;
  std::vector<double> threshold_grid;  // quantile levels for the stability table
};

inline std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int k = 0; k <= 15; ++k) g.push_back(0.80 + 0.01 * k);
  return g;
}

// Relative paths resolve against the config file's directory.
inline RunConfig run_config_from(const Json& j, const std::filesystem::path& base_dir) {
  const Reader r(j, "config", "config");
  r.only({"input", "response", "threshold", "model", "robust", "rate_model", "covariance", "output_dir", "seed",
          "threshold_grid"});
  RunConfig c;
  c.input = base_dir / r.str("input");
  if (r.has("response")) c.response = response_from(r.object("response"));
  if (r.has("threshold")) {
    const auto t = r.object("threshold");
    t.only({"quantile", "value"});
    if (t.has("quantile") == t.has("value")) t.fail("give exactly one of 'quantile' and 'value'");
    if (t.has("quantile")) {
      c.threshold.quantile = t.num("quantile");
      if (!(*c.threshold.quantile > 0.0 && *c.threshold.quantile < 1.0)) t.fail("quantile must lie in (0, 1)");
    } else {
      c.threshold.value = t.num("value");
      if (!std::isfinite(*c.threshold.value)) t.fail("value must be finite");
    }
  } else {
    c.threshold.quantile = 0.9;
  }
  const Family family = family_for(c.response.kind);
  c.spec = r.has("model") ? spec_from(r.object("model"), family) : ModelSpec::intercept_only(family);
  if (r.has("robust")) c.robust = robust_from(r.object("robust"));
  c.rate_model = rate_model_from_string(r.str("rate_model", "logistic"));
  c.covariance = r.flag("covariance", true);
  c.output_dir = base_dir / r.str("output_dir", "out");
  c.seed = r.unsigned_integer("seed", 1);
  c.threshold_grid = r.has("threshold_grid") ? r.numbers("threshold_grid") : default_threshold_grid();
  for (std::size_t i = 0; i < c.threshold_grid.size(); ++i) {
    const double q = c.threshold_grid[i];
    if (!(q > 0.0 && q < 1.0) || (i > 0 && !(q > c.threshold_grid[i - 1]))) {
      r.fail("threshold_grid must be strictly increasing levels in (0, 1)");
    }
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from(read_json_file(path, "config"), path.parent_path());
}

// ---------------------------------------------------------------------------
// Fit artifact

struct FitArtifact {
  FitResult fit;
  ResponseOptions response;
  ExceedanceRateFit rate;
};

inline Json standardization_json(const std::vector<Standardization>& v) {
  Json a = Json::array();
  for (const auto& s : v) {
    a.push_back(Json{{"covariate", s.covariate},
                     {"center", number(s.center)},
                     {"scale", number(s.scale)},
                     {"min", number(s.min)},
                     {"max", number(s.max)}});
  }
  return a;
}

inline std::vector<Standardization> standardization_from(const Json& j, const std::string& stage) {
  if (!j.is_array()) throw StageError(stage, "standardization must be an array");
  std::vector<Standardization> out;
  for (const auto& e : j) {
    const Reader r(e, "standardization", stage);
    out.push_back({r.str("covariate"), r.num("center"), r.num("scale"), r.num("min"), r.num("max")});
  }
  return out;
}

inline Json parameter_json(const ParameterLayout& p, const Eigen::VectorXd& beta) {
  Json knots = Json::object();
  for (const auto& b : p.blocks) {
    if (b.term.kind == TermKind::spline) knots[b.term.covariate] = b.knots;
  }
  return Json{{"names", p.column_names}, {"values", vector_json(beta)}, {"knots", knots}};
}

inline Json rate_json(const ExceedanceRateFit& r) {
  return Json{{"model", to_string(r.model)},
              {"threshold", number(r.threshold)},
              {"covariates", r.covariates},
              {"standardization", standardization_json(r.standardization)},
              {"coefficients", vector_json(r.beta)},
              {"converged", r.converged},
              {"separation", r.separation},
              {"iterations", r.iterations},
              {"n_obs", r.n_obs},
              {"n_exceed", r.n_exceed}};
}

inline ExceedanceRateFit rate_from(const Reader& r) {
  ExceedanceRateFit f;
  f.model = rate_model_from_string(r.str("model"));
  f.threshold = r.num("threshold");
  f.covariates = r.strings("covariates");
  f.standardization = standardization_from(r.at("standardization"), "care");
  f.beta = vector_from(r.at("coefficients"), "rate_model.coefficients", "care");
  f.converged = r.flag("converged", false);
  f.separation = r.flag("separation", false);
  f.iterations = static_cast<int>(r.integer("iterations", 0));
  f.n_obs = static_cast<std::size_t>(r.unsigned_integer("n_obs", 0));
  f.n_exceed = static_cast<std::size_t>(r.unsigned_integer("n_exceed", 0));
  if (f.standardization.size() != f.covariates.size() ||
      f.beta.size() != static_cast<Eigen::Index>(f.covariates.size()) + 1 || f.n_obs == 0) {
    r.fail("inconsistent exceedance-rate model");
  }
  return f;
}

struct WeightSummary {
  std::size_t n = 0;
  double min = kMissing, mean = kMissing, median = kMissing;
  std::size_t below_half = 0;
};

inline WeightSummary summarize_weights(const Eigen::VectorXd& w) {
  WeightSummary s;
  s.n = static_cast<std::size_t>(w.size());
  if (w.size() == 0) return s;
  std::vector<double> v(w.data(), w.data() + w.size());
  std::sort(v.begin(), v.end());
  s.min = v.front();
  s.mean = w.mean();
  const std::size_t h = v.size() / 2;
  s.median = v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  s.below_half = static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double x) { return x < 0.5; }));
  return s;
}

inline Json fit_artifact_json(const FitResult& f, const ResponseOptions& response, const ThresholdRule& rule,
                              const ExtractionReport& extraction, const ExceedanceRateFit& rate,
                              const RobustConfig& cfg, bool calibrated, std::uint64_t seed) {
  Json threshold{{"value", number(f.threshold)}};
  threshold["rule"] = rule.quantile ? "quantile" : "value";
  if (rule.quantile) threshold["quantile"] = number(*rule.quantile);

  Json covariance = nullptr;
  if (f.covariance) {
    Json m = Json::array();
    for (Eigen::Index i = 0; i < f.covariance->rows(); ++i) m.push_back(vector_json(f.covariance->row(i).transpose()));
    std::vector<std::string> names;
    for (const auto& n : f.layout.sigma().column_names) names.push_back("sigma:" + n);
    for (const auto& n : f.layout.xi().column_names) names.push_back("xi:" + n);
    covariance = Json{{"names", names}, {"matrix", m}, {"singular", f.covariance_singular}};
  }
  const auto w = summarize_weights(f.weights);
  RobustConfig used = cfg;
  used.c = f.c;

  return Json{
      {"schema_version", kSchemaVersion},
      {"artifact", "fit"},
      {"seed", seed},
      {"response", response_json(response)},
      {"threshold", threshold},
      {"model", spec_json(f.layout.spec())},
      {"standardization", standardization_json(f.layout.standardization())},
      {"coefficients",
       Json{{"sigma", parameter_json(f.layout.sigma(), f.beta_sigma)}, {"xi", parameter_json(f.layout.xi(), f.beta_xi)}}},
      {"covariance", covariance},
      {"robust", robust_json(used, calibrated)},
      {"convergence",
       Json{{"converged", f.converged},
            {"iterations", f.iterations},
            {"gradient_norm", number(f.gradient_norm)},
            {"gradient_tolerance", number(f.gradient_tolerance)},
            {"objective", number(f.objective)},
            {"restart", f.restart}}},
      {"weights",
       Json{{"n", w.n}, {"min", number(w.min)}, {"mean", number(w.mean)}, {"median", number(w.median)},
            {"below_half", w.below_half}}},
      {"exceedances",
       Json{{"n", f.n_obs},
            {"rows_scanned", extraction.rows_scanned},
            {"missing_response", extraction.missing_response},
            {"missing_covariates", extraction.missing_covariates}}},
      {"rate_model", rate_json(rate)},
      {"warnings", f.warnings}};
}

// Rebuilds the fitted model; weights are not stored and stay empty.
inline FitArtifact fit_artifact_from(const Json& j, const std::string& stage) {
  check_schema(j, "fit", stage);
  const Reader r(j, "fit", stage);
  FitArtifact a;
  a.response = response_from(r.object("response"));
  const Family family = family_for(a.response.kind);
  ModelSpec spec;
  try {
    spec = spec_from(r.object("model"), family);
  } catch (const StageError& e) {
    throw StageError(stage, e.what());
  }
  a.fit.layout = DesignLayout::from_parts(spec, standardization_from(r.at("standardization"), stage));
  a.fit.kind = a.response.kind;
  a.fit.threshold = r.object("threshold").num("value");
  const auto coef = r.object("coefficients");
  a.fit.beta_sigma = vector_from(coef.object("sigma").at("values"), "coefficients.sigma", stage);
  a.fit.beta_xi = vector_from(coef.object("xi").at("values"), "coefficients.xi", stage);
  if (a.fit.beta_sigma.size() != static_cast<Eigen::Index>(a.fit.layout.sigma().n_cols()) ||
      a.fit.beta_xi.size() != static_cast<Eigen::Index>(a.fit.layout.xi().n_cols())) {
    r.fail("coefficient count does not match the model");
  }
  const auto conv = r.object("convergence");
  a.fit.converged = conv.flag("converged", false);
  a.fit.iterations = static_cast<int>(conv.integer("iterations", 0));
  a.fit.gradient_norm = conv.num("gradient_norm");
  a.fit.gradient_tolerance = conv.num("gradient_tolerance");
  a.fit.objective = conv.num("objective");
  a.fit.restart = static_cast<int>(conv.integer("restart", 0));
  a.fit.c = r.object("robust").num("c");
  a.fit.n_obs = static_cast<std::size_t>(r.object("exceedances").unsigned_integer("n", 0));
  a.rate = rate_from(r.object("rate_model"));
  return a;
}

inline FitArtifact load_fit_artifact(const std::filesystem::path& path, const std::string& stage) {
  return fit_artifact_from(read_json_file(path, stage), stage);
}

// ---------------------------------------------------------------------------
// Simulation study configuration

inline ScenarioConfig scenario_config_from(const Json& j) {
  const Reader r(j, "study", "config");
  r.only({"n_days", "family", "generators", "sigma", "xi", "xi_bounds", "threshold", "exceed_prob", "bulk_min",
          "contamination", "n_replicates", "seed", "robust", "n_threads"});
  ScenarioConfig c;
  const auto n_days = r.integer("n_days", 1000);
  if (n_days <= 0) r.fail("n_days must be positive");
  c.n_days = static_cast<std::size_t>(n_days);
  c.family = family_from_string(r.str("family", "dgpd"));
  if (r.has("generators")) {
    const auto& a = r.at("generators");
    if (!a.is_array()) r.fail("generators must be an array");
    for (const auto& e : a) {
      const Reader g(e, "generators[]", "config");
      g.only({"name", "mean", "amplitude", "period", "phase", "noise_sd"});
      c.generators.push_back({g.str("name"), g.num("mean", 0.0), g.num("amplitude", 0.0), g.num("period", 365.25),
                              g.num("phase", 0.0), g.num("noise_sd", 0.0)});
    }
  }
  auto block = [&](const char* key, std::vector<std::string>& names, Eigen::VectorXd& beta) {
    if (!r.has(key)) return;
    const auto b = r.object(key);
    b.only({"covariates", "beta"});
    if (b.has("covariates")) names = b.strings("covariates");
    beta = vector_from(b.at("beta"), std::string("study.") + key + ".beta", "config");
  };
  block("sigma", c.sigma_covariates, c.beta_sigma);
  block("xi", c.xi_covariates, c.beta_xi);
  if (r.has("xi_bounds")) {
    const auto b = r.numbers("xi_bounds");
    if (b.size() != 2) r.fail("xi_bounds must be [lo, hi]");
    c.xi_bounds = {b[0], b[1]};
  }
  c.threshold = r.num("threshold", c.threshold);
  c.exceed_prob = r.num("exceed_prob", c.exceed_prob);
  c.bulk_min = r.num("bulk_min", c.bulk_min);
  if (r.has("contamination")) {
    const auto k = r.object("contamination");
    k.only({"fraction", "mechanism", "factor", "shift"});
    c.contamination.fraction = k.num("fraction", 0.0);
    const auto mech = k.str("mechanism", "multiply");
    if (mech == "multiply") {
      c.contamination.mechanism = ContaminationMechanism::multiply;
    } else if (mech == "shift") {
      c.contamination.mechanism = ContaminationMechanism::shift;
    } else {
      k.fail("mechanism must be multiply or shift");
    }
    c.contamination.factor = k.num("factor", 10.0);
    c.contamination.shift = k.num("shift", 0.0);
  }
  const auto reps = r.integer("n_replicates", 100);
  if (reps <= 0) r.fail("n_replicates must be positive");
  c.n_replicates = static_cast<std::size_t>(reps);
  c.base_seed = r.unsigned_integer("seed", 1);
  if (r.has("robust")) {
    const auto s = robust_from(r.object("robust"));
    c.robust = s.config;
    c.calibrate_c = s.calibrate;
  }
  const auto threads = r.integer("n_threads", 1);
  if (threads <= 0) r.fail("n_threads must be positive");
  c.n_threads = static_cast<std::size_t>(threads);
  if (c.xi_bounds.lo < -0.5 || !(c.xi_bounds.lo < c.xi_bounds.hi)) {
    r.fail("xi_bounds must satisfy -0.5 <= lo < hi");
  }
  c.validate();
  return c;
}

inline Json scenario_config_json(const ScenarioConfig& c) {
  Json gens = Json::array();
  for (const auto& g : c.generators) {
    gens.push_back(Json{{"name", g.name},
                        {"mean", number(g.mean)},
                        {"amplitude", number(g.amplitude)},
                        {"period", number(g.period)},
                        {"phase", number(g.phase)},
                        {"noise_sd", number(g.noise_sd)}});
  }
  Json robust = robust_json(c.robust, c.calibrate_c);
  robust.erase("calibrated");
  if (c.calibrate_c) robust["c"] = "auto";
  return Json{{"n_days", c.n_days},
              {"family", to_string(c.family)},
              {"generators", gens},
              {"sigma", Json{{"covariates", c.sigma_covariates}, {"beta", vector_json(c.beta_sigma)}}},
              {"xi", Json{{"covariates", c.xi_covariates}, {"beta", vector_json(c.beta_xi)}}},
              {"xi_bounds", Json::array({number(c.xi_bounds.lo), number(c.xi_bounds.hi)})},
              {"threshold", number(c.threshold)},
              {"exceed_prob", number(c.exceed_prob)},
              {"bulk_min", number(c.bulk_min)},
              {"contamination",
               Json{{"fraction", number(c.contamination.fraction)},
                    {"mechanism", to_string(c.contamination.mechanism)},
                    {"factor", number(c.contamination.factor)},
                    {"shift", number(c.contamination.shift)}}},
              {"n_replicates", c.n_replicates},
              {"seed", c.base_seed},
              {"robust", robust},
              {"n_threads", c.n_threads}};
}

inline Json study_summary_json(const ScenarioConfig& c, const std::vector<SummaryRow>& rows) {
  Json a = Json::array();
  for (const auto& s : rows) {
    a.push_back(Json{{"estimator", s.estimator},
                     {"coefficient", s.coefficient},
                     {"truth", number(s.truth)},
                     {"bias", number(s.bias)},
                     {"rmse", number(s.rmse)},
                     {"median_abs_error", number(s.median_abs_error)},
                     {"n_ok", s.n_ok},
                     {"convergence_rate", number(s.convergence_rate)},
                     {"mean_weight_contaminated", number(s.mean_weight_contaminated)},
                     {"mean_weight_clean", number(s.mean_weight_clean)}});
  }
  return Json{{"schema_version", kSchemaVersion}, {"artifact", "study_summary"}, {"config", scenario_config_json(c)},
              {"summary", a}};
}

}  // namespace potreg::io
