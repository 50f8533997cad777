#pragma once

// Pipeline commands behind the potreg CLI. Each returns the process exit
// code: 0 success, 1 input or configuration error, 2 numerical
// non-convergence. Errors are reported on `err` with the failing stage.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "potreg/care.hpp"
#include "potreg/fit.hpp"
#include "potreg/io/artifacts.hpp"
#include "potreg/io/csv.hpp"
#include "potreg/io/ingest.hpp"
#include "potreg/simulation.hpp"
#include "potreg/stability.hpp"

namespace potreg::commands {

enum ExitCode : int { kSuccess = 0, kInputError = 1, kNonConvergence = 2 };

struct Options {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;  // overrides the config's output_dir
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

struct Streams {
  std::ostream& log = std::cout;
  std::ostream& err = std::cerr;
};

namespace detail {

inline std::filesystem::path output_dir(const Options& opt, const std::filesystem::path& configured) {
  const auto dir = opt.out ? *opt.out : configured;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw StageError("output", "cannot create '" + dir.string() + "': " + ec.message());
  return dir;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("output", "cannot write '" + path.string() + "'");
  return out;
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) { return base / p; }

// Runs `body`, mapping exceptions to exit codes and stage-named messages.
template <class F>
int guarded(Streams io, F&& body) {
  try {
    return body();
  } catch (const StageError& e) {
    io.err << "potreg: error [" << e.stage() << "]: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    io.err << "potreg: error [numerical]: " << e.what() << '\n';
    return kNonConvergence;
  }
}

inline std::vector<double> response_of(const DailySeries& s, const ResponseOptions& r) {
  return response_series(s, r);
}

// Covariate record for one row of a generic table; empty or unparsable
// cells are reported by name.
inline std::map<std::string, double> record_from(const io::CsvTable& t, const io::CsvRow& row,
                                                 const std::vector<std::string>& needed, std::string& error) {
  std::map<std::string, double> rec;
  std::vector<std::string> missing;
  for (const auto& name : needed) {
    const auto j = t.column(name);
    if (!j || *j >= row.fields.size() || row.fields[*j].empty()) {
      missing.push_back(name);
      continue;
    }
    const auto v = io::parse_double(row.fields[*j]);
    if (!v) {
      error = "column " + name + ": expected a finite number, found '" + row.fields[*j] + "'";
      return rec;
    }
    rec[name] = *v;
  }
  if (!missing.empty()) {
    error = "missing covariate";
    for (std::size_t k = 0; k < missing.size(); ++k) error += (k ? ", " : " ") + missing[k];
  }
  return rec;
}

inline std::vector<std::string> layout_covariates(const FitResult& f) {
  std::vector<std::string> out;
  for (const auto& s : f.layout.standardization()) out.push_back(s.covariate);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int ingest(const Options& opt, Streams io = {}) {
  return detail::guarded(io, [&]() -> int {
    const auto cfg = io::load_run_config(opt.config);
    const auto [series, report] = io::ingest(cfg.input.string());
    const auto dir = detail::output_dir(opt, cfg.output_dir);
    io::write_series_csv((dir / "series.csv").string(), series);

    io::Json errors = io::Json::array();
    for (const auto& e : report.errors) errors.push_back(io::Json{{"line", e.line}, {"reason", e.reason}});
    io::Json missing = io::Json::object();
    for (const auto& [k, v] : report.missing) missing[k] = v;
    io::Json gaps = io::Json::array();
    for (const auto& g : report.gaps) {
      gaps.push_back(io::Json{{"after", io::format_date(g.after)},
                              {"before", io::format_date(g.before)},
                              {"missing_days", g.missing_days}});
    }
    const io::Json j{{"schema_version", io::kSchemaVersion},
                     {"artifact", "ingest_report"},
                     {"rows_read", report.rows_read},
                     {"rows_accepted", report.rows_accepted},
                     {"rows_rejected", report.rows_rejected},
                     {"errors", errors},
                     {"missing", missing},
                     {"first_date", io::format_date(*report.first_date)},
                     {"last_date", io::format_date(*report.last_date)},
                     {"gaps", gaps}};
    io::write_json_file(dir / "ingest_report.json", j, "output");
    for (const auto& e : report.errors) io.err << "potreg: warning [ingest]: line " << e.line << ": " << e.reason << '\n';
    if (!opt.quiet) {
      io.log << "ingest: " << report.rows_accepted << " of " << report.rows_read << " rows accepted, "
             << report.gaps.size() << " date gaps -> " << dir.string() << '\n';
    }
    return kSuccess;
  });
}

// ---------------------------------------------------------------------------

inline int threshold(const Options& opt, Streams io = {}) {
  return detail::guarded(io, [&]() -> int {
    const auto cfg = io::load_run_config(opt.config);
    const auto series = io::ingest(cfg.input.string()).first;
    const auto y = detail::response_of(series, cfg.response);
    const auto table = threshold_stability(y, cfg.response.kind, cfg.threshold_grid, cfg.spec.xi_bounds);
    std::vector<double> thresholds;
    for (const auto& row : table) thresholds.push_back(row.threshold);
    const auto mrl = mean_residual_life(y, thresholds);

    const auto dir = detail::output_dir(opt, cfg.output_dir);
    {
      auto out = detail::open_output(dir / "stability.csv");
      io::CsvWriter w(out);
      w.row(std::vector<std::string>{"quantile", "threshold", "count", "modified_scale", "xi", "converged", "error"});
      for (const auto& r : table) w.row(r.quantile, r.threshold, r.count, r.modified_scale, r.xi, r.converged, r.error);
    }
    {
      auto out = detail::open_output(dir / "mrl.csv");
      io::CsvWriter w(out);
      w.row(std::vector<std::string>{"threshold", "mean_excess", "standard_error", "count", "flagged"});
      for (const auto& r : mrl) w.row(r.threshold, r.mean_excess, r.standard_error, r.count, r.flagged);
    }
    if (!opt.quiet) io.log << "threshold: " << table.size() << " levels -> " << dir.string() << '\n';
    return kSuccess;
  });
}

// ---------------------------------------------------------------------------

inline int fit(const Options& opt, Streams io = {}) {
  return detail::guarded(io, [&]() -> int {
    auto cfg = io::load_run_config(opt.config);
    if (opt.seed) cfg.seed = *opt.seed;
    const auto series = io::ingest(cfg.input.string()).first;
    const auto y = detail::response_of(series, cfg.response);
    const double u = cfg.threshold.quantile ? choose_threshold_by_quantile(y, *cfg.threshold.quantile, cfg.response.kind)
                                            : *cfg.threshold.value;
    const auto names = cfg.spec.covariates();
    const auto ex = extract_exceedances(y, series.covariates, cfg.response.kind, u, names);
    const auto design = build_design(ex.covariates, cfg.spec);

    RobustConfig rc = cfg.robust.config;
    FitResult result;
    if (cfg.robust.calibrate) {
      result = fit_calibrated(ex, design, rc);
    } else {
      result = potreg::fit(ex, design, rc);
    }
    if (cfg.covariance && std::isfinite(result.objective)) {
      try {
        const auto s = sandwich_covariance(result, ex, design, rc);
        result.covariance = s.covariance;
        result.covariance_singular = s.singular;
        if (s.singular) result.warnings.push_back("singular information: covariance uses a pseudo-inverse");
      } catch (const std::exception& e) {
        result.warnings.push_back(std::string("covariance unavailable: ") + e.what());
      }
    }
    ExceedanceRateFit rate;
    try {
      rate = fit_exceedance_rate(y, series.covariates, u, names, cfg.rate_model);
    } catch (const StageError& e) {
      throw StageError("rate", e.what());
    }
    if (rate.separation) result.warnings.push_back("exceedance-rate fit: separation detected");

    const auto dir = detail::output_dir(opt, cfg.output_dir);
    io::write_json_file(dir / "fit.json",
                        io::fit_artifact_json(result, cfg.response, cfg.threshold, ex.report, rate, rc,
                                              cfg.robust.calibrate, cfg.seed),
                        "output");
    {
      auto out = detail::open_output(dir / "fitted.csv");
      io::CsvWriter w(out);
      w.row(std::vector<std::string>{"row", "date", "response", "exceedance", "sigma", "xi", "weight"});
      for (std::size_t i = 0; i < ex.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const auto p = predict_params(result.beta_sigma, result.beta_xi, design.x_sigma.row(r).transpose(),
                                      design.x_xi.row(r).transpose(), cfg.spec.xi_bounds);
        const double weight = result.weights.size() <= r ? kMissing : result.weights(r);
        w.row(ex.source_indices[i], io::format_date(series.dates[ex.source_indices[i]]), ex.original(i), ex.values[i],
              p.sigma(), p.xi(), weight);
      }
    }
    for (const auto& warning : result.warnings) io.err << "potreg: warning [fit]: " << warning << '\n';
    if (!opt.quiet) {
      io.log << "fit: " << ex.size() << " exceedances of u = " << io::format_double(u) << ", c = "
             << io::format_double(result.c) << ", " << (result.converged ? "converged" : "NOT converged") << " in "
             << result.iterations << " iterations -> " << dir.string() << '\n';
    }
    if (!result.converged) {
      io.err << "potreg: error [fit]: optimizer did not converge (artifact written)\n";
      return static_cast<int>(kNonConvergence);
    }
    return static_cast<int>(kSuccess);
  });
}

// ---------------------------------------------------------------------------

// Config: {"fit": path, "data": path, "output_dir": path}
inline int predict(const Options& opt, Streams io = {}) {
  return detail::guarded(io, [&]() -> int {
    const auto j = io::read_json_file(opt.config, "config");
    const io::Reader r(j, "predict", "config");
    r.only({"fit", "data", "output_dir"});
    const auto base = opt.config.parent_path();
    const auto art = io::load_fit_artifact(detail::resolve(base, r.str("fit")), "predict");
    const auto table = io::read_csv(detail::resolve(base, r.str("data")).string(), "predict");
    const auto needed = detail::layout_covariates(art.fit);

    const auto dir = detail::output_dir(opt, detail::resolve(base, r.str("output_dir", "out")));
    auto out = detail::open_output(dir / "predict.csv");
    io::CsvWriter w(out);
    w.row(std::vector<std::string>{"row", "sigma", "xi", "extrapolated", "error"});
    std::size_t n_err = 0;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      std::string error;
      const auto rec = detail::record_from(table, table.rows[i], needed, error);
      if (!error.empty()) {
        ++n_err;
        w.row(i, kMissing, kMissing, false, error);
        continue;
      }
      const auto p = art.fit.params_at(rec);
      w.row(i, p.sigma(), p.xi(), art.fit.layout.extrapolates(rec), std::string());
    }
    if (n_err > 0) io.err << "potreg: warning [predict]: " << n_err << " rows could not be evaluated\n";
    if (!opt.quiet) io.log << "predict: " << table.rows.size() << " rows -> " << dir.string() << '\n';
    return static_cast<int>(kSuccess);
  });
}

// ---------------------------------------------------------------------------

// Config: {"fits": [paths], "scenarios": path, "alpha": [levels],
//          "capacity": [levels] | {"count": [...], "odds": [...]},
//          "output_dir": path}
inline int care(const Options& opt, Streams io = {}) {
  return detail::guarded(io, [&]() -> int {
    const auto j = io::read_json_file(opt.config, "config");
    const io::Reader r(j, "care", "config");
    r.only({"fits", "scenarios", "alpha", "capacity", "output_dir"});
    const auto base = opt.config.parent_path();
    const auto alphas = r.numbers("alpha");
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      if (!(alphas[i] > 0.0 && alphas[i] < 1.0)) r.fail("alpha levels must lie in (0, 1)");
      if (i > 0 && !(alphas[i] >= alphas[i - 1])) r.fail("alpha levels must be sorted ascending");
    }
    // "capacity" is a list applied to every fit, or {"count": [...], "odds": [...]}.
    std::map<std::string, std::vector<double>> capacity_by_kind;
    if (r.has("capacity")) {
      if (r.at("capacity").is_object()) {
        const auto c = r.object("capacity");
        c.only({"count", "odds"});
        for (const char* k : {"count", "odds"}) {
          if (c.has(k)) capacity_by_kind[k] = c.numbers(k);
        }
      } else {
        capacity_by_kind["count"] = capacity_by_kind["odds"] = r.numbers("capacity");
      }
    }
    const bool any_capacity = !capacity_by_kind.empty();
    const auto fit_paths = r.strings("fits");
    if (fit_paths.empty()) r.fail("'fits' must list at least one fit artifact");
    std::vector<io::FitArtifact> fits;
    for (const auto& p : fit_paths) fits.push_back(io::load_fit_artifact(detail::resolve(base, p), "care"));

    const auto scen_path = detail::resolve(base, r.str("scenarios"));
    io::CsvTable scenarios;
    {
      std::ifstream in(scen_path, std::ios::binary);
      if (!in) throw StageError("care", "cannot open '" + scen_path.string() + "'");
      if (in.peek() != std::ifstream::traits_type::eof()) scenarios = io::parse_csv(in, "care");
    }
    if (scenarios.rows.empty()) io.err << "potreg: warning [care]: scenario file has no rows\n";
    const auto name_col = scenarios.column("scenario");

    const auto dir = detail::output_dir(opt, detail::resolve(base, r.str("output_dir", "out")));
    auto out = detail::open_output(dir / "care.csv");
    io::CsvWriter w(out);
    w.row(std::vector<std::string>{"fit", "response", "scenario", "alpha", "threshold", "zeta", "tail_level", "value",
                                   "censored", "extrapolated", "error"});
    std::ofstream cong_file;
    std::optional<io::CsvWriter> cw;
    if (any_capacity) {
      cong_file = detail::open_output(dir / "congestion.csv");
      cw.emplace(cong_file);
      cw->row(std::vector<std::string>{"fit", "response", "scenario", "capacity", "probability", "computable",
                                       "lower_bound", "error"});
    }
    std::size_t n_err = 0;
    for (std::size_t f = 0; f < fits.size(); ++f) {
      const auto& a = fits[f];
      std::vector<std::string> needed = detail::layout_covariates(a.fit);
      for (const auto& c : a.rate.covariates) {
        if (std::find(needed.begin(), needed.end(), c) == needed.end()) needed.push_back(c);
      }
      const char* kind = to_string(a.response.kind);
      const auto cap_it = capacity_by_kind.find(kind);
      const std::vector<double> capacities = cap_it == capacity_by_kind.end() ? std::vector<double>{} : cap_it->second;
      for (std::size_t i = 0; i < scenarios.rows.size(); ++i) {
        const auto& row = scenarios.rows[i];
        const std::string name =
            name_col && *name_col < row.fields.size() ? row.fields[*name_col] : std::to_string(i);
        std::string error;
        const auto rec = detail::record_from(scenarios, row, needed, error);
        if (!error.empty()) {
          ++n_err;
          for (double alpha : alphas) {
            w.row(fit_paths[f], kind, name, alpha, a.fit.threshold, kMissing, kMissing, kMissing, false, false, error);
          }
          for (double cap : capacities) cw->row(fit_paths[f], kind, name, cap, kMissing, false, kMissing, error);
          continue;
        }
        for (const auto& e : care_curve(a.fit, a.rate, rec, alphas)) {
          w.row(fit_paths[f], kind, name, e.alpha, e.threshold, e.zeta, e.tail_level, e.value,
                e.censored_below_threshold, e.extrapolated, std::string());
        }
        for (double cap : capacities) {
          const auto p = congestion_probability(a.fit, a.rate, rec, cap);
          cw->row(fit_paths[f], kind, name, cap, p.probability, p.computable, p.lower_bound, std::string());
        }
      }
    }
    if (n_err > 0) io.err << "potreg: warning [care]: " << n_err << " scenario rows could not be evaluated\n";
    if (!opt.quiet) {
      io.log << "care: " << fits.size() << " fits x " << scenarios.rows.size() << " scenarios x " << alphas.size()
             << " levels -> " << dir.string() << '\n';
    }
    return static_cast<int>(kSuccess);
  });
}

// ---------------------------------------------------------------------------

// Config: a study description (see io::scenario_config_from) plus an
// optional "output_dir".
inline int simulate(const Options& opt, Streams io = {}) {
  return detail::guarded(io, [&]() -> int {
    auto j = io::read_json_file(opt.config, "config");
    std::string out_dir = "out";
    if (j.is_object() && j.contains("output_dir")) {
      if (!j["output_dir"].is_string()) throw StageError("config", "study.output_dir must be a string");
      out_dir = j["output_dir"].get<std::string>();
      j.erase("output_dir");
    }
    auto cfg = io::scenario_config_from(j);
    if (opt.seed) cfg.base_seed = *opt.seed;
    const auto result = run_study(cfg);
    const auto summary = summarize(result);

    const auto dir = detail::output_dir(opt, detail::resolve(opt.config.parent_path(), out_dir));
    {
      auto out = detail::open_output(dir / "replicates.csv");
      io::CsvWriter w(out);
      std::vector<std::string> header{"replicate", "estimator", "ok", "converged", "c", "n_exceedances",
                                      "n_contaminated", "iterations"};
      for (const auto& n : result.coefficient_names) header.push_back(n);
      for (const char* h : {"mean_weight_contaminated", "mean_weight_clean", "error"}) header.emplace_back(h);
      w.row(header);
      for (const auto& rec : result.records) {
        std::vector<std::string> cells{std::to_string(rec.replicate), rec.estimator, rec.ok ? "true" : "false",
                                       rec.converged ? "true" : "false", io::format_double(rec.c),
                                       std::to_string(rec.n_exceedances), std::to_string(rec.n_contaminated),
                                       std::to_string(rec.iterations)};
        for (std::size_t k = 0; k < result.coefficient_names.size(); ++k) {
          cells.push_back(rec.coefficients.size() > static_cast<Eigen::Index>(k)
                              ? io::format_double(rec.coefficients(static_cast<Eigen::Index>(k)))
                              : std::string());
        }
        cells.push_back(io::format_double(rec.mean_weight_contaminated));
        cells.push_back(io::format_double(rec.mean_weight_clean));
        cells.push_back(rec.error);
        w.row(cells);
      }
    }
    io::write_json_file(dir / "summary.json", io::study_summary_json(cfg, summary), "output");
    if (!opt.quiet) {
      io.log << "simulate: " << cfg.n_replicates << " replicates -> " << dir.string() << '\n';
      for (const auto& s : summary) {
        io.log << "  " << s.estimator << ' ' << s.coefficient << ": bias " << io::format_double(s.bias) << ", rmse "
               << io::format_double(s.rmse) << '\n';
      }
    }
    return static_cast<int>(kSuccess);
  });
}

}  // namespace potreg::commands
