#pragma once

// Peaks-over-threshold mechanics: daily series, response construction,
// threshold choice, exceedance extraction and the mean-residual-life table.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "potreg/design.hpp"
#include "potreg/error.hpp"

namespace potreg {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

struct DailySeries {
  std::vector<std::chrono::year_month_day> dates;
  std::vector<std::optional<std::int64_t>> visits;
  std::vector<std::optional<std::int64_t>> positives;
  std::vector<std::optional<std::int64_t>> negatives;
  CovariateTable covariates;  // NaN marks a missing cell

  [[nodiscard]] std::size_t size() const { return dates.size(); }
};

enum class ResponseKind { count, odds };

inline const char* to_string(ResponseKind k) { return k == ResponseKind::count ? "count" : "odds"; }

inline Family family_for(ResponseKind k) { return k == ResponseKind::count ? Family::dgpd : Family::gpd; }

// Which daily count feeds the count response.
enum class CountSource { total, positives, negatives, visits };

struct ResponseOptions {
  ResponseKind kind = ResponseKind::count;
  CountSource count_source = CountSource::total;
  double odds_correction = 0.5;
};

// (positives + correction) / (negatives + correction); a zero denominator
// without correction is reported as missing.
inline std::vector<double> odds_series(const DailySeries& series, double correction) {
  if (!(correction >= 0.0)) throw std::invalid_argument("odds_series: correction must be >= 0");
  std::vector<double> out(series.size(), kMissing);
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (!series.positives[i] || !series.negatives[i]) continue;
    const double den = static_cast<double>(*series.negatives[i]) + correction;
    if (den == 0.0) continue;
    out[i] = (static_cast<double>(*series.positives[i]) + correction) / den;
  }
  return out;
}

inline std::vector<double> count_series(const DailySeries& series, CountSource source) {
  std::vector<double> out(series.size(), kMissing);
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::optional<std::int64_t> v;
    switch (source) {
      case CountSource::total:
        if (series.positives[i] && series.negatives[i]) v = *series.positives[i] + *series.negatives[i];
        break;
      case CountSource::positives: v = series.positives[i]; break;
      case CountSource::negatives: v = series.negatives[i]; break;
      case CountSource::visits: v = series.visits[i]; break;
    }
    if (v) out[i] = static_cast<double>(*v);
  }
  return out;
}

inline std::vector<double> response_series(const DailySeries& series, const ResponseOptions& opt) {
  return opt.kind == ResponseKind::count ? count_series(series, opt.count_source)
                                         : odds_series(series, opt.odds_correction);
}

// Lower nearest-rank empirical quantile of the non-missing values.
inline double choose_threshold_by_quantile(std::span<const double> values, double q,
                                           ResponseKind kind = ResponseKind::odds) {
  if (!(q > 0.0 && q < 1.0)) throw StageError("threshold", "quantile level must lie in (0, 1)");
  std::vector<double> v;
  for (double x : values) {
    if (!is_missing(x)) v.push_back(x);
  }
  if (v.empty()) throw StageError("threshold", "no non-missing response values");
  std::sort(v.begin(), v.end());
  const auto n = static_cast<double>(v.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  const double u = v[rank - 1];
  return kind == ResponseKind::count ? std::floor(u) : u;
}

struct ExtractionReport {
  std::size_t rows_scanned = 0;
  std::size_t missing_response = 0;
  std::size_t missing_covariates = 0;  // exceedance rows dropped for a missing covariate
};

struct ExceedanceSet {
  ResponseKind kind = ResponseKind::count;
  double threshold = 0.0;
  // counts: w = y - u - 1 (integer >= 0); odds: z = y - u > 0
  std::vector<double> values;
  std::vector<std::size_t> source_indices;
  CovariateTable covariates;
  ExtractionReport report;

  [[nodiscard]] std::size_t size() const { return values.size(); }

  // Original-scale response of exceedance i.
  [[nodiscard]] double original(std::size_t i) const {
    return kind == ResponseKind::count ? threshold + 1.0 + values[i] : threshold + values[i];
  }
};

// Strict exceedances of `threshold`. Rows with a missing response or a
// missing covariate are excluded and counted in the report.
inline ExceedanceSet extract_exceedances(std::span<const double> response, const CovariateTable& covariates,
                                         ResponseKind kind, double threshold,
                                         const std::vector<std::string>& covariate_names) {
  if (!std::isfinite(threshold)) throw StageError("extract", "threshold must be finite");
  if (kind == ResponseKind::count && threshold != std::floor(threshold)) {
    throw StageError("extract", "count threshold must be integer-valued");
  }
  std::vector<const std::vector<double>*> cols;
  for (const auto& name : covariate_names) {
    const auto* c = covariates.find(name);
    if (c == nullptr) throw StageError("design", "unknown covariate '" + name + "'");
    if (c->size() != response.size()) throw StageError("extract", "covariate '" + name + "' length mismatch");
    cols.push_back(c);
  }

  ExceedanceSet out;
  out.kind = kind;
  out.threshold = threshold;
  out.report.rows_scanned = response.size();
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < response.size(); ++i) {
    const double y = response[i];
    if (is_missing(y)) {
      ++out.report.missing_response;
      continue;
    }
    if (!(y > threshold)) continue;
    const bool complete = std::all_of(cols.begin(), cols.end(), [&](const auto* c) { return std::isfinite((*c)[i]); });
    if (!complete) {
      ++out.report.missing_covariates;
      continue;
    }
    rows.push_back(i);
    out.values.push_back(kind == ResponseKind::count ? y - threshold - 1.0 : y - threshold);
  }
  if (rows.empty()) throw StageError("extract", "empty exceedance set");
  out.source_indices = rows;
  out.covariates.n_rows = rows.size();
  for (std::size_t j = 0; j < covariate_names.size(); ++j) {
    std::vector<double> col;
    col.reserve(rows.size());
    for (std::size_t r : rows) col.push_back((*cols[j])[r]);
    out.covariates.add(covariate_names[j], std::move(col));
  }
  return out;
}

inline ExceedanceSet extract_exceedances(const DailySeries& series, const ResponseOptions& opt, double threshold,
                                         const std::vector<std::string>& covariate_names) {
  const auto response = response_series(series, opt);
  return extract_exceedances(response, series.covariates, opt.kind, threshold, covariate_names);
}

struct MeanResidualLifeRow {
  double threshold = 0.0;
  double mean_excess = kMissing;
  double standard_error = kMissing;
  std::size_t count = 0;
  bool flagged = false;  // fewer than two exceedances
};

inline std::vector<MeanResidualLifeRow> mean_residual_life(std::span<const double> values,
                                                           std::span<const double> thresholds) {
  std::vector<MeanResidualLifeRow> table;
  for (double u : thresholds) {
    MeanResidualLifeRow row;
    row.threshold = u;
    double sum = 0.0;
    for (double y : values) {
      if (!is_missing(y) && y > u) {
        sum += y - u;
        ++row.count;
      }
    }
    if (row.count > 0) row.mean_excess = sum / static_cast<double>(row.count);
    if (row.count >= 2) {
      double ss = 0.0;
      for (double y : values) {
        if (!is_missing(y) && y > u) ss += (y - u - row.mean_excess) * (y - u - row.mean_excess);
      }
      const double sd = std::sqrt(ss / static_cast<double>(row.count - 1));
      row.standard_error = sd / std::sqrt(static_cast<double>(row.count));
    } else {
      row.flagged = true;
    }
    table.push_back(row);
  }
  return table;
}

}  // namespace potreg
