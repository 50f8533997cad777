#pragma once

// Daily CSV ingest with per-row validation, and the matching writer.
// Schema: date,visits,positives,negatives,<covariate...>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "potreg/io/csv.hpp"
#include "potreg/pot.hpp"

namespace potreg::io {

inline constexpr double kMaxRejectFraction = 0.10;

struct RowError {
  std::size_t line = 0;
  std::string reason;
};

struct DateGap {
  std::chrono::year_month_day after;
  std::chrono::year_month_day before;
  long missing_days = 0;
};

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t rows_accepted = 0;
  std::size_t rows_rejected = 0;
  std::vector<RowError> errors;
  std::vector<std::pair<std::string, std::size_t>> missing;  // per column, file order
  std::optional<std::chrono::year_month_day> first_date;
  std::optional<std::chrono::year_month_day> last_date;
  std::vector<DateGap> gaps;
};

inline std::string format_date(std::chrono::year_month_day d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

// Strict YYYY-MM-DD.
inline std::optional<std::chrono::year_month_day> parse_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  const auto y = parse_int(s.substr(0, 4));
  const auto m = parse_int(s.substr(5, 2));
  const auto d = parse_int(s.substr(8, 2));
  if (!y || !m || !d || *y < 0 || *m < 0 || *d < 0) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{static_cast<int>(*y)},
                                        std::chrono::month{static_cast<unsigned>(*m)},
                                        std::chrono::day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  return ymd;
}

inline const std::vector<std::string>& required_columns() {
  static const std::vector<std::string> cols{"date", "visits", "positives", "negatives"};
  return cols;
}

// Rejected rows are reported and skipped. Dates must strictly increase;
// a repeated or earlier date rejects the row. More than 10% rejected rows
// abort the ingest.
inline std::pair<DailySeries, IngestReport> ingest_table(const CsvTable& table,
                                                         double max_reject_fraction = kMaxRejectFraction) {
  const auto& req = required_columns();
  if (table.header.size() < req.size() || !std::equal(req.begin(), req.end(), table.header.begin())) {
    throw StageError("ingest", "header must start with date,visits,positives,negatives");
  }
  const std::size_t n_cols = table.header.size();
  for (std::size_t j = 0; j < n_cols; ++j) {
    if (table.header[j].empty()) throw StageError("ingest", "empty column name in header");
    for (std::size_t k = 0; k < j; ++k) {
      if (table.header[k] == table.header[j]) throw StageError("ingest", "duplicate column '" + table.header[j] + "'");
    }
  }

  DailySeries s;
  IngestReport rep;
  std::vector<std::vector<double>> cov(n_cols - req.size());
  std::vector<std::size_t> missing(n_cols, 0);
  rep.rows_read = table.rows.size();

  for (const auto& row : table.rows) {
    auto reject = [&](std::string reason) {
      rep.errors.push_back({row.line, std::move(reason)});
      ++rep.rows_rejected;
    };
    if (row.fields.size() != n_cols) {
      reject("expected " + std::to_string(n_cols) + " fields, found " + std::to_string(row.fields.size()));
      continue;
    }
    const auto date = parse_date(row.fields[0]);
    if (!date) {
      reject("invalid date '" + row.fields[0] + "'");
      continue;
    }
    if (!s.dates.empty()) {
      const auto prev = std::chrono::sys_days{s.dates.back()};
      const auto cur = std::chrono::sys_days{*date};
      if (cur == prev) {
        reject("duplicate date " + row.fields[0]);
        continue;
      }
      if (cur < prev) {
        reject("date " + row.fields[0] + " out of order");
        continue;
      }
    }
    std::array<std::optional<std::int64_t>, 3> counts;
    std::string error;
    for (std::size_t j = 1; j < 4 && error.empty(); ++j) {
      const auto& f = row.fields[j];
      if (f.empty()) continue;
      const auto v = parse_int(f);
      if (!v || *v < 0) {
        error = "column " + req[j] + ": expected a non-negative integer, found '" + f + "'";
      } else {
        counts[j - 1] = *v;
      }
    }
    std::vector<double> values(cov.size(), kMissing);
    for (std::size_t j = 0; j < cov.size() && error.empty(); ++j) {
      const auto& f = row.fields[j + req.size()];
      if (f.empty()) continue;
      const auto v = parse_double(f);
      if (!v) {
        error = "column " + table.header[j + req.size()] + ": expected a finite number, found '" + f + "'";
      } else {
        values[j] = *v;
      }
    }
    if (!error.empty()) {
      reject(std::move(error));
      continue;
    }

    s.dates.push_back(*date);
    s.visits.push_back(counts[0]);
    s.positives.push_back(counts[1]);
    s.negatives.push_back(counts[2]);
    for (std::size_t j = 0; j < cov.size(); ++j) cov[j].push_back(values[j]);
    for (std::size_t j = 1; j < n_cols; ++j) missing[j] += row.fields[j].empty() ? 1 : 0;
    ++rep.rows_accepted;
  }

  if (rep.rows_read > 0 &&
      static_cast<double>(rep.rows_rejected) > max_reject_fraction * static_cast<double>(rep.rows_read)) {
    std::string msg = std::to_string(rep.rows_rejected) + " of " + std::to_string(rep.rows_read) +
                      " rows rejected, above the " + format_double(100.0 * max_reject_fraction) + "% cap";
    if (!rep.errors.empty()) {
      msg += "; first: line " + std::to_string(rep.errors.front().line) + ": " + rep.errors.front().reason;
    }
    throw StageError("ingest", msg);
  }
  if (s.dates.empty()) throw StageError("ingest", "no data rows accepted");

  s.covariates.n_rows = s.dates.size();
  for (std::size_t j = 0; j < cov.size(); ++j) s.covariates.add(table.header[j + req.size()], std::move(cov[j]));
  for (std::size_t j = 1; j < n_cols; ++j) rep.missing.emplace_back(table.header[j], missing[j]);
  rep.first_date = s.dates.front();
  rep.last_date = s.dates.back();
  for (std::size_t i = 1; i < s.dates.size(); ++i) {
    const auto d = (std::chrono::sys_days{s.dates[i]} - std::chrono::sys_days{s.dates[i - 1]}).count();
    if (d > 1) rep.gaps.push_back({s.dates[i - 1], s.dates[i], static_cast<long>(d - 1)});
  }
  return {std::move(s), std::move(rep)};
}

inline std::pair<DailySeries, IngestReport> ingest(const std::string& path,
                                                   double max_reject_fraction = kMaxRejectFraction) {
  return ingest_table(read_csv(path, "ingest"), max_reject_fraction);
}

inline void write_series_csv(std::ostream& out, const DailySeries& s) {
  out << "date,visits,positives,negatives";
  for (const auto& n : s.covariates.names) out << ',' << csv_escape(n);
  out << '\n';
  auto count = [](const std::optional<std::int64_t>& v) { return v ? std::to_string(*v) : std::string(); };
  for (std::size_t i = 0; i < s.size(); ++i) {
    out << format_date(s.dates[i]) << ',' << count(s.visits[i]) << ',' << count(s.positives[i]) << ','
        << count(s.negatives[i]);
    for (const auto& col : s.covariates.columns) out << ',' << format_double(col[i]);
    out << '\n';
  }
}

inline void write_series_csv(const std::string& path, const DailySeries& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("ingest", "cannot write '" + path + "'");
  write_series_csv(out, s);
}

}  // namespace potreg::io
