#pragma once

// Parameter-stability diagnostic over a grid of threshold quantiles.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "potreg/fit.hpp"
#include "potreg/pot.hpp"

namespace potreg {

struct StabilityRow {
  double quantile = 0.0;
  double threshold = kMissing;
  double modified_scale = kMissing;  // sigma - xi * u
  double xi = kMissing;
  std::size_t count = 0;
  bool converged = false;
  std::string error;  // empty when the row's fit succeeded
};

// Intercept-only maximum-likelihood fit at each threshold of the grid.
// Failures are recorded in their row.
inline std::vector<StabilityRow> threshold_stability(std::span<const double> response, ResponseKind kind,
                                                     std::span<const double> quantiles, ShapeBounds bounds = {}) {
  for (std::size_t i = 1; i < quantiles.size(); ++i) {
    if (!(quantiles[i] > quantiles[i - 1])) throw StageError("threshold", "quantile grid must be strictly increasing");
  }
  const ModelSpec spec = ModelSpec::intercept_only(family_for(kind), bounds);
  std::vector<StabilityRow> table;
  for (double q : quantiles) {
    StabilityRow row;
    row.quantile = q;
    try {
      row.threshold = choose_threshold_by_quantile(response, q, kind);
      const CovariateTable none;
      const auto ex = extract_exceedances(response, none, kind, row.threshold, {});
      row.count = ex.size();
      const auto design = build_design(ex.covariates, spec);
      const auto result = fit(ex, design, RobustConfig{});
      row.converged = result.converged;
      const double sigma = link_sigma(result.beta_sigma(0));
      row.xi = link_xi(result.beta_xi(0), bounds);
      row.modified_scale = sigma - row.xi * row.threshold;
      if (!result.converged) row.error = "fit did not converge";
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    table.push_back(row);
  }
  return table;
}

}  // namespace potreg
