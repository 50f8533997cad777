#pragma once

// Per-parameter design matrices for covariate-linked GPD regression.
//
// Column order within a parameter block is fixed: intercept, linear terms in
// the order they were specified, then spline blocks. Covariates are
// standardized before any basis is built; the transform travels with the
// layout so new covariate rows map to the same columns.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "potreg/distributions.hpp"
#include "potreg/error.hpp"

namespace potreg {

enum class Family { dgpd, gpd };

inline const char* to_string(Family f) { return f == Family::dgpd ? "dgpd" : "gpd"; }

inline Family family_from_string(const std::string& s) {
  if (s == "dgpd") return Family::dgpd;
  if (s == "gpd") return Family::gpd;
  throw StageError("config", "unknown family '" + s + "' (expected dgpd or gpd)");
}

// Named real-valued columns of equal length. NaN marks a missing value.
struct CovariateTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
  std::size_t n_rows = 0;  // row count when there are no columns

  [[nodiscard]] std::size_t rows() const { return columns.empty() ? n_rows : columns.front().size(); }

  [[nodiscard]] const std::vector<double>* find(const std::string& name) const {
    for (std::size_t j = 0; j < names.size(); ++j) {
      if (names[j] == name) return &columns[j];
    }
    return nullptr;
  }

  void add(std::string name, std::vector<double> values) {
    n_rows = values.size();
    names.push_back(std::move(name));
    columns.push_back(std::move(values));
  }

  // Subset of rows, in the given order.
  [[nodiscard]] CovariateTable select_rows(std::span<const std::size_t> rows) const {
    CovariateTable out;
    out.names = names;
    out.n_rows = rows.size();
    out.columns.resize(columns.size());
    for (std::size_t j = 0; j < columns.size(); ++j) {
      out.columns[j].reserve(rows.size());
      for (std::size_t r : rows) out.columns[j].push_back(columns[j][r]);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Links

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double link_sigma(double eta) { return std::exp(eta); }

inline double link_sigma_inv(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw std::domain_error("link_sigma_inv: scale must be positive and finite");
  }
  return std::log(sigma);
}

// lo + (hi - lo) * logistic(eta), kept strictly inside (lo, hi).
inline double link_xi(double eta, ShapeBounds b = {}) {
  const double xi = b.lo + (b.hi - b.lo) * logistic(eta);
  return std::clamp(xi, std::nextafter(b.lo, b.hi), std::nextafter(b.hi, b.lo));
}

inline double link_xi_inv(double xi, ShapeBounds b = {}) {
  if (!b.contains(xi)) throw std::domain_error("link_xi_inv: shape outside open bounds");
  const double u = (xi - b.lo) / (b.hi - b.lo);
  return std::log(u) - std::log1p(-u);
}

// d xi / d eta
inline double link_xi_derivative(double eta, ShapeBounds b = {}) {
  const double g = logistic(eta);
  return (b.hi - b.lo) * g * (1.0 - g);
}

// ---------------------------------------------------------------------------
// B-splines

// Cubic (by default) B-spline basis by the Cox-de Boor recursion over a
// strictly increasing knot vector. Returns knots.size() - degree - 1 values;
// x is clamped to [knots.front(), knots.back()].
inline std::vector<double> bspline_basis(double x, std::span<const double> knots, int degree = 3) {
  const std::size_t m = knots.size();
  if (degree < 0 || m < static_cast<std::size_t>(degree) + 2) {
    throw std::invalid_argument("bspline_basis: need at least degree + 2 knots");
  }
  for (std::size_t i = 1; i < m; ++i) {
    if (!(knots[i] > knots[i - 1])) throw std::invalid_argument("bspline_basis: knots must be strictly increasing");
  }
  x = std::clamp(x, knots.front(), knots.back());

  // degree-0 indicators; the right end belongs to the last interval
  std::vector<double> b(m - 1, 0.0);
  std::size_t span = 0;
  if (x >= knots[m - 1]) {
    span = m - 2;
  } else {
    span = static_cast<std::size_t>(std::upper_bound(knots.begin(), knots.end(), x) - knots.begin()) - 1;
  }
  b[span] = 1.0;

  for (int d = 1; d <= degree; ++d) {
    const std::size_t count = m - 1 - static_cast<std::size_t>(d);
    for (std::size_t i = 0; i < count; ++i) {
      const double left = (x - knots[i]) / (knots[i + d] - knots[i]);
      const double right = (knots[i + d + 1] - x) / (knots[i + d + 1] - knots[i + 1]);
      b[i] = left * b[i] + right * b[i + 1];
    }
    b.resize(count);
  }
  return b;
}

// Second-order difference penalty D'D for a basis of the given dimension.
inline Eigen::MatrixXd second_difference_penalty(std::size_t dim) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(dim >= 2 ? dim - 2 : 0, dim);
  for (Eigen::Index r = 0; r < d.rows(); ++r) {
    d(r, r) = 1.0;
    d(r, r + 1) = -2.0;
    d(r, r + 2) = 1.0;
  }
  return d.transpose() * d;
}

// ---------------------------------------------------------------------------
// Model specification

enum class TermKind { intercept, linear, spline };

struct Term {
  TermKind kind = TermKind::intercept;
  std::string covariate;
  int n_knots = 0;
  double lambda = 0.0;

  static Term intercept() { return {}; }
  static Term linear(std::string name) { return {TermKind::linear, std::move(name), 0, 0.0}; }
  static Term spline(std::string name, int n_knots, double lambda) {
    return {TermKind::spline, std::move(name), n_knots, lambda};
  }

  friend bool operator==(const Term&, const Term&) = default;
};

struct ModelSpec {
  Family family = Family::dgpd;
  std::vector<Term> sigma_terms{Term::intercept()};
  std::vector<Term> xi_terms{Term::intercept()};
  ShapeBounds xi_bounds{};

  static ModelSpec intercept_only(Family f, ShapeBounds b = {}) {
    ModelSpec s;
    s.family = f;
    s.xi_bounds = b;
    return s;
  }

  [[nodiscard]] std::vector<std::string> covariates() const {
    std::vector<std::string> out;
    auto add = [&](const std::vector<Term>& terms) {
      for (const auto& t : terms) {
        if (t.kind != TermKind::intercept &&
            std::find(out.begin(), out.end(), t.covariate) == out.end()) {
          out.push_back(t.covariate);
        }
      }
    };
    add(sigma_terms);
    add(xi_terms);
    return out;
  }

  void validate() const {
    if (xi_bounds.lo < -0.5 || !(xi_bounds.lo < xi_bounds.hi)) {
      throw StageError("config", "xi_bounds must satisfy -0.5 <= lo < hi");
    }
    auto check = [](const std::vector<Term>& terms, const char* which) {
      const auto n_intercepts = std::count_if(terms.begin(), terms.end(),
                                              [](const Term& t) { return t.kind == TermKind::intercept; });
      if (n_intercepts != 1) {
        throw StageError("config", std::string(which) + " terms need exactly one intercept");
      }
      std::set<std::string> seen;
      for (const auto& t : terms) {
        if (t.kind == TermKind::intercept) continue;
        if (t.covariate.empty()) throw StageError("config", std::string(which) + ": empty covariate name");
        if (!seen.insert(t.covariate).second) {
          throw StageError("config", std::string(which) + ": covariate '" + t.covariate + "' used twice");
        }
        if (t.kind == TermKind::spline) {
          if (t.n_knots < 3) throw StageError("config", "spline(" + t.covariate + "): need at least 3 knots");
          if (!(t.lambda >= 0.0)) throw StageError("config", "spline(" + t.covariate + "): lambda must be >= 0");
        }
      }
    };
    check(sigma_terms, "sigma");
    check(xi_terms, "xi");
  }

  friend bool operator==(const ModelSpec& a, const ModelSpec& b) {
    return a.family == b.family && a.sigma_terms == b.sigma_terms && a.xi_terms == b.xi_terms &&
           a.xi_bounds.lo == b.xi_bounds.lo && a.xi_bounds.hi == b.xi_bounds.hi;
  }
};

// ---------------------------------------------------------------------------
// Layout

struct Standardization {
  std::string covariate;
  double center = 0.0;
  double scale = 1.0;
  double min = 0.0;  // raw-scale training range
  double max = 0.0;

  [[nodiscard]] double apply(double x) const { return (x - center) / scale; }
};

struct TermBlock {
  Term term;
  std::size_t first_col = 0;
  std::size_t n_cols = 0;
  std::vector<double> knots;  // standardized scale, spline terms only
};

struct ParameterLayout {
  std::vector<TermBlock> blocks;
  std::vector<std::string> column_names;
  Eigen::MatrixXd penalty;  // lambda-weighted, aligned with columns

  [[nodiscard]] std::size_t n_cols() const { return column_names.size(); }
};

struct DesignMatrices;

class DesignLayout {
 public:
  DesignLayout() = default;

  // Standardization and knot placement are taken from `data`.
  static DesignLayout build(const CovariateTable& data, const ModelSpec& spec) {
    spec.validate();
    DesignLayout layout;
    layout.spec_ = spec;
    for (const auto& name : spec.covariates()) {
      const auto* col = data.find(name);
      if (col == nullptr) throw StageError("design", "unknown covariate '" + name + "'");
      layout.standardization_.push_back(standardize(name, *col));
    }
    layout.sigma_ = layout.build_parameter(spec.sigma_terms);
    layout.xi_ = layout.build_parameter(spec.xi_terms);
    return layout;
  }

  static DesignLayout from_parts(ModelSpec spec, std::vector<Standardization> standardization) {
    spec.validate();
    DesignLayout layout;
    layout.spec_ = std::move(spec);
    layout.standardization_ = std::move(standardization);
    for (const auto& name : layout.spec_.covariates()) {
      if (layout.find_standardization(name) == nullptr) {
        throw StageError("design", "missing standardization for covariate '" + name + "'");
      }
    }
    layout.sigma_ = layout.build_parameter(layout.spec_.sigma_terms);
    layout.xi_ = layout.build_parameter(layout.spec_.xi_terms);
    return layout;
  }

  [[nodiscard]] const ModelSpec& spec() const { return spec_; }
  [[nodiscard]] const ParameterLayout& sigma() const { return sigma_; }
  [[nodiscard]] const ParameterLayout& xi() const { return xi_; }
  [[nodiscard]] const std::vector<Standardization>& standardization() const { return standardization_; }

  [[nodiscard]] const Standardization* find_standardization(const std::string& name) const {
    for (const auto& s : standardization_) {
      if (s.covariate == name) return &s;
    }
    return nullptr;
  }

  [[nodiscard]] DesignMatrices design(const CovariateTable& data) const;

  // Design rows for one covariate record. Throws StageError("design") when a
  // referenced covariate is absent or non-finite.
  [[nodiscard]] std::pair<Eigen::VectorXd, Eigen::VectorXd> rows(
      const std::map<std::string, double>& record) const {
    std::map<std::string, double> standardized;
    for (const auto& s : standardization_) {
      const auto it = record.find(s.covariate);
      if (it == record.end()) throw StageError("design", "missing covariate '" + s.covariate + "'");
      if (!std::isfinite(it->second)) {
        throw StageError("design", "non-finite value for covariate '" + s.covariate + "'");
      }
      standardized[s.covariate] = s.apply(it->second);
    }
    return {parameter_row(sigma_, standardized), parameter_row(xi_, standardized)};
  }

  // True when any referenced covariate lies outside its training range.
  [[nodiscard]] bool extrapolates(const std::map<std::string, double>& record) const {
    for (const auto& s : standardization_) {
      const auto it = record.find(s.covariate);
      if (it != record.end() && (it->second < s.min || it->second > s.max)) return true;
    }
    return false;
  }

 private:
  static Standardization standardize(const std::string& name, const std::vector<double>& col) {
    if (col.empty()) throw StageError("design", "covariate '" + name + "' has no rows");
    double sum = 0.0;
    Standardization s;
    s.covariate = name;
    s.min = std::numeric_limits<double>::infinity();
    s.max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < col.size(); ++i) {
      if (!std::isfinite(col[i])) {
        throw StageError("design", "non-finite value for covariate '" + name + "' at row " + std::to_string(i));
      }
      sum += col[i];
      s.min = std::min(s.min, col[i]);
      s.max = std::max(s.max, col[i]);
    }
    s.center = sum / static_cast<double>(col.size());
    double ss = 0.0;
    for (double v : col) ss += (v - s.center) * (v - s.center);
    const double sd = col.size() > 1 ? std::sqrt(ss / static_cast<double>(col.size() - 1)) : 0.0;
    s.scale = sd > 0.0 ? sd : 1.0;
    return s;
  }

  // n_knots equally spaced knots over the standardized training range,
  // extended by `degree` knots of the same spacing on each side.
  static std::vector<double> spline_knots(const Standardization& s, int n_knots, int degree = 3) {
    double lo = s.apply(s.min);
    double hi = s.apply(s.max);
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double h = (hi - lo) / (n_knots - 1);
    std::vector<double> knots;
    for (int i = -degree; i < n_knots + degree; ++i) knots.push_back(lo + h * i);
    return knots;
  }

  ParameterLayout build_parameter(const std::vector<Term>& terms) const {
    ParameterLayout p;
    std::vector<const Term*> ordered;
    for (const auto& t : terms) {
      if (t.kind == TermKind::intercept) ordered.push_back(&t);
    }
    for (const auto& t : terms) {
      if (t.kind == TermKind::linear) ordered.push_back(&t);
    }
    for (const auto& t : terms) {
      if (t.kind == TermKind::spline) ordered.push_back(&t);
    }

    std::size_t col = 0;
    for (const Term* t : ordered) {
      TermBlock block;
      block.term = *t;
      block.first_col = col;
      switch (t->kind) {
        case TermKind::intercept:
          block.n_cols = 1;
          p.column_names.emplace_back("(Intercept)");
          break;
        case TermKind::linear:
          block.n_cols = 1;
          p.column_names.push_back(t->covariate);
          break;
        case TermKind::spline: {
          block.knots = spline_knots(*find_standardization(t->covariate), t->n_knots);
          // first basis function dropped: the full basis sums to one and
          // would duplicate the intercept
          block.n_cols = block.knots.size() - 4 - 1;
          for (std::size_t j = 0; j < block.n_cols; ++j) {
            p.column_names.push_back("s(" + t->covariate + ")." + std::to_string(j + 1));
          }
          break;
        }
      }
      col += block.n_cols;
      p.blocks.push_back(std::move(block));
    }

    p.penalty = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(col), static_cast<Eigen::Index>(col));
    for (const auto& b : p.blocks) {
      if (b.term.kind != TermKind::spline) continue;
      const Eigen::MatrixXd full = second_difference_penalty(b.n_cols + 1);
      const auto first = static_cast<Eigen::Index>(b.first_col);
      const auto n = static_cast<Eigen::Index>(b.n_cols);
      p.penalty.block(first, first, n, n) = b.term.lambda * full.bottomRightCorner(n, n);
    }
    return p;
  }

  static Eigen::VectorXd parameter_row(const ParameterLayout& p,
                                       const std::map<std::string, double>& standardized) {
    Eigen::VectorXd row = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.n_cols()));
    for (const auto& b : p.blocks) {
      const auto first = static_cast<Eigen::Index>(b.first_col);
      switch (b.term.kind) {
        case TermKind::intercept:
          row(first) = 1.0;
          break;
        case TermKind::linear:
          row(first) = standardized.at(b.term.covariate);
          break;
        case TermKind::spline: {
          const auto basis = bspline_basis(standardized.at(b.term.covariate), b.knots);
          for (std::size_t j = 0; j < b.n_cols; ++j) row(first + static_cast<Eigen::Index>(j)) = basis[j + 1];
          break;
        }
      }
    }
    return row;
  }

  ModelSpec spec_;
  std::vector<Standardization> standardization_;
  ParameterLayout sigma_;
  ParameterLayout xi_;
};

struct DesignMatrices {
  Eigen::MatrixXd x_sigma;
  Eigen::MatrixXd x_xi;
  Eigen::MatrixXd penalty_sigma;
  Eigen::MatrixXd penalty_xi;
  DesignLayout layout;

  [[nodiscard]] Eigen::Index rows() const { return x_sigma.rows(); }
  [[nodiscard]] Eigen::Index p_sigma() const { return x_sigma.cols(); }
  [[nodiscard]] Eigen::Index p_xi() const { return x_xi.cols(); }
  [[nodiscard]] Eigen::Index n_coef() const { return p_sigma() + p_xi(); }
};

inline DesignMatrices DesignLayout::design(const CovariateTable& data) const {
  const std::size_t n = data.rows();
  DesignMatrices d;
  d.layout = *this;
  d.x_sigma.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(sigma_.n_cols()));
  d.x_xi.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(xi_.n_cols()));
  std::vector<const std::vector<double>*> cols;
  for (const auto& s : standardization_) {
    const auto* c = data.find(s.covariate);
    if (c == nullptr) throw StageError("design", "unknown covariate '" + s.covariate + "'");
    cols.push_back(c);
  }
  std::map<std::string, double> record;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < standardization_.size(); ++j) {
      const double v = (*cols[j])[i];
      if (!std::isfinite(v)) {
        throw StageError("design", "non-finite value for covariate '" + standardization_[j].covariate +
                                       "' at row " + std::to_string(i));
      }
      record[standardization_[j].covariate] = standardization_[j].apply(v);
    }
    d.x_sigma.row(static_cast<Eigen::Index>(i)) = parameter_row(sigma_, record);
    d.x_xi.row(static_cast<Eigen::Index>(i)) = parameter_row(xi_, record);
  }
  d.penalty_sigma = sigma_.penalty;
  d.penalty_xi = xi_.penalty;
  return d;
}

inline DesignMatrices build_design(const CovariateTable& data, const ModelSpec& spec) {
  return DesignLayout::build(data, spec).design(data);
}

// Coefficients of a linear-only parameter block mapped back to raw
// covariate units: slope / scale, intercept absorbs the centering.
inline Eigen::VectorXd raw_scale_coefficients(const DesignLayout& layout, const ParameterLayout& p,
                                              const Eigen::VectorXd& beta) {
  if (beta.size() != static_cast<Eigen::Index>(p.n_cols())) {
    throw std::invalid_argument("raw_scale_coefficients: dimension mismatch");
  }
  Eigen::VectorXd raw = beta;
  for (const auto& b : p.blocks) {
    if (b.term.kind == TermKind::spline) {
      throw std::invalid_argument("raw_scale_coefficients: spline terms have no raw-scale slope");
    }
    if (b.term.kind != TermKind::linear) continue;
    const auto* s = layout.find_standardization(b.term.covariate);
    const auto j = static_cast<Eigen::Index>(b.first_col);
    raw(j) = beta(j) / s->scale;
    raw(0) -= beta(j) * s->center / s->scale;
  }
  return raw;
}

// eta = x'beta through the links.
inline GpdParams predict_params(const Eigen::VectorXd& beta_sigma, const Eigen::VectorXd& beta_xi,
                                const Eigen::VectorXd& row_sigma, const Eigen::VectorXd& row_xi,
                                ShapeBounds bounds = {}) {
  if (beta_sigma.size() != row_sigma.size() || beta_xi.size() != row_xi.size()) {
    throw std::invalid_argument("predict_params: coefficient/design dimension mismatch");
  }
  return GpdParams(link_sigma(row_sigma.dot(beta_sigma)), link_xi(row_xi.dot(beta_xi), bounds), bounds);
}

}  // namespace potreg
