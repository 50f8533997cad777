#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "potreg/design.hpp"
#include "support.hpp"

using namespace potreg;

namespace {

CovariateTable table4() {
  CovariateTable t;
  t.add("temp", {1.0, 2.0, 4.0, 7.0});
  t.add("hum", {0.3, 0.1, 0.9, 0.5});
  return t;
}

std::vector<double> uniform_knots(double lo, double hi, int n) {
  std::vector<double> k;
  for (int i = 0; i < n; ++i) k.push_back(lo + (hi - lo) * i / (n - 1));
  return k;
}

}  // namespace

TEST(Design, InterceptOnlyIsColumnOfOnes) {
  const auto d = build_design(table4(), ModelSpec::intercept_only(Family::dgpd));
  ASSERT_EQ(d.x_sigma.rows(), 4);
  ASSERT_EQ(d.x_sigma.cols(), 1);
  EXPECT_TRUE(d.x_sigma.isOnes());
  EXPECT_TRUE(d.x_xi.isOnes());
}

TEST(Design, InterceptOnlyWithoutCovariateColumns) {
  CovariateTable t;
  t.n_rows = 3;
  const auto d = build_design(t, ModelSpec::intercept_only(Family::gpd));
  EXPECT_EQ(d.rows(), 3);
}

TEST(Design, LinearTermIsStandardizedCovariate) {
  ModelSpec spec = ModelSpec::intercept_only(Family::dgpd);
  spec.sigma_terms.push_back(Term::linear("temp"));
  const auto d = build_design(table4(), spec);
  ASSERT_EQ(d.x_sigma.cols(), 2);
  const double mean = 3.5;
  const double sd = std::sqrt((6.25 + 2.25 + 0.25 + 12.25) / 3.0);
  const std::vector<double> raw{1.0, 2.0, 4.0, 7.0};
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(d.x_sigma(i, 0), 1.0);
    EXPECT_NEAR(d.x_sigma(i, 1), (raw[static_cast<std::size_t>(i)] - mean) / sd, 1e-15);
  }
  const auto& s = d.layout.standardization().front();
  EXPECT_EQ(s.min, 1.0);
  EXPECT_EQ(s.max, 7.0);
}

TEST(Design, SplineDimensionsAndPenalty) {
  ModelSpec spec = ModelSpec::intercept_only(Family::dgpd);
  spec.sigma_terms.push_back(Term::spline("temp", 8, 1.0));
  const auto d = build_design(table4(), spec);
  // 8 knots + 3 per side -> 10 cubic basis functions, first dropped
  EXPECT_EQ(d.x_sigma.rows(), 4);
  EXPECT_EQ(d.x_sigma.cols(), 10);
  EXPECT_EQ(d.penalty_sigma.rows(), 10);
  EXPECT_TRUE(d.penalty_sigma.row(0).isZero());
  EXPECT_TRUE(d.penalty_sigma.col(0).isZero());
  EXPECT_TRUE(d.penalty_sigma.isApprox(d.penalty_sigma.transpose()));
  EXPECT_EQ(d.penalty_xi.size(), 1);
  EXPECT_EQ(d.penalty_xi(0, 0), 0.0);
  // second differences annihilate linear coefficient sequences
  Eigen::VectorXd lin(9);
  for (int j = 0; j < 9; ++j) lin(j) = 3.0 - 0.5 * j;
  const Eigen::MatrixXd full = second_difference_penalty(10);
  Eigen::VectorXd padded(10);
  padded << 3.5, lin;
  EXPECT_NEAR((full * padded).norm(), 0.0, 1e-12);
}

TEST(Design, ColumnOrderIsInterceptLinearSpline) {
  ModelSpec spec = ModelSpec::intercept_only(Family::gpd);
  spec.sigma_terms = {Term::spline("hum", 4, 0.5), Term::linear("temp"), Term::intercept()};
  const auto d = build_design(table4(), spec);
  const auto& names = d.layout.sigma().column_names;
  ASSERT_EQ(names.size(), 7u);
  EXPECT_EQ(names[0], "(Intercept)");
  EXPECT_EQ(names[1], "temp");
  EXPECT_EQ(names[2], "s(hum).1");
  EXPECT_EQ(names[6], "s(hum).5");
}

TEST(Design, ByteIdenticalAcrossBuilds) {
  ModelSpec spec = ModelSpec::intercept_only(Family::gpd);
  spec.sigma_terms.push_back(Term::spline("hum", 5, 2.0));
  spec.xi_terms.push_back(Term::linear("temp"));
  const auto a = build_design(table4(), spec);
  const auto b = build_design(table4(), spec);
  EXPECT_EQ(a.x_sigma, b.x_sigma);
  EXPECT_EQ(a.x_xi, b.x_xi);
  EXPECT_EQ(a.penalty_sigma, b.penalty_sigma);
}

TEST(Design, UnknownCovariateNamesDesignStage) {
  ModelSpec spec = ModelSpec::intercept_only(Family::gpd);
  spec.sigma_terms.push_back(Term::linear("wind"));
  try {
    (void)build_design(table4(), spec);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "design");
    EXPECT_NE(std::string(e.what()).find("wind"), std::string::npos);
  }
}

TEST(Design, NonFiniteCovariateRejected) {
  CovariateTable t = table4();
  t.columns[0][2] = NAN;
  ModelSpec spec = ModelSpec::intercept_only(Family::gpd);
  spec.sigma_terms.push_back(Term::linear("temp"));
  EXPECT_THROW((void)build_design(t, spec), StageError);
}

TEST(Design, SpecValidation) {
  ModelSpec spec = ModelSpec::intercept_only(Family::gpd);
  spec.sigma_terms.push_back(Term::intercept());
  EXPECT_THROW(spec.validate(), StageError);
  spec = ModelSpec::intercept_only(Family::gpd);
  spec.sigma_terms.push_back(Term::spline("temp", 2, 1.0));
  EXPECT_THROW(spec.validate(), StageError);
  spec = ModelSpec::intercept_only(Family::gpd);
  spec.sigma_terms.push_back(Term::linear("temp"));
  spec.sigma_terms.push_back(Term::linear("temp"));
  EXPECT_THROW(spec.validate(), StageError);
}

TEST(Design, RowsMatchDesignMatrix) {
  ModelSpec spec = ModelSpec::intercept_only(Family::gpd);
  spec.sigma_terms.push_back(Term::spline("hum", 5, 2.0));
  spec.xi_terms.push_back(Term::linear("temp"));
  const auto t = table4();
  const auto d = build_design(t, spec);
  for (int i = 0; i < 4; ++i) {
    const auto [rs, rx] = d.layout.rows({{"temp", t.columns[0][static_cast<std::size_t>(i)]},
                                         {"hum", t.columns[1][static_cast<std::size_t>(i)]}});
    EXPECT_TRUE(rs.isApprox(d.x_sigma.row(i).transpose(), 1e-15));
    EXPECT_TRUE(rx.isApprox(d.x_xi.row(i).transpose(), 1e-15));
  }
  EXPECT_THROW((void)d.layout.rows({{"temp", 1.0}}), StageError);
  EXPECT_TRUE(d.layout.extrapolates({{"temp", 8.0}, {"hum", 0.5}}));
  EXPECT_FALSE(d.layout.extrapolates({{"temp", 3.0}, {"hum", 0.5}}));
}

TEST(Design, RawScaleCoefficientsReproduceLinearPredictor) {
  ModelSpec spec = ModelSpec::intercept_only(Family::gpd);
  spec.sigma_terms.push_back(Term::linear("temp"));
  spec.sigma_terms.push_back(Term::linear("hum"));
  const auto t = table4();
  const auto d = build_design(t, spec);
  Eigen::VectorXd beta(3);
  beta << 0.4, -0.7, 1.3;
  const Eigen::VectorXd raw = raw_scale_coefficients(d.layout, d.layout.sigma(), beta);
  for (int i = 0; i < 4; ++i) {
    const auto r = static_cast<std::size_t>(i);
    const double direct = raw(0) + raw(1) * t.columns[0][r] + raw(2) * t.columns[1][r];
    EXPECT_NEAR(direct, d.x_sigma.row(i).dot(beta), 1e-13);
  }
}

TEST(BSpline, MatchesDividedDifferenceOracle) {
  const auto knots = uniform_knots(-2.0, 3.0, 12);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 3.0);
  for (int k = 0; k < 50; ++k) {
    const double x = u(rng);
    const auto b = bspline_basis(x, knots);
    ASSERT_EQ(b.size(), knots.size() - 4);
    for (std::size_t i = 0; i < b.size(); ++i) {
      EXPECT_NEAR(b[i], oracle::bspline_divided_difference(x, knots, i), 1e-12) << x << " " << i;
    }
  }
}

TEST(BSpline, MatchesOracleOnUnevenKnots) {
  const std::vector<double> knots{0.0, 0.1, 0.5, 0.6, 1.4, 2.0, 2.2, 3.5, 4.0};
  for (double x : {0.05, 0.55, 1.0, 2.1, 3.9}) {
    const auto b = bspline_basis(x, knots);
    for (std::size_t i = 0; i < b.size(); ++i) {
      EXPECT_NEAR(b[i], oracle::bspline_divided_difference(x, knots, i), 1e-11);
    }
  }
}

TEST(BSpline, PartitionOfUnityInsideRange) {
  const auto knots = uniform_knots(-1.0, 1.0, 14);
  // full support of four overlapping pieces on [t_3, t_{m-4}]
  std::uniform_real_distribution<double> u(knots[3], knots[knots.size() - 4]);
  std::mt19937_64 rng(17);
  for (int k = 0; k < 1000; ++k) {
    const auto b = bspline_basis(u(rng), knots);
    EXPECT_NEAR(std::accumulate(b.begin(), b.end(), 0.0), 1.0, 1e-12);
  }
  for (std::size_t j = 3; j + 4 <= knots.size(); ++j) {
    const auto b = bspline_basis(knots[j], knots);
    EXPECT_NEAR(std::accumulate(b.begin(), b.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(BSpline, ClampsOutsideRange) {
  const auto knots = uniform_knots(0.0, 1.0, 9);
  EXPECT_EQ(bspline_basis(-5.0, knots), bspline_basis(0.0, knots));
  EXPECT_EQ(bspline_basis(7.0, knots), bspline_basis(1.0, knots));
}

TEST(BSpline, RejectsBadKnots) {
  EXPECT_THROW(bspline_basis(0.5, std::vector<double>{0.0, 1.0, 1.0, 2.0, 3.0}), std::invalid_argument);
  EXPECT_THROW(bspline_basis(0.5, std::vector<double>{0.0, 1.0, 2.0}), std::invalid_argument);
}

TEST(Links, Examples) {
  EXPECT_EQ(link_sigma(0.0), 1.0);
  EXPECT_EQ(link_xi(0.0), 0.25);
  EXPECT_NEAR(link_xi_inv(link_xi(1.7)), 1.7, 1e-12);
  EXPECT_THROW(link_xi_inv(1.0), std::domain_error);
  EXPECT_THROW(link_sigma_inv(0.0), std::domain_error);
}

TEST(Links, RoundTrips) {
  for (int k = 0; k <= 400; ++k) {
    const double eta = -20.0 + 40.0 * k / 400.0;
    EXPECT_NEAR(link_sigma_inv(link_sigma(eta)), eta, 1e-12);
    const double xi = -0.5 + 1.5 * (k + 0.5) / 401.0;
    EXPECT_NEAR(link_xi(link_xi_inv(xi)), xi, 1e-12);
  }
  const ShapeBounds b{-0.2, 0.4};
  EXPECT_NEAR(link_xi(link_xi_inv(0.1, b), b), 0.1, 1e-12);
  EXPECT_GT(link_xi(-800.0), -0.5);
  EXPECT_LT(link_xi(800.0), 1.0);
}

TEST(PredictParams, Examples) {
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  const auto p0 = predict_params(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), one, one);
  EXPECT_EQ(p0.sigma(), 1.0);
  EXPECT_EQ(p0.xi(), 0.25);
  const auto p1 = predict_params(Eigen::VectorXd::Constant(1, std::log(2.0)), Eigen::VectorXd::Zero(1), one, one);
  EXPECT_NEAR(p1.sigma(), 2.0, 1e-15);
  Eigen::VectorXd bs(3), row(3);
  bs << 0.2, -0.3, 0.05;
  row << 1.0, 2.0, -1.5;
  const auto p2 = predict_params(bs, Eigen::VectorXd::Zero(1), row, one);
  EXPECT_NEAR(p2.sigma(), std::exp(0.2 - 0.6 - 0.075), 1e-15);
  EXPECT_THROW(predict_params(bs, Eigen::VectorXd::Zero(1), one, one), std::invalid_argument);
}

TEST(PredictParams, ChainRuleMatchesFiniteDifferences) {
  Eigen::VectorXd row(3);
  row << 1.0, 0.7, -1.2;
  Eigen::VectorXd b(3);
  b << 0.1, 0.4, -0.3;
  auto sigma_of = [&](const Eigen::VectorXd& v) { return link_sigma(row.dot(v)); };
  auto xi_of = [&](const Eigen::VectorXd& v) { return link_xi(row.dot(v)); };
  const Eigen::VectorXd fd_s = oracle::fd_gradient(sigma_of, b, 1e-6);
  const Eigen::VectorXd fd_x = oracle::fd_gradient(xi_of, b, 1e-6);
  const Eigen::VectorXd an_s = link_sigma(row.dot(b)) * row;
  const Eigen::VectorXd an_x = link_xi_derivative(row.dot(b)) * row;
  EXPECT_LT((fd_s - an_s).norm(), 1e-6 * an_s.norm());
  EXPECT_LT((fd_x - an_x).norm(), 1e-6 * an_x.norm());
}
