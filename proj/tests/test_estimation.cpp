#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "oracle.hpp"
#include "twogroups/estimation.hpp"

using namespace twogroups;

namespace {

TwoGroupsModel example() {
  return TwoGroupsModel(0.9, NullComponent::theoretical(), MixingDistribution::normal(2.5, 0.5), 1.0);
}

ZPanel normal_panel(std::size_t n, double mean, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(mean, sd);
  std::vector<Unit> units;
  for (std::size_t i = 0; i < n; ++i) units.push_back({unit_id(i, n), d(rng), std::nullopt, std::nullopt});
  return ZPanel(std::move(units));
}

bool monotone(const std::vector<double>& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i)
    if (trace[i] < trace[i - 1] - 1e-9 * std::abs(trace[i - 1])) return false;
  return true;
}

double log_likelihood(const TwoGroupsModel& m, const ZPanel& p) {
  double ll = 0.0;
  for (const auto& u : p.units()) ll += std::log(marginal_density(m, u.z, 1.0));
  return ll;
}

}  // namespace

TEST(FitParametric, ExamplePanelNearTruth) {
  // Sampling error at N = 3000 is large for m and v; check the fit is a sensible
  // neighbourhood of the truth and that its likelihood beats the truth's.
  const auto panel = sample_panel(example(), 3000, {}, 4).panel;
  const auto fit = fit_parametric(panel, NullComponent::theoretical());
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.model.p0(), 0.9, 0.06);
  EXPECT_NEAR(fit.model.g().mean(), 2.5, 0.8);
  EXPECT_TRUE(monotone(fit.trace));
  EXPECT_GE(fit.log_likelihood, log_likelihood(example(), panel) - 1e-6);
  EXPECT_NEAR(fit.log_likelihood, log_likelihood(fit.model, panel), 1e-6);
}

TEST(FitParametric, AllNullPanel) {
  const auto panel = normal_panel(3000, 0.0, 1.0, 12);
  const auto fit = fit_parametric(panel, NullComponent::theoretical());
  EXPECT_GE(fit.model.p0(), 0.97);
}

TEST(FitParametric, InitAtTruthAscends) {
  const auto panel = sample_panel(example(), 3000, {}, 5).panel;
  const auto fit = fit_parametric(panel, NullComponent::theoretical(), ParametricInit{0.9, 2.5, 0.5});
  EXPECT_GE(fit.log_likelihood, log_likelihood(example(), panel));
  EXPECT_DOUBLE_EQ(fit.trace.front(), log_likelihood(example(), panel));
  EXPECT_TRUE(monotone(fit.trace));
}

TEST(FitParametric, UnequalVariancesMonotone) {
  std::vector<double> v(1500);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.25 + 1.75 * static_cast<double>(i % 8) / 7.0;
  const auto panel = sample_panel(example(), v.size(), v, 33).panel;
  const auto fit = fit_parametric(panel, NullComponent::theoretical());
  EXPECT_TRUE(monotone(fit.trace));
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.model.p0(), 0.9, 0.08);
}

TEST(FitParametric, TooFewUnits) {
  const auto panel = normal_panel(5, 0.0, 1.0, 1);
  EXPECT_THROW(fit_parametric(panel, NullComponent::theoretical()), insufficient_data);
}

TEST(FitParametric, CollapsingVarianceWarns) {
  // Non-null effects all at 3: the fitted effect variance hits the floor.
  const TwoGroupsModel truth(0.7, NullComponent::theoretical(), MixingDistribution::grid({3.0}, {1.0}));
  const auto panel = sample_panel(truth, 4000, {}, 17).panel;
  const auto fit = fit_parametric(panel, NullComponent::theoretical());
  EXPECT_GE(fit.model.g().variance(), min_effect_variance);
  EXPECT_TRUE(monotone(fit.trace));
}

TEST(FitNpmle, ExamplePanelMarginalSupDistance) {
  const auto panel = sample_panel(example(), 3000, {}, 2).panel;
  const auto grid = make_grid(0.0, 5.0, 0.1);
  const auto fit = fit_npmle_grid(panel, NullComponent::theoretical(), grid);
  EXPECT_NEAR(fit.model.g().mean(), 2.5, 0.15);
  EXPECT_TRUE(monotone(fit.trace));
  double sup = 0.0;
  for (double z = -4.0; z <= 8.0; z += 0.01)
    sup = std::max(sup, std::abs(marginal_density(fit.model, z, 1.0) - marginal_density(example(), z, 1.0)));
  EXPECT_LT(sup, 0.01);
}

TEST(FitNpmle, PureNullAtZero) {
  const auto panel = normal_panel(400, 0.0, 1.0, 9);
  const std::vector<double> grid{0.0};
  const auto fit = fit_npmle_grid(panel, NullComponent::theoretical(), grid, P0Mode::fixed_at(0.0));
  double expected = 0.0;
  for (const auto& u : panel.units()) expected += std::log(oracle::phi(u.z));
  EXPECT_NEAR(fit.log_likelihood, expected, 1e-8);
  for (double z : {-1.0, 0.0, 2.0}) EXPECT_NEAR(marginal_density(fit.model, z, 1.0), oracle::phi(z), 1e-14);
}

TEST(FitNpmle, NarrowGridWarns) {
  const auto panel = sample_panel(example(), 2000, {}, 3).panel;
  const auto grid = make_grid(0.0, 1.0, 0.1);
  const auto fit = fit_npmle_grid(panel, NullComponent::theoretical(), grid);
  ASSERT_FALSE(fit.warnings.empty());
  EXPECT_NE(fit.warnings.front().find("25%"), std::string::npos);
}

TEST(FitNpmle, Validation) {
  const auto panel = normal_panel(100, 0.0, 1.0, 9);
  const std::vector<double> empty;
  EXPECT_THROW(fit_npmle_grid(panel, NullComponent::theoretical(), empty), invalid_input);
  const std::vector<double> grid{1.0};
  EXPECT_THROW(fit_npmle_grid(panel, NullComponent::theoretical(), grid, P0Mode::fixed_at(1.5)), invalid_input);
  EXPECT_THROW(make_grid(0.0, 1.0, 0.0), invalid_input);
  EXPECT_EQ(make_grid(0.0, 5.0, 0.1).size(), 51u);
}

TEST(EmpiricalNull, WideNormal) {
  const auto null = fit_empirical_null(normal_panel(20000, 0.0, 1.4, 101));
  EXPECT_NEAR(null.sigma0, 1.4, 0.08);
  EXPECT_NEAR(null.delta0, 0.0, 0.05);
  EXPECT_EQ(null.kind, NullKind::empirical);
}

TEST(EmpiricalNull, StandardNormal) {
  const auto null = fit_empirical_null(normal_panel(20000, 0.0, 1.0, 202));
  EXPECT_NEAR(null.sigma0, 1.0, 0.08);
  EXPECT_NEAR(null.delta0, 0.0, 0.05);
}

TEST(EmpiricalNull, IgnoresRightBump) {
  const auto panel = sample_panel(example(), 3000, {}, 6).panel;
  const auto null = fit_empirical_null(panel, {.center_fraction = 0.5});
  EXPECT_NEAR(null.sigma0, 1.0, 0.1);
}

TEST(EmpiricalNull, ErrorPaths) {
  EXPECT_THROW(fit_empirical_null(normal_panel(100, 0.0, 1.0, 1)), insufficient_data);
  EXPECT_THROW(fit_empirical_null(normal_panel(1000, 0.0, 1.0, 1), {.center_fraction = 0.0}), invalid_input);
  // Bimodal center: the central log-density is convex, so no null can be matched.
  std::vector<Unit> units;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 0.3);
  for (std::size_t i = 0; i < 4000; ++i)
    units.push_back({unit_id(i, 4000), d(rng) + (i % 2 ? 2.5 : -2.5), std::nullopt, std::nullopt});
  EXPECT_THROW(fit_empirical_null(ZPanel(units), {.center_fraction = 0.3}), empirical_null_failure);
}
