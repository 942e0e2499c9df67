#include <algorithm>
#include <cmath>
#include <random>

#include <boost/math/special_functions/trigamma.hpp>
#include <gtest/gtest.h>

#include "oracle.hpp"
#include "twogroups/moderation.hpp"

using namespace twogroups;

namespace {

// Row with group-A values (d + c, d - c, d) and group-B values (c, -c, 0): mean
// difference d and pooled sd c with three columns per group.
void push_row(std::vector<double>& values, double d, double c) {
  for (double x : {d + c, d - c, d, c, -c, 0.0}) values.push_back(x);
}

ExpressionMatrix with_rows(const SimulatedExpression& sim, const std::vector<std::pair<double, double>>& extra,
                           std::vector<std::string> extra_ids) {
  const auto& m = sim.matrix;
  std::vector<std::string> ids = m.row_ids();
  std::vector<double> values;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) values.push_back(m(r, c));
  for (std::size_t i = 0; i < extra.size(); ++i) {
    push_row(values, extra[i].first, extra[i].second);
    ids.push_back(extra_ids[i]);
  }
  return ExpressionMatrix(ids, m.column_labels(), values);
}

}  // namespace

TEST(TwoSampleScores, PooledTHandComputed) {
  const double a = std::sqrt(3.0) / 2.0;  // sample sd 1 for (m+a, m-a, m+a, m-a)
  const ExpressionMatrix x({"r"}, {"A", "A", "A", "A", "B", "B", "B", "B"},
                           {1 + a, 1 - a, 1 + a, 1 - a, a, -a, a, -a});
  const auto s = two_sample_scores(x);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_NEAR(s[0].t, 1.0 / std::sqrt(0.25 + 0.25), 1e-6);
  EXPECT_NEAR(s[0].t, 1.4142, 1e-4);
  EXPECT_EQ(s[0].df, 6);
  EXPECT_NEAR(s[0].s_raw, 1.0, 1e-12);
  EXPECT_FALSE(s[0].flagged);
}

TEST(TwoSampleScores, ConstantRowFlagged) {
  const ExpressionMatrix x({"flat", "ok"}, {"A", "A", "B", "B"}, {2, 2, 2, 2, 1, 2, 0, 1});
  const auto s = two_sample_scores(x);
  EXPECT_TRUE(s[0].flagged);
  EXPECT_FALSE(s[1].flagged);
}

TEST(ExpressionMatrixShape, Validation) {
  EXPECT_THROW(ExpressionMatrix({"r"}, {"A", "A", "B"}, {1, 2, 3}), invalid_input);
  EXPECT_THROW(ExpressionMatrix({"r"}, {"A", "B", "C", "C"}, {1, 2, 3, 4}), invalid_input);
  EXPECT_THROW(ExpressionMatrix({"r"}, {"A", "A", "A", "A"}, {1, 2, 3, 4}), invalid_input);
  EXPECT_THROW(ExpressionMatrix({"r"}, {"A", "A", "B", "B"}, {1, 2, NAN, 4}), invalid_input);
  EXPECT_THROW(ExpressionMatrix({"r"}, {"A", "A", "B", "B"}, {1, 2, 3}), invalid_input);
}

TEST(TrigammaInverse, RoundTrip) {
  for (double x : {1e-3, 0.1, 1.0, 7.5, 300.0}) EXPECT_NEAR(trigamma_inverse(boost::math::trigamma(x)) / x, 1.0, 1e-9);
  EXPECT_THROW(trigamma_inverse(0.0), invalid_input);
}

TEST(ShrinkVariances, IdenticalInputsUnchanged) {
  const std::vector<double> s(50, 0.7);
  const auto r = shrink_variances(s, 4);
  EXPECT_TRUE(r.total_shrinkage);
  for (double x : r.s_shrunk) EXPECT_NEAR(x, 0.7, 1e-12);
}

TEST(ShrinkVariances, DiffusePriorLeavesRawValues) {
  // Dispersion of log s^2 far beyond the chi-square floor drives d0 toward 0, and the
  // weight df / (df + d0) on the raw variance toward 1.
  double previous_d0 = INFINITY;
  for (double spread : {1.0, 3.0, 10.0}) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> d(0.0, spread);
    std::vector<double> s(400);
    for (double& x : s) x = std::exp(d(rng));
    const auto r = shrink_variances(s, 4);
    EXPECT_LT(r.d0, previous_d0);
    previous_d0 = r.d0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double post = (4.0 * s[i] * s[i] + r.d0 * r.s0 * r.s0) / (4.0 + r.d0);
      EXPECT_NEAR(r.s_shrunk[i] / std::sqrt(post), 1.0, 1e-12);
    }
  }
  EXPECT_GT(4.0 / (4.0 + previous_d0), 0.97);
}

TEST(ShrinkVariances, InterpolatesAndRecoversPrior) {
  const auto sim = simulate_expression({.rows = 4000, .per_group = 3, .prior_df = 8.0, .prior_scale = 1.5}, 12);
  const auto scores = two_sample_scores(sim.matrix);
  std::vector<double> s;
  for (const auto& r : scores) s.push_back(r.s_raw);
  const auto r = shrink_variances(s, 4);
  EXPECT_NEAR(r.d0, 8.0, 3.0);
  EXPECT_NEAR(r.s0, 1.5, 0.1);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_GE(r.s_shrunk[i], std::min(s[i], r.s0));
    EXPECT_LE(r.s_shrunk[i], std::max(s[i], r.s0));
  }
}

TEST(ShrinkVariances, ErrorPaths) {
  EXPECT_THROW(shrink_variances(std::vector<double>(10, 1.0), 4), insufficient_data);
  std::vector<double> s(40, 1.0);
  s[3] = 0.0;
  EXPECT_THROW(shrink_variances(s, 4), invalid_input);
}

TEST(TToZ, Calibration) {
  EXPECT_DOUBLE_EQ(t_to_z(0.0, 4.0), 0.0);
  EXPECT_DOUBLE_EQ(t_to_z(1.7, INFINITY), 1.7);
  // t_4 upper 2.5% point is 2.776.
  EXPECT_NEAR(t_to_z(2.7764451, 4.0), 1.959964, 1e-5);
  EXPECT_NEAR(t_to_z(-2.7764451, 4.0), -1.959964, 1e-5);
  EXPECT_TRUE(std::isfinite(t_to_z(1e6, 4.0)));
}

TEST(ModeratedPipeline, NullCalibration) {
  const auto sim = simulate_expression({.rows = 2000, .per_group = 3}, 77);
  const auto r = moderated_pipeline(sim.matrix);
  const double frac = std::count_if(r.scores.begin(), r.scores.end(), [](const ModeratedScore& s) {
    return std::abs(s.z) > 2.576;
  }) / 2000.0;
  EXPECT_NEAR(frac, 0.01, 3.0 * std::sqrt(0.01 * 0.99 / 2000.0));
}

TEST(ModeratedPipeline, NullZIsStandardNormal) {
  const auto sim = simulate_expression({.rows = 10000, .per_group = 3}, 78);
  const auto r = moderated_pipeline(sim.matrix);
  std::vector<double> z;
  for (const auto& s : r.scores) z.push_back(s.z);
  EXPECT_LT(oracle::ks_statistic(z, oracle::Phi), oracle::ks_critical(z.size()));
}

TEST(ModeratedPipeline, HugeShiftRanksFirst) {
  auto sim = simulate_expression({.rows = 500, .per_group = 3}, 5);
  const auto x = with_rows(sim, {{60.0, 1.0}}, {"spike"});
  const auto r = moderated_pipeline(x);
  const auto by_raw = std::max_element(r.scores.begin(), r.scores.end(),
                                       [](const auto& a, const auto& b) { return std::abs(a.raw_t) < std::abs(b.raw_t); });
  const auto by_mod = std::max_element(r.scores.begin(), r.scores.end(),
                                       [](const auto& a, const auto& b) { return std::abs(a.z) < std::abs(b.z); });
  EXPECT_EQ(by_raw->id, "spike");
  EXPECT_EQ(by_mod->id, "spike");
}

TEST(ModeratedPipeline, SmallSdPairDamped) {
  // Equal raw t: one row with a tiny sd and tiny difference, one with sd near s0.
  const auto sim = simulate_expression({.rows = 1000, .per_group = 3}, 6);
  const double s0 = moderated_pipeline(sim.matrix).s0;
  const auto x = with_rows(sim, {{0.15 * s0, 0.05 * s0}, {3.0 * s0, s0}}, {"tiny", "typical"});
  const auto r = moderated_pipeline(x);
  const auto& tiny = r.scores[r.scores.size() - 2];
  const auto& typical = r.scores.back();
  ASSERT_EQ(tiny.id, "tiny");
  EXPECT_NEAR(tiny.raw_t, typical.raw_t, 1e-9);
  EXPECT_LT(tiny.moderated_t, typical.moderated_t);
  EXPECT_LT(tiny.z, typical.z);
}

TEST(ModeratedPipeline, FlaggedRowsExcluded) {
  const auto sim = simulate_expression({.rows = 100, .per_group = 3}, 8);
  const auto x = with_rows(sim, {{0.0, 0.0}}, {"flat"});
  const auto r = moderated_pipeline(x);
  ASSERT_EQ(r.flagged.size(), 1u);
  EXPECT_EQ(r.flagged[0], "flat");
  EXPECT_EQ(r.scores.size(), 100u);
  EXPECT_EQ(r.panel.size(), 100u);
}
