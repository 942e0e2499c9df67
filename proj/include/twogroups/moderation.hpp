#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "twogroups/error.hpp"
#include "twogroups/model.hpp"
#include "twogroups/normal.hpp"
#include "twogroups/random.hpp"

namespace twogroups {

// N x n matrix of expression values with two group labels over the columns.
// Group A is the label of the first column; differences are A minus B.
class ExpressionMatrix {
public:
  ExpressionMatrix(std::vector<std::string> row_ids, std::vector<std::string> column_labels, std::vector<double> values)
      : row_ids_(std::move(row_ids)), labels_(std::move(column_labels)), values_(std::move(values)) {
    if (labels_.empty() || row_ids_.empty()) throw invalid_input("expression matrix is empty");
    if (values_.size() != row_ids_.size() * labels_.size())
      throw invalid_input("expression matrix has " + std::to_string(values_.size()) + " values, expected " +
                          std::to_string(row_ids_.size() * labels_.size()));
    group_a_ = labels_.front();
    for (const auto& l : labels_) {
      if (l == group_a_) {
        ++n_a_;
      } else if (group_b_.empty() || l == group_b_) {
        group_b_ = l;
        ++n_b_;
      } else {
        throw invalid_input("expression matrix must have exactly two groups; found a third label '" + l + "'");
      }
    }
    if (n_b_ == 0) throw invalid_input("expression matrix must have exactly two groups");
    if (n_a_ < 2 || n_b_ < 2) throw invalid_input("each group needs at least 2 columns");
    for (double x : values_)
      if (!std::isfinite(x)) throw invalid_input("expression matrix contains missing or non-finite values");
  }

  std::size_t rows() const { return row_ids_.size(); }
  std::size_t cols() const { return labels_.size(); }
  const std::vector<std::string>& row_ids() const { return row_ids_; }
  const std::vector<std::string>& column_labels() const { return labels_; }
  const std::string& group_a() const { return group_a_; }
  const std::string& group_b() const { return group_b_; }
  std::size_t size_a() const { return n_a_; }
  std::size_t size_b() const { return n_b_; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * labels_.size() + c]; }
  bool in_group_a(std::size_t c) const { return labels_[c] == group_a_; }

private:
  std::vector<std::string> row_ids_;
  std::vector<std::string> labels_;
  std::vector<double> values_;
  std::string group_a_, group_b_;
  std::size_t n_a_ = 0, n_b_ = 0;
};

struct RowScore {
  std::string id;
  double mean_difference = 0.0;
  double t = 0.0;
  int df = 0;
  double s_raw = 0.0;  // pooled standard deviation
  bool flagged = false;  // zero within-group variance
};

// Pooled-variance two-sample t per row, df = n1 + n2 - 2.
inline std::vector<RowScore> two_sample_scores(const ExpressionMatrix& x) {
  const std::size_t na = x.size_a(), nb = x.size_b();
  const int df = static_cast<int>(na + nb) - 2;
  const double se_factor = std::sqrt(1.0 / static_cast<double>(na) + 1.0 / static_cast<double>(nb));
  std::vector<RowScore> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) (x.in_group_a(c) ? sa : sb) += x(r, c);
    const double ma = sa / static_cast<double>(na);
    const double mb = sb / static_cast<double>(nb);
    double ss = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double d = x(r, c) - (x.in_group_a(c) ? ma : mb);
      ss += d * d;
    }
    auto& row = out[r];
    row.id = x.row_ids()[r];
    row.df = df;
    row.mean_difference = ma - mb;
    row.s_raw = std::sqrt(ss / df);
    // Relative test so that rounding residue in constant rows still counts as zero.
    const double magnitude = std::max({std::abs(ma), std::abs(mb), 1.0});
    if (!(row.s_raw > 1e-12 * magnitude)) {
      row.flagged = true;
      row.t = std::numeric_limits<double>::quiet_NaN();
    } else {
      row.t = row.mean_difference / (row.s_raw * se_factor);
    }
  }
  return out;
}

struct VarianceShrinkage {
  std::vector<double> s_shrunk;
  double d0 = 0.0;  // prior degrees of freedom; +inf means total shrinkage
  double s0 = 0.0;  // prior standard deviation
  bool total_shrinkage = false;
};

// Inverse of trigamma by bisection on log x (trigamma is strictly decreasing on x > 0).
inline double trigamma_inverse(double y) {
  if (!(y > 0.0) || !std::isfinite(y)) throw invalid_input("trigamma_inverse needs a finite y > 0");
  double lo = std::log(1e-8), hi = std::log(1e12);
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (boost::math::trigamma(std::exp(mid)) > y) lo = mid;
    else hi = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

// s_i^2 | sigma_i^2 ~ sigma_i^2 chi2_df / df, sigma_i^2 ~ scaled-inv-chi2(d0, s0^2).
// (d0, s0^2) from the first two moments of log s_i^2; the posterior-mean variance is
// (df s_i^2 + d0 s0^2) / (df + d0).
inline VarianceShrinkage shrink_variances(std::span<const double> s_raw, int df) {
  if (s_raw.size() < 30) throw insufficient_data("variance shrinkage needs at least 30 units");
  if (df <= 0) throw invalid_input("degrees of freedom must be positive");
  const double n = static_cast<double>(s_raw.size());
  const double half = 0.5 * df;
  std::vector<double> e(s_raw.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (!(s_raw[i] > 0.0) || !std::isfinite(s_raw[i])) throw invalid_input("standard deviations must be positive");
    e[i] = std::log(s_raw[i] * s_raw[i]) - boost::math::digamma(half) + std::log(half);
    mean += e[i];
  }
  mean /= n;
  double ss = 0.0;
  for (double x : e) ss += (x - mean) * (x - mean);
  const double excess = ss / (n - 1.0) - boost::math::trigamma(half);

  VarianceShrinkage out;
  if (excess > 0.0) {
    out.d0 = 2.0 * trigamma_inverse(excess);
    out.s0 = std::sqrt(std::exp(mean + boost::math::digamma(0.5 * out.d0) - std::log(0.5 * out.d0)));
  } else {
    // No dispersion beyond chi-square noise: one common variance, whose ML estimate
    // is the mean of the s_i^2.
    out.d0 = std::numeric_limits<double>::infinity();
    double s2 = 0.0;
    for (double x : s_raw) s2 += x * x;
    out.s0 = std::sqrt(s2 / n);
    out.total_shrinkage = true;
  }
  out.s_shrunk.resize(s_raw.size());
  const double s0sq = out.s0 * out.s0;
  for (std::size_t i = 0; i < s_raw.size(); ++i) {
    if (out.total_shrinkage) {
      out.s_shrunk[i] = out.s0;
    } else {
      const double post = (df * s_raw[i] * s_raw[i] + out.d0 * s0sq) / (df + out.d0);
      // Interpolation holds exactly; clamp away rounding at the endpoints.
      out.s_shrunk[i] = std::clamp(std::sqrt(post), std::min(s_raw[i], out.s0), std::max(s_raw[i], out.s0));
    }
  }
  return out;
}

// Converts a t statistic with df degrees of freedom (inf allowed) into the standard normal
// score with the same tail probability, using the smaller tail for accuracy.
inline double t_to_z(double t, double df) {
  if (!std::isfinite(df)) return t;
  const boost::math::students_t_distribution<double> dist(df);
  if (t > 0.0) return normal::upper_quantile(boost::math::cdf(boost::math::complement(dist, t)));
  if (t < 0.0) return -normal::upper_quantile(boost::math::cdf(dist, t));
  return 0.0;
}

struct ModeratedScore {
  std::string id;
  double raw_t = 0.0;
  int df = 0;
  double s_raw = 0.0;
  double s_shrunk = 0.0;
  double moderated_t = 0.0;
  double z = 0.0;
};

struct ModerationResult {
  ZPanel panel;
  std::vector<ModeratedScore> scores;  // unflagged rows in input order
  std::vector<std::string> flagged;  // rows with zero within-group variance
  double d0 = 0.0;
  double s0 = 0.0;
  bool total_shrinkage = false;
};

// two_sample_scores -> shrink_variances -> moderated t on df + d0 degrees of freedom -> z.
inline ModerationResult moderated_pipeline(const ExpressionMatrix& x) {
  const auto rows = two_sample_scores(x);
  std::vector<const RowScore*> kept;
  ModerationResult out;
  for (const auto& r : rows) {
    if (r.flagged) out.flagged.push_back(r.id);
    else kept.push_back(&r);
  }
  std::vector<double> s(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) s[i] = kept[i]->s_raw;
  const int df = rows.front().df;
  const VarianceShrinkage shrink = shrink_variances(s, df);
  out.d0 = shrink.d0;
  out.s0 = shrink.s0;
  out.total_shrinkage = shrink.total_shrinkage;
  const double se_factor =
      std::sqrt(1.0 / static_cast<double>(x.size_a()) + 1.0 / static_cast<double>(x.size_b()));
  const double total_df = df + shrink.d0;
  std::vector<Unit> units;
  units.reserve(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    ModeratedScore m;
    m.id = kept[i]->id;
    m.raw_t = kept[i]->t;
    m.df = df;
    m.s_raw = kept[i]->s_raw;
    m.s_shrunk = shrink.s_shrunk[i];
    m.moderated_t = kept[i]->mean_difference / (m.s_shrunk * se_factor);
    m.z = t_to_z(m.moderated_t, total_df);
    units.push_back(Unit{m.id, m.z, std::nullopt, std::nullopt});
    out.scores.push_back(std::move(m));
  }
  out.panel = ZPanel(std::move(units));
  return out;
}

struct ExpressionSimulation {
  std::size_t rows = 2000;
  std::size_t per_group = 3;
  double prior_df = 8.0;  // sigma_i^2 ~ scaled-inv-chi2(prior_df, prior_scale^2)
  double prior_scale = 1.0;
  double non_null_fraction = 0.0;
  double shift = 2.0;  // group-A mean shift of the non-null rows
};

struct SimulatedExpression {
  ExpressionMatrix matrix;
  std::vector<bool> non_null;
  std::vector<double> true_variance;
};

// Seeded two-group expression matrix; the first round(fraction * rows) rows are non-null.
inline SimulatedExpression simulate_expression(const ExpressionSimulation& cfg, std::uint64_t seed) {
  if (cfg.rows == 0 || cfg.per_group < 2) throw invalid_input("simulation needs rows >= 1 and per_group >= 2");
  const std::size_t cols = 2 * cfg.per_group;
  const auto n_non_null = static_cast<std::size_t>(std::llround(cfg.non_null_fraction * static_cast<double>(cfg.rows)));
  std::vector<std::string> ids(cfg.rows), labels(cols);
  std::vector<double> values(cfg.rows * cols);
  std::vector<bool> non_null(cfg.rows);
  std::vector<double> variance(cfg.rows);
  for (std::size_t c = 0; c < cols; ++c) labels[c] = c < cfg.per_group ? "A" : "B";
  for (std::size_t r = 0; r < cfg.rows; ++r) {
    SplitMix64 engine(derive_seed(seed, r, 0x6d6f64));
    const double chi = std::chi_squared_distribution<double>(cfg.prior_df)(engine);
    variance[r] = cfg.prior_df * cfg.prior_scale * cfg.prior_scale / chi;
    non_null[r] = r < n_non_null;
    std::normal_distribution<double> noise(0.0, std::sqrt(variance[r]));
    for (std::size_t c = 0; c < cols; ++c)
      values[r * cols + c] = noise(engine) + (non_null[r] && c < cfg.per_group ? cfg.shift : 0.0);
    ids[r] = unit_id(r, cfg.rows);
  }
  return {ExpressionMatrix(std::move(ids), std::move(labels), std::move(values)), std::move(non_null),
          std::move(variance)};
}

}  // namespace twogroups
