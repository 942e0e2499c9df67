#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>

#include "twogroups/error.hpp"
#include "twogroups/model.hpp"
#include "twogroups/normal.hpp"
#include "twogroups/parallel.hpp"
#include "twogroups/posterior.hpp"

namespace twogroups {

struct FitResult {
  TwoGroupsModel model;
  double log_likelihood = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> trace;  // EM log-likelihood path, one value per iteration
  std::vector<std::string> warnings;
};

struct FitOptions {
  double tolerance = 1e-9;  // relative log-likelihood change
  std::size_t max_iterations = 2000;
  bool allow_negative_mean = false;
  double sigma2 = 1.0;  // per-observation variance for units given by sample size
  unsigned threads = 1;
  // Parametric fit only: an alternative must raise the log-likelihood over the all-null
  // model by at least this much to be reported; otherwise p0 = 1. p0 is not identified
  // on null data (the alternative can mimic the null), so without this rule the fit
  // returns an arbitrary p0 along a flat ridge. 3 ~ chi2_2(0.95) / 2. Set 0 to disable.
  double null_collapse_gain = 3.0;
};

struct ParametricInit {
  double p0 = 0.9;
  double mean = 0.0;
  double variance = 1.0;
};

inline constexpr double min_effect_variance = 1e-8;

namespace detail {

inline double log_add(double a, double b) {
  if (a == neg_inf) return b;
  if (b == neg_inf) return a;
  const double top = std::max(a, b);
  return top + std::log(std::exp(a - top) + std::exp(b - top));
}

inline bool relative_change_below(double previous, double current, double tolerance) {
  return std::abs(current - previous) < tolerance * std::max(std::abs(current), 1e-300);
}

// Responsibility-weighted normal log-likelihood sum_i r_i log N(z_i; m, V_i + v).
inline double weighted_normal_q(std::span<const double> z, std::span<const double> var, std::span<const double> r,
                                double m, double v) {
  double q = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) q += r[i] * normal::log_pdf(z[i], m, var[i] + v);
  return q;
}

inline double weighted_center(std::span<const double> z, std::span<const double> var, std::span<const double> r,
                              double v, bool allow_negative) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double w = r[i] / (var[i] + v);
    num += w * z[i];
    den += w;
  }
  const double m = num / den;
  return allow_negative ? m : std::max(0.0, m);
}

inline double top_decile_mean(std::vector<double> z) {
  std::sort(z.begin(), z.end());
  const std::size_t count = std::max<std::size_t>(1, z.size() / 10);
  double s = 0.0;
  for (std::size_t i = z.size() - count; i < z.size(); ++i) s += z[i];
  return s / static_cast<double>(count);
}

// Linear-interpolation sample quantile of sorted data.
inline double sorted_quantile(std::span<const double> sorted, double p) {
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

// Maximum marginal likelihood of (p0, m, v) for a normal mixing distribution by EM.
// E-step: responsibilities 1 - fdr_i. M-step: p0 from the mean responsibility, (m, v)
// maximizing sum_i r_i log N(z_i; m, V_i + v) (closed form when all V_i agree).
inline FitResult fit_parametric(const ZPanel& panel, const NullComponent& null,
                                std::optional<ParametricInit> init = std::nullopt, const FitOptions& options = {}) {
  const std::size_t n = panel.size();
  if (n < 10) throw insufficient_data("parametric fit needs at least 10 units");
  null.validate();
  const std::vector<double> z = panel.z_values();
  const std::vector<double> var = panel.variances(options.sigma2);
  const bool equal_variances = std::all_of(var.begin(), var.end(), [&](double v) { return v == var.front(); });

  ParametricInit start = init.value_or(ParametricInit{0.9, detail::top_decile_mean(z), 1.0});
  if (!options.allow_negative_mean) start.mean = std::max(0.0, start.mean);
  if (!(start.p0 >= 0.0 && start.p0 <= 1.0) || !(start.variance > 0.0) || !std::isfinite(start.mean))
    throw invalid_input("invalid starting values for the parametric fit");

  double p0 = start.p0;
  double m = start.mean;
  double v = start.variance;
  std::vector<double> log_f(n), resp(n);
  std::vector<double> trace;
  bool converged = false;
  std::size_t iteration = 0;

  for (;; ++iteration) {
    parallel_for(n, options.threads, [&](std::size_t i) {
      const double a = p0 > 0.0 ? std::log(p0) + null.log_density(z[i], var[i]) : detail::neg_inf;
      const double b = p0 < 1.0 ? std::log1p(-p0) + normal::log_pdf(z[i], m, var[i] + v) : detail::neg_inf;
      log_f[i] = detail::log_add(a, b);
      resp[i] = b == detail::neg_inf ? 0.0 : std::exp(b - log_f[i]);
    });
    double ll = 0.0;
    for (double lf : log_f) ll += lf;
    trace.push_back(ll);
    if (trace.size() > 1 && detail::relative_change_below(trace[trace.size() - 2], ll, options.tolerance)) {
      converged = true;
      break;
    }
    if (iteration >= options.max_iterations) break;

    double total = 0.0;
    for (double r : resp) total += r;
    p0 = std::clamp(1.0 - total / static_cast<double>(n), 0.0, 1.0);
    if (total < 1e-10) continue;

    if (equal_variances) {
      double zsum = 0.0;
      for (std::size_t i = 0; i < n; ++i) zsum += resp[i] * z[i];
      m = zsum / total;
      if (!options.allow_negative_mean) m = std::max(0.0, m);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) ss += resp[i] * (z[i] - m) * (z[i] - m);
      v = std::max(min_effect_variance, ss / total - var.front());
    } else {
      // Coordinate step from the current v, then a Brent search over log v on the
      // profile; keep whichever has the larger Q so the step never decreases it.
      const double m_here = detail::weighted_center(z, var, resp, v, options.allow_negative_mean);
      const double q_here = detail::weighted_normal_q(z, var, resp, m_here, v);
      double spread = 0.0;
      for (std::size_t i = 0; i < n; ++i) spread += resp[i] * (z[i] - m_here) * (z[i] - m_here);
      const double upper = std::log(std::max(1.0, 10.0 * spread / total));
      auto negative_profile = [&](double log_v) {
        const double vv = std::exp(log_v);
        const double mm = detail::weighted_center(z, var, resp, vv, options.allow_negative_mean);
        return -detail::weighted_normal_q(z, var, resp, mm, vv);
      };
      const auto [best_log_v, best_negative] =
          boost::math::tools::brent_find_minima(negative_profile, std::log(min_effect_variance), upper, 52);
      if (-best_negative > q_here) {
        v = std::exp(best_log_v);
        m = detail::weighted_center(z, var, resp, v, options.allow_negative_mean);
      } else {
        m = m_here;
      }
    }
  }

  double null_ll = 0.0;
  for (std::size_t i = 0; i < n; ++i) null_ll += null.log_density(z[i], var[i]);
  const double gain = trace.back() - null_ll;
  const bool collapse = options.null_collapse_gain > 0.0 && p0 < 1.0 && gain < options.null_collapse_gain;
  if (collapse) p0 = 1.0;

  FitResult out{TwoGroupsModel(p0, null, MixingDistribution::normal(m, std::max(v, min_effect_variance)), options.sigma2),
                collapse ? null_ll : trace.back(), iteration, converged, std::move(trace), {}};
  if (collapse)
    out.warnings.push_back("alternative indistinguishable from the null (log-likelihood gain " + std::to_string(gain) +
                           "); reporting p0 = 1");
  else if (v <= min_effect_variance * (1.0 + 1e-9))
    out.warnings.push_back("boundary fit: effect variance collapsed and was clamped to 1e-8");
  if (!converged) out.warnings.push_back("EM stopped at the iteration limit before converging");
  return out;
}

struct P0Mode {
  bool fixed = false;
  double value = 0.0;

  static P0Mode free() { return {}; }
  static P0Mode fixed_at(double p0) { return {true, p0}; }
};

// NPMLE of g on a fixed support grid by EM over the grid weights (and p0 when free).
// In free mode a grid point at 0 coincides with the null atom and is dropped.
inline FitResult fit_npmle_grid(const ZPanel& panel, const NullComponent& null, std::span<const double> grid,
                                P0Mode p0_mode = P0Mode::free(), const FitOptions& options = {.max_iterations = 10000}) {
  const std::size_t n = panel.size();
  if (n == 0) throw insufficient_data("NPMLE needs a nonempty panel");
  null.validate();
  if (p0_mode.fixed && !(p0_mode.value >= 0.0 && p0_mode.value <= 1.0))
    throw invalid_input("fixed p0 must lie in [0,1]");
  std::vector<double> support;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (!std::isfinite(grid[j])) throw invalid_input("grid points must be finite");
    if (j > 0 && !(grid[j] > grid[j - 1])) throw invalid_input("grid points must be strictly increasing");
    if (!p0_mode.fixed && grid[j] == 0.0) continue;
    support.push_back(grid[j]);
  }
  if (support.empty()) throw invalid_input("grid has no usable support points");
  if (!p0_mode.fixed && support.size() < 2) throw invalid_input("free-p0 NPMLE needs at least two nonzero grid points");

  const std::size_t G = support.size();
  const std::vector<double> z = panel.z_values();
  const std::vector<double> var = panel.variances(options.sigma2);

  // Row-scaled kernels: density = exp(scale_i) * kernel.
  std::vector<double> scale(n), null_kernel(n), kernel(n * G);
  parallel_for(n, options.threads, [&](std::size_t i) {
    const double l0 = null.log_density(z[i], var[i]);
    double top = l0;
    for (std::size_t j = 0; j < G; ++j) {
      kernel[i * G + j] = normal::log_pdf(z[i], support[j], var[i]);
      top = std::max(top, kernel[i * G + j]);
    }
    scale[i] = top;
    null_kernel[i] = std::exp(l0 - top);
    for (std::size_t j = 0; j < G; ++j) kernel[i * G + j] = std::exp(kernel[i * G + j] - top);
  });

  double p0 = p0_mode.fixed ? p0_mode.value : 0.9;
  std::vector<double> w(G, 1.0 / static_cast<double>(G));
  std::vector<double> alt(n), denom(n), next(G);
  std::vector<double> trace;
  bool converged = false;
  std::size_t iteration = 0;

  for (;; ++iteration) {
    parallel_for(n, options.threads, [&](std::size_t i) {
      double a = 0.0;
      for (std::size_t j = 0; j < G; ++j) a += w[j] * kernel[i * G + j];
      alt[i] = (1.0 - p0) * a;
      denom[i] = p0 * null_kernel[i] + alt[i];
    });
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(denom[i] > 0.0)) throw degenerate_point("marginal density vanishes at z = " + std::to_string(z[i]), z[i]);
      ll += scale[i] + std::log(denom[i]);
    }
    trace.push_back(ll);
    if (trace.size() > 1 && detail::relative_change_below(trace[trace.size() - 2], ll, options.tolerance)) {
      converged = true;
      break;
    }
    if (iteration >= options.max_iterations) break;
    if (p0 >= 1.0) continue;

    double alt_total = 0.0;
    for (std::size_t i = 0; i < n; ++i) alt_total += alt[i] / denom[i];
    parallel_for(G, options.threads, [&](std::size_t j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += kernel[i * G + j] / denom[i];
      next[j] = (1.0 - p0) * w[j] * s;
    });
    for (std::size_t j = 0; j < G; ++j) w[j] = next[j] / alt_total;
    if (!p0_mode.fixed) p0 = std::clamp(1.0 - alt_total / static_cast<double>(n), 0.0, 1.0);
  }

  double total = 0.0;
  for (double x : w) total += x;
  for (double& x : w) x /= total;
  FitResult out{TwoGroupsModel(p0, null, MixingDistribution::grid(support, w), options.sigma2), trace.back(), iteration,
                converged, std::move(trace), {}};
  if (G > 1 && (w.front() >= 0.25 || w.back() >= 0.25))
    out.warnings.push_back("grid may not cover the data: at least 25% of the mass sits on an extreme grid point");
  if (!converged) out.warnings.push_back("EM stopped at the iteration limit before converging");
  return out;
}

// Evenly spaced grid from `first` to `last` inclusive.
inline std::vector<double> make_grid(double first, double last, double step) {
  if (!(step > 0.0) || !(last >= first)) throw invalid_input("grid needs step > 0 and last >= first");
  const auto count = static_cast<std::size_t>(std::floor((last - first) / step + 1e-9)) + 1;
  std::vector<double> g(count);
  for (std::size_t j = 0; j < count; ++j) g[j] = first + static_cast<double>(j) * step;
  return g;
}

struct EmpiricalNullOptions {
  double center_fraction = 0.5;
  std::size_t bins = 100;
  int smoothing_degree = 7;
};

// Central matching. A 100-bin histogram over the 0.1%-99.9% range of z is smoothed by
// Poisson regression on a degree-7 polynomial; a quadratic fitted to the smoothed
// log-density over the central `center_fraction` of the data gives
// delta0 = vertex and sigma0 = (-2 * curvature)^(-1/2).
inline NullComponent fit_empirical_null(const ZPanel& panel, const EmpiricalNullOptions& options = {}) {
  if (panel.size() < 200) throw insufficient_data("empirical null needs at least 200 units");
  if (!(options.center_fraction > 0.0 && options.center_fraction <= 1.0))
    throw invalid_input("center_fraction must lie in (0, 1]");
  if (options.bins < 10) throw invalid_input("empirical null needs at least 10 bins");

  std::vector<double> z = panel.z_values();
  std::sort(z.begin(), z.end());
  const double lo = detail::sorted_quantile(z, 0.001);
  const double hi = detail::sorted_quantile(z, 0.999);
  if (!(hi > lo)) throw empirical_null_failure("z values have no spread; use the theoretical null");
  const std::size_t B = options.bins;
  const double width = (hi - lo) / static_cast<double>(B);

  Eigen::VectorXd counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(B));
  for (double x : z) {
    if (x < lo || x > hi) continue;
    const auto b = std::min<std::size_t>(B - 1, static_cast<std::size_t>((x - lo) / width));
    counts[static_cast<Eigen::Index>(b)] += 1.0;
  }
  const int P = options.smoothing_degree + 1;
  Eigen::MatrixXd X(static_cast<Eigen::Index>(B), P);
  std::vector<double> centers(B);
  for (std::size_t b = 0; b < B; ++b) {
    centers[b] = lo + (static_cast<double>(b) + 0.5) * width;
    const double u = (centers[b] - 0.5 * (lo + hi)) / (0.5 * (hi - lo));
    double power = 1.0;
    for (int p = 0; p < P; ++p, power *= u) X(static_cast<Eigen::Index>(b), p) = power;
  }

  // IRLS for the Poisson log-linear fit.
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(P);
  beta[0] = std::log(std::max(counts.mean(), 1e-12));
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd eta = X * beta;
    const Eigen::VectorXd mu = eta.array().exp();
    const Eigen::VectorXd working = eta.array() + (counts.array() - mu.array()) / mu.array();
    const Eigen::MatrixXd XtW = X.transpose() * mu.asDiagonal();
    const Eigen::VectorXd updated = (XtW * X).ldlt().solve(XtW * working);
    if (!updated.allFinite()) throw empirical_null_failure("density smoothing diverged; use the theoretical null");
    const double step = (updated - beta).cwiseAbs().maxCoeff();
    beta = updated;
    if (step < 1e-10) break;
  }
  const Eigen::VectorXd smooth_log = X * beta;

  const double c_lo = detail::sorted_quantile(z, 0.5 * (1.0 - options.center_fraction));
  const double c_hi = detail::sorted_quantile(z, 0.5 * (1.0 + options.center_fraction));
  Eigen::Matrix3d normal_matrix = Eigen::Matrix3d::Zero();
  Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
  std::size_t used = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (centers[b] < c_lo || centers[b] > c_hi) continue;
    const double weight = std::exp(smooth_log[static_cast<Eigen::Index>(b)]);
    const Eigen::Vector3d row(1.0, centers[b], centers[b] * centers[b]);
    normal_matrix += weight * row * row.transpose();
    rhs += weight * smooth_log[static_cast<Eigen::Index>(b)] * row;
    ++used;
  }
  if (used < 3) throw empirical_null_failure("central region holds fewer than 3 bins; use the theoretical null");
  const Eigen::Vector3d coef = normal_matrix.ldlt().solve(rhs);
  if (!coef.allFinite() || !(coef[2] < 0.0))
    throw empirical_null_failure("central log-density is not concave; use the theoretical null");
  const double sigma0 = std::sqrt(-1.0 / (2.0 * coef[2]));
  const double delta0 = -coef[1] / (2.0 * coef[2]);
  return NullComponent::empirical(delta0, sigma0);
}

}  // namespace twogroups
