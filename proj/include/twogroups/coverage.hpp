#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "twogroups/error.hpp"
#include "twogroups/model.hpp"
#include "twogroups/normal.hpp"
#include "twogroups/parallel.hpp"
#include "twogroups/random.hpp"

namespace twogroups {

enum class IntervalKind {
  raw,              // z_i +- q sqrt(V_i)
  plugin_shrunken,  // shrunken center, posterior width given the plug-in A
  eb_adjusted,      // shrunken center, width inflated for estimated shrinkage
};

inline std::string to_string(IntervalKind kind) {
  switch (kind) {
    case IntervalKind::raw: return "raw";
    case IntervalKind::plugin_shrunken: return "plugin_shrunken";
    case IntervalKind::eb_adjusted: return "eb_adjusted";
  }
  return "unknown";
}

inline IntervalKind interval_kind_from_string(const std::string& s) {
  if (s == "raw") return IntervalKind::raw;
  if (s == "plugin_shrunken") return IntervalKind::plugin_shrunken;
  if (s == "eb_adjusted") return IntervalKind::eb_adjusted;
  throw invalid_input("unknown interval method '" + s + "'");
}

struct IntervalMethod {
  IntervalKind kind = IntervalKind::raw;
  double nominal = 0.95;

  double critical_value() const {
    if (!(nominal > 0.0 && nominal < 1.0)) throw invalid_input("nominal level must lie in (0,1)");
    return normal::critical_value(nominal);
  }
};

// Fitted normal-normal hyperparameters for a panel: mu_i ~ N(center, a_hat).
struct ShrinkageState {
  double center = 0.0;
  double a_hat = 0.0;           // between-unit variance A; +inf disables shrinkage
  double precision_sum = 0.0;   // sum_j 1 / (V_j + a_hat)
  std::size_t units = 0;
  bool boundary = false;        // a_hat truncated at 0
};

namespace detail {

inline double precision_weighted_center(std::span<const double> z, std::span<const double> v, double a,
                                        double* precision_sum) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double w = 1.0 / (v[i] + a);
    num += w * z[i];
    den += w;
  }
  *precision_sum = den;
  return num / den;
}

inline void check_panel_arrays(std::span<const double> z, std::span<const double> v) {
  if (z.size() != v.size()) throw invalid_input("z and variance arrays differ in length");
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!std::isfinite(z[i])) throw invalid_input("z must be finite");
    if (!(v[i] > 0.0) || !std::isfinite(v[i])) throw invalid_input("sampling variances must be > 0");
  }
}

}  // namespace detail

// raw: nothing to fit. plugin_shrunken: maximum-likelihood A (truncated at 0).
// eb_adjusted: truncated method of moments, A = max(0, sum (z - zbar)^2 / (N - 1) - mean V).
inline ShrinkageState fit_shrinkage(IntervalKind kind, std::span<const double> z, std::span<const double> v) {
  detail::check_panel_arrays(z, v);
  const std::size_t n = z.size();
  if (n < 2) throw insufficient_data("shrinkage needs at least 2 units");
  if (kind == IntervalKind::eb_adjusted && n < 5)
    throw insufficient_data("eb_adjusted intervals need at least 5 groups");
  ShrinkageState s;
  s.units = n;
  if (kind == IntervalKind::raw) {
    s.a_hat = std::numeric_limits<double>::infinity();
    s.center = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(n);
    return s;
  }
  const bool equal = std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  const double zbar = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : z) ss += (x - zbar) * (x - zbar);

  double a = 0.0;
  if (kind == IntervalKind::eb_adjusted) {
    const double vbar = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
    a = std::max(0.0, ss / static_cast<double>(n - 1) - vbar);
  } else if (equal) {
    a = std::max(0.0, ss / static_cast<double>(n) - v.front());
  } else {
    // Scoring fixed point for the ML estimate of A.
    a = std::max(0.0, ss / static_cast<double>(n - 1) - std::accumulate(v.begin(), v.end(), 0.0) / n);
    for (int it = 0; it < 500; ++it) {
      double p = 0.0;
      const double m = detail::precision_weighted_center(z, v, a, &p);
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = 1.0 / (v[i] + a);
        num += w * w * ((z[i] - m) * (z[i] - m) - v[i]);
        den += w * w;
      }
      const double next = std::max(0.0, num / den);
      const bool done = std::abs(next - a) <= 1e-12 * std::max(1.0, a);
      a = next;
      if (done) break;
    }
  }
  s.a_hat = a;
  s.boundary = a == 0.0;
  s.center = detail::precision_weighted_center(z, v, a, &s.precision_sum);
  return s;
}

// Weight on the ensemble center for a unit of variance V.
inline double shrinkage_factor(IntervalKind kind, const ShrinkageState& state, double v) {
  if (kind == IntervalKind::raw || std::isinf(state.a_hat)) return 0.0;
  const double b = v / (v + state.a_hat);
  if (kind == IntervalKind::plugin_shrunken) return b;
  const double n = static_cast<double>(state.units);
  return (n - 3.0) / (n - 1.0) * b;
}

struct Interval {
  double center = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double width() const { return upper - lower; }
};

// Interval variance for one unit:
//   plugin_shrunken: V (1 - B) + B^2 / P
//   eb_adjusted:     V (1 - B) + B b / P + 2 / (N - 3) * B^2 (z - m)^2
// with b = V / (V + A), P = sum_j 1 / (V_j + A), B the kind's shrinkage factor. The
// 1/P terms carry the uncertainty of the estimated center; the last term, for the
// estimated shrinkage, grows with the squared distance from the center, so
// eb_adjusted intervals widen (bow outward) away from it. For equal V this is the
// Morris (1983) parametric EB interval.
inline double interval_variance(IntervalKind kind, const ShrinkageState& state, double z, double v) {
  if (kind == IntervalKind::raw || std::isinf(state.a_hat)) return v;
  const double big_b = shrinkage_factor(kind, state, v);
  const double plain_b = v / (v + state.a_hat);
  double var = v * (1.0 - big_b);
  if (kind == IntervalKind::plugin_shrunken) {
    var += big_b * big_b / state.precision_sum;
  } else {
    const double n = static_cast<double>(state.units);
    const double d = z - state.center;
    var += big_b * plain_b / state.precision_sum + 2.0 / (n - 3.0) * big_b * big_b * d * d;
  }
  return var;
}

inline Interval unit_interval(const IntervalMethod& method, const ShrinkageState& state, double z, double v) {
  const double q = method.critical_value();
  const double b = shrinkage_factor(method.kind, state, v);
  const double center = (1.0 - b) * z + b * state.center;
  const double half = q * std::sqrt(interval_variance(method.kind, state, z, v));
  return {center, center - half, center + half};
}

inline std::vector<Interval> interval_bounds(const IntervalMethod& method, std::span<const double> z,
                                             std::span<const double> v, const ShrinkageState& state) {
  detail::check_panel_arrays(z, v);
  if (method.kind == IntervalKind::eb_adjusted && state.units < 5)
    throw insufficient_data("eb_adjusted intervals need at least 5 groups");
  std::vector<Interval> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = unit_interval(method, state, z[i], v[i]);
  return out;
}

inline std::vector<Interval> interval_bounds(const IntervalMethod& method, const ZPanel& panel,
                                             const ShrinkageState& state, double sigma2 = 1.0) {
  return interval_bounds(method, panel.z_values(), panel.variances(sigma2), state);
}

struct BowingProfile {
  double reference_variance = 1.0;
  std::vector<std::pair<double, double>> points;  // (|z - center|, width), by distance
  double center_width = 0.0;
  double ratio = 1.0;  // max width / center width
};

// Interval width as a function of distance from the fitted center, for a reference unit
// with the panel's mean sampling variance.
inline BowingProfile bowing_profile(const IntervalMethod& method, std::span<const double> z, std::span<const double> v,
                                    const ShrinkageState& state) {
  detail::check_panel_arrays(z, v);
  if (z.empty()) throw invalid_input("bowing profile needs a nonempty panel");
  BowingProfile p;
  p.reference_variance = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  // Widths from the half-width directly, so rounding of the center cannot leak in.
  const double q = method.critical_value();
  auto width_at = [&](double x) {
    return 2.0 * q * std::sqrt(interval_variance(method.kind, state, x, p.reference_variance));
  };
  p.center_width = width_at(state.center);
  double widest = p.center_width;
  for (double x : z) {
    const double d = std::abs(x - state.center);
    const double w = width_at(state.center + d);
    p.points.emplace_back(d, w);
    widest = std::max(widest, w);
  }
  std::sort(p.points.begin(), p.points.end());
  p.ratio = widest / p.center_width;
  return p;
}

struct CoverageStudy {
  TwoGroupsModel generator;
  std::size_t units = 15;
  std::vector<double> variances;  // empty: generator default; one value; or one per unit
  std::vector<IntervalKind> methods{IntervalKind::raw, IntervalKind::plugin_shrunken, IntervalKind::eb_adjusted};
  double nominal = 0.95;
  std::size_t replications = 2000;
};

struct DecileCoverage {
  double variance_low = 0.0;
  double variance_high = 0.0;
  double coverage = 0.0;
};

struct CoverageResult {
  IntervalMethod method;
  std::size_t replications = 0;
  std::size_t units = 0;
  double empirical_coverage = 0.0;  // pooled over units and replications
  double mc_stderr = 0.0;
  double mean_width = 0.0;
  double center_mse = 0.0;          // mean (center - mu)^2, the miscentering diagnostic
  double mean_slope = 1.0;          // mean of 1 - B_i, the fitted shrinkage slope
  double boundary_fraction = 0.0;   // replications with A truncated at 0
  std::vector<double> per_unit_coverage;
  std::vector<DecileCoverage> by_variance_decile;
  std::vector<std::uint32_t> covered_per_replication;
};

// Repeated-sampling coverage. Replication r draws its panel from substream r of `seed`;
// per-replication results are reduced in replication order, so output does not depend
// on the worker count.
inline std::vector<CoverageResult> run_coverage_study(const CoverageStudy& study, std::uint64_t seed,
                                                      unsigned threads = 1) {
  if (study.replications < 100) throw invalid_input("coverage study needs at least 100 replications");
  if (study.units < 5) throw insufficient_data("coverage study needs N >= 5 (eb_adjusted needs 5 groups)");
  if (study.methods.empty()) throw invalid_input("coverage study needs at least one interval method");
  if (!(study.nominal > 0.0 && study.nominal < 1.0)) throw invalid_input("nominal level must lie in (0,1)");

  const std::size_t n = study.units;
  const std::size_t k = study.methods.size();
  const std::size_t reps = study.replications;

  struct Outcome {
    std::vector<std::uint32_t> covered;
    std::vector<double> width_sum, sq_err_sum, slope_sum;
    std::vector<std::uint8_t> boundary;
    std::vector<std::uint8_t> unit_hits;  // k x n
  };
  std::vector<Outcome> outcomes(reps);
  std::vector<double> variances;

  parallel_for(reps, threads, [&](std::size_t r) {
    const SampledPanel draw = sample_panel(study.generator, n, study.variances, derive_seed(seed, r, 0x636f76));
    const std::vector<double> z = draw.panel.z_values();
    const std::vector<double> v = draw.panel.variances(study.generator.default_sampling_variance());
    Outcome o{std::vector<std::uint32_t>(k), std::vector<double>(k), std::vector<double>(k), std::vector<double>(k),
              std::vector<std::uint8_t>(k), std::vector<std::uint8_t>(k * n)};
    for (std::size_t m = 0; m < k; ++m) {
      const IntervalMethod method{study.methods[m], study.nominal};
      const ShrinkageState state = fit_shrinkage(method.kind, z, v);
      o.boundary[m] = state.boundary;
      for (std::size_t i = 0; i < n; ++i) {
        const Interval iv = unit_interval(method, state, z[i], v[i]);
        const bool hit = iv.lower <= draw.effects[i] && draw.effects[i] <= iv.upper;
        o.covered[m] += hit;
        o.unit_hits[m * n + i] = hit;
        o.width_sum[m] += iv.width();
        o.sq_err_sum[m] += (iv.center - draw.effects[i]) * (iv.center - draw.effects[i]);
        o.slope_sum[m] += 1.0 - shrinkage_factor(method.kind, state, v[i]);
      }
    }
    outcomes[r] = std::move(o);
  });

  // Unit variances are fixed across replications.
  const SampledPanel first = sample_panel(study.generator, n, study.variances, derive_seed(seed, 0, 0x636f76));
  variances = first.panel.variances(study.generator.default_sampling_variance());
  std::vector<std::size_t> by_variance(n);
  std::iota(by_variance.begin(), by_variance.end(), 0);
  std::stable_sort(by_variance.begin(), by_variance.end(),
                   [&](std::size_t a, std::size_t b) { return variances[a] < variances[b]; });
  const std::size_t groups = std::min<std::size_t>(10, n);

  std::vector<CoverageResult> results(k);
  const double total = static_cast<double>(reps * n);
  for (std::size_t m = 0; m < k; ++m) {
    CoverageResult& res = results[m];
    res.method = IntervalMethod{study.methods[m], study.nominal};
    res.replications = reps;
    res.units = n;
    std::uint64_t hits = 0;
    double width = 0.0, sq = 0.0, slope = 0.0;
    std::size_t boundary = 0;
    std::vector<std::uint64_t> unit_hits(n, 0);
    res.covered_per_replication.resize(reps);
    for (std::size_t r = 0; r < reps; ++r) {
      const Outcome& o = outcomes[r];
      hits += o.covered[m];
      res.covered_per_replication[r] = o.covered[m];
      width += o.width_sum[m];
      sq += o.sq_err_sum[m];
      slope += o.slope_sum[m];
      boundary += o.boundary[m];
      for (std::size_t i = 0; i < n; ++i) unit_hits[i] += o.unit_hits[m * n + i];
    }
    res.empirical_coverage = static_cast<double>(hits) / total;
    res.mc_stderr = std::sqrt(res.empirical_coverage * (1.0 - res.empirical_coverage) / total);
    res.mean_width = width / total;
    res.center_mse = sq / total;
    res.mean_slope = slope / total;
    res.boundary_fraction = static_cast<double>(boundary) / static_cast<double>(reps);
    res.per_unit_coverage.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      res.per_unit_coverage[i] = static_cast<double>(unit_hits[i]) / static_cast<double>(reps);
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t begin = g * n / groups, end = (g + 1) * n / groups;
      std::uint64_t h = 0;
      for (std::size_t s = begin; s < end; ++s) h += unit_hits[by_variance[s]];
      res.by_variance_decile.push_back({variances[by_variance[begin]], variances[by_variance[end - 1]],
                                        static_cast<double>(h) / static_cast<double>(reps * (end - begin))});
    }
  }
  return results;
}

}  // namespace twogroups
