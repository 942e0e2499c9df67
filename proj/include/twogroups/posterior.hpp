#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twogroups/error.hpp"
#include "twogroups/model.hpp"
#include "twogroups/normal.hpp"
#include "twogroups/parallel.hpp"
#include "twogroups/quadrature.hpp"

namespace twogroups {

enum class Tail { lower, upper, two_sided };

namespace detail {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

inline double log_sum_exp(std::span<const double> terms) {
  double top = neg_inf;
  for (double t : terms) top = std::max(top, t);
  if (top == neg_inf) return neg_inf;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - top);
  return top + std::log(s);
}

inline double log_alt_density(const TwoGroupsModel& model, double z, double v) {
  if (auto n = model.g().as_normal()) return normal::log_pdf(z, n->mean, v + n->variance);
  const auto& g = *model.g().as_grid();
  std::vector<double> terms(g.support.size());
  for (std::size_t j = 0; j < terms.size(); ++j)
    terms[j] = g.weights[j] > 0.0 ? std::log(g.weights[j]) + normal::log_pdf(z, g.support[j], v) : neg_inf;
  return log_sum_exp(terms);
}

// log(p0 f0(z)) and log(p1 f1(z)).
struct GroupLogMass {
  double null_part;
  double alt_part;
};

inline GroupLogMass group_log_mass(const TwoGroupsModel& model, double z, double v) {
  check_point(z, v);
  GroupLogMass m{neg_inf, neg_inf};
  if (model.p0() > 0.0) m.null_part = std::log(model.p0()) + model.null().log_density(z, v);
  if (model.p1() > 0.0) m.alt_part = std::log(model.p1()) + log_alt_density(model, z, v);
  if (std::isnan(m.null_part) || std::isnan(m.alt_part) || (m.null_part == neg_inf && m.alt_part == neg_inf))
    throw degenerate_point("marginal density vanishes at z = " + std::to_string(z), z);
  return m;
}

// 1 / (1 + exp(-x)) without overflow.
inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// (fdr, 1 - fdr), each computed directly so neither loses precision near 0.
inline std::pair<double, double> fdr_pair(const TwoGroupsModel& model, double z, double v) {
  const auto m = group_log_mass(model, z, v);
  if (m.null_part == neg_inf) return {0.0, 1.0};
  if (m.alt_part == neg_inf) return {1.0, 0.0};
  return {logistic(m.null_part - m.alt_part), logistic(m.alt_part - m.null_part)};
}

}  // namespace detail

// fdr(z) = p0 f0(z) / (p0 f0(z) + p1 f1(z)).
inline double local_fdr(const TwoGroupsModel& model, double z, double sampling_variance) {
  return detail::fdr_pair(model, z, sampling_variance).first;
}

// Bayesian tail-area Fdr: P(H0 | Z <= z) for the lower tail, P(H0 | Z >= z) for the upper.
inline double tail_fdr(const TwoGroupsModel& model, double z, double sampling_variance, Tail tail) {
  detail::check_point(z, sampling_variance);
  double null_mass = 0.0;
  double total = 0.0;
  switch (tail) {
    case Tail::lower:
      null_mass = model.p0() * model.null().cdf(z, sampling_variance);
      total = marginal_lower_tail(model, z, sampling_variance);
      break;
    case Tail::upper:
      null_mass = model.p0() * model.null().sf(z, sampling_variance);
      total = marginal_upper_tail(model, z, sampling_variance);
      break;
    case Tail::two_sided:
      throw invalid_input("tail Fdr is defined for the lower or upper tail only");
  }
  if (!(total > 0.0)) throw degenerate_point("tail mass vanishes at z = " + std::to_string(z), z);
  return std::clamp(null_mass / total, 0.0, 1.0);
}

// h(mu | z): the posterior of mu given z under H1. Normal g gives the conjugate
// normal; grid g gives reweighted atoms.
class HPosterior {
public:
  static HPosterior normal(double mean, double variance) {
    HPosterior h;
    h.mean_ = mean;
    h.variance_ = variance;
    return h;
  }

  static HPosterior atoms(std::vector<double> support, std::vector<double> weights) {
    HPosterior h;
    h.support_ = std::move(support);
    h.weights_ = std::move(weights);
    double m = 0.0;
    for (std::size_t j = 0; j < h.support_.size(); ++j) m += h.weights_[j] * h.support_[j];
    double v = 0.0;
    for (std::size_t j = 0; j < h.support_.size(); ++j)
      v += h.weights_[j] * (h.support_[j] - m) * (h.support_[j] - m);
    h.mean_ = m;
    h.variance_ = v;
    return h;
  }

  bool is_atomic() const { return !support_.empty(); }
  double mean() const { return mean_; }
  double variance() const { return variance_; }
  const std::vector<double>& support() const { return support_; }
  const std::vector<double>& weights() const { return weights_; }

  // Density for the normal form; 0 for atoms (use support()/weights()).
  double density(double mu) const {
    if (is_atomic()) return 0.0;
    return normal::pdf(mu, mean_, variance_);
  }

  // P_h(mu > k), strict.
  double prob_greater(double k) const {
    if (!is_atomic()) return variance_ > 0.0 ? normal::sf(k, mean_, variance_) : (mean_ > k ? 1.0 : 0.0);
    double p = 0.0;
    for (std::size_t j = 0; j < support_.size(); ++j)
      if (support_[j] > k) p += weights_[j];
    return std::min(p, 1.0);
  }

  // P_h(mu < k), strict.
  double prob_less(double k) const {
    if (!is_atomic()) return variance_ > 0.0 ? normal::cdf(k, mean_, variance_) : (mean_ < k ? 1.0 : 0.0);
    double p = 0.0;
    for (std::size_t j = 0; j < support_.size(); ++j)
      if (support_[j] < k) p += weights_[j];
    return std::min(p, 1.0);
  }

private:
  double mean_ = 0.0;
  double variance_ = 0.0;
  std::vector<double> support_;
  std::vector<double> weights_;
};

inline HPosterior h_posterior(const TwoGroupsModel& model, double z, double sampling_variance) {
  detail::check_point(z, sampling_variance);
  if (auto n = model.g().as_normal()) {
    const double shrink = sampling_variance / (sampling_variance + n->variance);
    return HPosterior::normal((1.0 - shrink) * z + shrink * n->mean, sampling_variance * (1.0 - shrink));
  }
  const auto& g = *model.g().as_grid();
  std::vector<double> logw(g.support.size());
  for (std::size_t j = 0; j < logw.size(); ++j)
    logw[j] = g.weights[j] > 0.0 ? std::log(g.weights[j]) + normal::log_pdf(z, g.support[j], sampling_variance)
                                 : detail::neg_inf;
  const double total = detail::log_sum_exp(logw);
  if (!std::isfinite(total)) throw degenerate_point("f1 vanishes at z = " + std::to_string(z), z);
  std::vector<double> w(logw.size());
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = std::exp(logw[j] - total);
  return HPosterior::atoms(g.support, std::move(w));
}

// Exceedance from the atom-plus-continuous posterior
//   p(mu | z) = fdr(z) delta_0(mu) + (1 - fdr(z)) h(mu | z).
// upper: P(mu > k | z); lower: P(mu < k | z); two_sided: P(|mu| > k | z).
inline double exceedance_probability(const TwoGroupsModel& model, double z, double sampling_variance, double k,
                                     Tail tail = Tail::upper) {
  if (std::isnan(k)) throw invalid_input("threshold k must not be NaN");
  const auto [fdr, alt] = detail::fdr_pair(model, z, sampling_variance);
  if (k == std::numeric_limits<double>::infinity()) return tail == Tail::lower ? 1.0 : 0.0;
  if (k == -std::numeric_limits<double>::infinity()) return tail == Tail::lower ? 0.0 : 1.0;
  const HPosterior h = h_posterior(model, z, sampling_variance);
  double p = 0.0;
  switch (tail) {
    case Tail::upper:
      p = alt * h.prob_greater(k) + (k < 0.0 ? fdr : 0.0);
      break;
    case Tail::lower:
      p = alt * h.prob_less(k) + (k > 0.0 ? fdr : 0.0);
      break;
    case Tail::two_sided:
      if (k < 0.0) return 1.0;
      p = alt * (h.prob_greater(k) + h.prob_less(-k));
      break;
  }
  return std::clamp(p, 0.0, 1.0);
}

struct PosteriorSummary {
  std::string id;
  double z = 0.0;
  double sampling_variance = 1.0;
  double fdr = 0.0;
  std::map<double, double> exceedance;  // k -> P(mu beyond k | z)
  double h_mean = 0.0;
  double h_variance = 0.0;
};

inline PosteriorSummary summarize_unit(const TwoGroupsModel& model, std::string id, double z, double sampling_variance,
                                       std::span<const double> ks, Tail tail = Tail::upper) {
  PosteriorSummary s;
  s.id = std::move(id);
  s.z = z;
  s.sampling_variance = sampling_variance;
  s.fdr = local_fdr(model, z, sampling_variance);
  for (double k : ks) s.exceedance[k] = exceedance_probability(model, z, sampling_variance, k, tail);
  const HPosterior h = h_posterior(model, z, sampling_variance);
  s.h_mean = h.mean();
  s.h_variance = h.variance();
  return s;
}

struct SelectionReport {
  double threshold_z = 0.0;
  double k = 0.0;  // ranking threshold (first of ks)
  std::vector<double> ks;
  Tail tail = Tail::upper;
  std::vector<PosteriorSummary> selected;  // sorted by exceedance at k, descending
  std::optional<double> averaged_exceedance;
  double expected_true_exceedances = 0.0;
  std::map<double, double> averaged_by_k;

  double exceedance(std::size_t i) const { return selected[i].exceedance.at(k); }
};

inline bool passes_threshold(double z, double threshold, Tail tail) {
  switch (tail) {
    case Tail::upper: return z >= threshold;
    case Tail::lower: return z <= threshold;
    case Tail::two_sided: return std::abs(z) >= std::abs(threshold);
  }
  return false;
}

// Selects the units beyond threshold_z, ranks them by exceedance at ks[0] (ties: |z|
// descending, then id ascending) and averages the exceedances over the selection.
inline SelectionReport select_and_rank(const TwoGroupsModel& model, const ZPanel& panel, double threshold_z,
                                       std::span<const double> ks, Tail tail = Tail::upper, unsigned threads = 1) {
  if (panel.empty()) throw invalid_input("panel is empty");
  if (ks.empty()) throw invalid_input("at least one k is required");
  if (!std::isfinite(threshold_z)) throw invalid_input("threshold must be finite");

  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < panel.size(); ++i)
    if (passes_threshold(panel[i].z, threshold_z, tail)) chosen.push_back(i);

  SelectionReport report;
  report.threshold_z = threshold_z;
  report.k = ks.front();
  report.ks.assign(ks.begin(), ks.end());
  report.tail = tail;
  report.selected.resize(chosen.size());
  const double sigma2 = model.default_sampling_variance();
  parallel_for(chosen.size(), threads, [&](std::size_t s) {
    const auto& u = panel[chosen[s]];
    report.selected[s] = summarize_unit(model, u.id, u.z, panel.variance(chosen[s], sigma2), ks, tail);
  });

  const double k = report.k;
  std::sort(report.selected.begin(), report.selected.end(), [k](const PosteriorSummary& a, const PosteriorSummary& b) {
    const double ea = a.exceedance.at(k);
    const double eb = b.exceedance.at(k);
    if (ea != eb) return ea > eb;
    if (std::abs(a.z) != std::abs(b.z)) return std::abs(a.z) > std::abs(b.z);
    return a.id < b.id;
  });

  if (!report.selected.empty()) {
    for (double kk : report.ks) {
      double sum = 0.0;
      for (const auto& s : report.selected) sum += s.exceedance.at(kk);
      report.averaged_by_k[kk] = sum / static_cast<double>(report.selected.size());
    }
    report.averaged_exceedance = report.averaged_by_k.at(k);
    report.expected_true_exceedances = *report.averaged_exceedance * static_cast<double>(report.selected.size());
  }
  return report;
}

inline SelectionReport select_and_rank(const TwoGroupsModel& model, const ZPanel& panel, double threshold_z, double k,
                                       Tail tail = Tail::upper, unsigned threads = 1) {
  const double ks[] = {k};
  return select_and_rank(model, panel, threshold_z, ks, tail, threads);
}

struct OrderSwap {
  std::size_t first = 0;  // unit index ranked higher at k_a
  std::size_t second = 0;
  double k_a = 0.0;
  double k_b = 0.0;
};

struct KSensitivity {
  std::vector<double> ks;
  std::vector<std::vector<std::size_t>> rankings;  // unit indices, best first, one list per k
  bool any_order_change = false;
  std::optional<OrderSwap> example;
};

// Compares exceedance rankings across ks. An order change is a pair of units whose
// exceedances are strictly ordered one way at one k and the other way at another.
inline KSensitivity ranking_k_sensitivity(const TwoGroupsModel& model, const ZPanel& panel, std::span<const double> ks,
                                          Tail tail = Tail::upper) {
  std::vector<double> distinct(ks.begin(), ks.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) throw invalid_input("ranking_k_sensitivity needs at least two distinct k values");

  const std::size_t n = panel.size();
  const double sigma2 = model.default_sampling_variance();
  std::vector<std::vector<double>> exc(distinct.size(), std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double v = panel.variance(i, sigma2);
    for (std::size_t a = 0; a < distinct.size(); ++a)
      exc[a][i] = exceedance_probability(model, panel[i].z, v, distinct[a], tail);
  }

  KSensitivity out;
  out.ks = distinct;
  for (std::size_t a = 0; a < distinct.size(); ++a) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    const auto& e = exc[a];
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      if (e[x] != e[y]) return e[x] > e[y];
      if (std::abs(panel[x].z) != std::abs(panel[y].z)) return std::abs(panel[x].z) > std::abs(panel[y].z);
      return panel[x].id < panel[y].id;
    });
    out.rankings.push_back(std::move(order));
  }

  constexpr double margin = 1e-12;
  for (std::size_t a = 0; a < distinct.size() && !out.any_order_change; ++a)
    for (std::size_t b = a + 1; b < distinct.size() && !out.any_order_change; ++b)
      for (std::size_t i = 0; i < n && !out.any_order_change; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          if (exc[a][i] - exc[a][j] > margin && exc[b][j] - exc[b][i] > margin) {
            out.any_order_change = true;
            out.example = OrderSwap{i, j, distinct[a], distinct[b]};
            break;
          }
        }
  return out;
}

// Population value of E[P(mu > k | Z) | Z >= threshold] for units of variance V,
// the quantity a selection report's averaged exceedance estimates.
inline double population_averaged_exceedance(const TwoGroupsModel& model, double threshold, double k,
                                             double sampling_variance) {
  detail::check_point(threshold, sampling_variance);
  const double tail_mass = marginal_upper_tail(model, threshold, sampling_variance);
  if (!(tail_mass > 0.0)) throw degenerate_point("no mass beyond threshold", threshold);
  const auto [g_lo, g_hi] = model.g().effective_range();
  const double spread = std::sqrt(sampling_variance + model.g().variance()) +
                        model.null().sigma0 * std::sqrt(sampling_variance);
  const double hi = std::max({threshold, g_hi, model.null().delta0}) + 40.0 * spread;
  auto integrand = [&](double z) {
    double value = 0.0;
    if (model.p1() > 0.0) {
      const HPosterior h = h_posterior(model, z, sampling_variance);
      value += model.p1() * alt_marginal_density(model, z, sampling_variance) * h.prob_greater(k);
    }
    if (k < 0.0) value += model.p0() * model.null().density(z, sampling_variance);
    return value;
  };
  const double mid = std::min(hi, threshold + 8.0 * spread);
  const double numerator = integrate(integrand, threshold, mid) + integrate(integrand, mid, hi);
  return std::clamp(numerator / tail_mass, 0.0, 1.0);
}

// E(fdr(Z) | Z <= z) by quadrature of fdr(t) f(t) over (-inf, z]; equals the lower-tail Fdr.
inline double averaged_local_fdr_below(const TwoGroupsModel& model, double z, double sampling_variance) {
  detail::check_point(z, sampling_variance);
  const double mass = marginal_lower_tail(model, z, sampling_variance);
  if (!(mass > 0.0)) throw degenerate_point("no mass below z", z);
  const auto [g_lo, g_hi] = model.g().effective_range();
  const double spread = std::sqrt(sampling_variance + model.g().variance()) +
                        model.null().sigma0 * std::sqrt(sampling_variance);
  const double lo = std::min({z, g_lo, model.null().delta0}) - 40.0 * spread;
  auto integrand = [&](double t) {
    return local_fdr(model, t, sampling_variance) * marginal_density(model, t, sampling_variance);
  };
  const double mid = std::max(lo, z - 8.0 * spread);
  return (integrate(integrand, lo, mid) + integrate(integrand, mid, z)) / mass;
}

}  // namespace twogroups
