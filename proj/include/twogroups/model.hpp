#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "twogroups/error.hpp"
#include "twogroups/normal.hpp"
#include "twogroups/random.hpp"

namespace twogroups {

enum class NullKind { theoretical, empirical };

// Null density N(delta0, sigma0^2 * V) for a unit with sampling variance V.
struct NullComponent {
  double delta0 = 0.0;
  double sigma0 = 1.0;
  NullKind kind = NullKind::theoretical;

  static NullComponent theoretical() { return {}; }
  static NullComponent empirical(double delta0, double sigma0) {
    NullComponent n{delta0, sigma0, NullKind::empirical};
    n.validate();
    return n;
  }

  void validate() const {
    if (!std::isfinite(delta0) || !std::isfinite(sigma0) || sigma0 <= 0.0)
      throw invalid_input("null component needs finite delta0 and sigma0 > 0");
    if (kind == NullKind::theoretical && (delta0 != 0.0 || sigma0 != 1.0))
      throw invalid_input("theoretical null must be N(0,1)");
  }

  double density(double z, double sampling_variance) const {
    return normal::pdf(z, delta0, sigma0 * sigma0 * sampling_variance);
  }
  double log_density(double z, double sampling_variance) const {
    return normal::log_pdf(z, delta0, sigma0 * sigma0 * sampling_variance);
  }
  double cdf(double z, double sampling_variance) const {
    return normal::cdf(z, delta0, sigma0 * sigma0 * sampling_variance);
  }
  double sf(double z, double sampling_variance) const {
    return normal::sf(z, delta0, sigma0 * sigma0 * sampling_variance);
  }

  friend bool operator==(const NullComponent&, const NullComponent&) = default;
};

struct NormalMixing {
  double mean = 0.0;
  double variance = 1.0;
  friend bool operator==(const NormalMixing&, const NormalMixing&) = default;
};

struct GridMixing {
  std::vector<double> support;
  std::vector<double> weights;
  friend bool operator==(const GridMixing&, const GridMixing&) = default;
};

// Distribution g of the non-null effects: a normal density or a discrete grid.
class MixingDistribution {
public:
  static MixingDistribution normal(double mean, double variance) {
    if (!std::isfinite(mean) || !std::isfinite(variance) || variance <= 0.0)
      throw invalid_input("normal mixing distribution needs finite mean and variance > 0");
    return MixingDistribution(NormalMixing{mean, variance});
  }

  static MixingDistribution grid(std::vector<double> support, std::vector<double> weights) {
    if (support.empty() || support.size() != weights.size())
      throw invalid_input("grid mixing distribution needs equal-length nonempty support and weights");
    double total = 0.0;
    for (std::size_t j = 0; j < support.size(); ++j) {
      if (!std::isfinite(support[j]) || !std::isfinite(weights[j]) || weights[j] < 0.0)
        throw invalid_input("grid support must be finite and weights nonnegative");
      if (j > 0 && !(support[j] > support[j - 1]))
        throw invalid_input("grid support points must be strictly increasing");
      total += weights[j];
    }
    if (std::abs(total - 1.0) > 1e-12) throw invalid_input("grid weights must sum to 1");
    return MixingDistribution(GridMixing{std::move(support), std::move(weights)});
  }

  bool is_normal() const { return std::holds_alternative<NormalMixing>(rep_); }
  const NormalMixing* as_normal() const { return std::get_if<NormalMixing>(&rep_); }
  const GridMixing* as_grid() const { return std::get_if<GridMixing>(&rep_); }

  double mean() const {
    if (auto n = as_normal()) return n->mean;
    const auto& g = std::get<GridMixing>(rep_);
    double m = 0.0;
    for (std::size_t j = 0; j < g.support.size(); ++j) m += g.weights[j] * g.support[j];
    return m;
  }

  double variance() const {
    if (auto n = as_normal()) return n->variance;
    const auto& g = std::get<GridMixing>(rep_);
    const double m = mean();
    double v = 0.0;
    for (std::size_t j = 0; j < g.support.size(); ++j)
      v += g.weights[j] * (g.support[j] - m) * (g.support[j] - m);
    return v;
  }

  // Interval holding essentially all of g's mass (normal: mean +- 12 sd).
  std::pair<double, double> effective_range() const {
    if (auto n = as_normal()) {
      const double sd = std::sqrt(n->variance);
      return {n->mean - 12.0 * sd, n->mean + 12.0 * sd};
    }
    const auto& g = std::get<GridMixing>(rep_);
    return {g.support.front(), g.support.back()};
  }

  friend bool operator==(const MixingDistribution&, const MixingDistribution&) = default;

private:
  explicit MixingDistribution(std::variant<NormalMixing, GridMixing> rep) : rep_(std::move(rep)) {}
  std::variant<NormalMixing, GridMixing> rep_;
};

// The two-groups generative model: mu = 0 with probability p0, otherwise mu ~ g;
// z | mu ~ N(mu, V) under H1 and z ~ null component under H0.
class TwoGroupsModel {
public:
  TwoGroupsModel(double p0, NullComponent null, MixingDistribution g, double default_sampling_variance = 1.0)
      : p0_(p0), null_(null), g_(std::move(g)), default_variance_(default_sampling_variance) {
    if (!(p0 >= 0.0 && p0 <= 1.0)) throw invalid_input("p0 must lie in [0,1]");
    null_.validate();
    if (!std::isfinite(default_sampling_variance) || default_sampling_variance <= 0.0)
      throw invalid_input("default sampling variance must be > 0");
  }

  double p0() const { return p0_; }
  double p1() const { return 1.0 - p0_; }
  const NullComponent& null() const { return null_; }
  const MixingDistribution& g() const { return g_; }
  double default_sampling_variance() const { return default_variance_; }

  friend bool operator==(const TwoGroupsModel&, const TwoGroupsModel&) = default;

private:
  double p0_;
  NullComponent null_;
  MixingDistribution g_;
  double default_variance_;
};

namespace detail {

inline void check_point(double z, double sampling_variance) {
  if (!std::isfinite(z)) throw invalid_input("z must be finite");
  if (!std::isfinite(sampling_variance) || sampling_variance <= 0.0)
    throw invalid_input("sampling variance must be finite and > 0");
}

}  // namespace detail

inline double null_density(const TwoGroupsModel& model, double z, double sampling_variance) {
  detail::check_point(z, sampling_variance);
  return model.null().density(z, sampling_variance);
}

// f1(z) = integral of phi_V(z - mu) g(dmu).
inline double alt_marginal_density(const TwoGroupsModel& model, double z, double sampling_variance) {
  detail::check_point(z, sampling_variance);
  if (auto n = model.g().as_normal()) return normal::pdf(z, n->mean, sampling_variance + n->variance);
  const auto& g = *model.g().as_grid();
  double f = 0.0;
  for (std::size_t j = 0; j < g.support.size(); ++j)
    f += g.weights[j] * normal::pdf(z, g.support[j], sampling_variance);
  return f;
}

inline double marginal_density(const TwoGroupsModel& model, double z, double sampling_variance) {
  return model.p0() * null_density(model, z, sampling_variance) +
         model.p1() * alt_marginal_density(model, z, sampling_variance);
}

// 1 - F1(z).
inline double alt_upper_tail(const TwoGroupsModel& model, double z, double sampling_variance) {
  detail::check_point(z, sampling_variance);
  if (auto n = model.g().as_normal()) return normal::sf(z, n->mean, sampling_variance + n->variance);
  const auto& g = *model.g().as_grid();
  double s = 0.0;
  for (std::size_t j = 0; j < g.support.size(); ++j)
    s += g.weights[j] * normal::sf(z, g.support[j], sampling_variance);
  return s;
}

// F1(z).
inline double alt_lower_tail(const TwoGroupsModel& model, double z, double sampling_variance) {
  detail::check_point(z, sampling_variance);
  if (auto n = model.g().as_normal()) return normal::cdf(z, n->mean, sampling_variance + n->variance);
  const auto& g = *model.g().as_grid();
  double s = 0.0;
  for (std::size_t j = 0; j < g.support.size(); ++j)
    s += g.weights[j] * normal::cdf(z, g.support[j], sampling_variance);
  return s;
}

// P(Z >= z) under the marginal.
inline double marginal_upper_tail(const TwoGroupsModel& model, double z, double sampling_variance) {
  detail::check_point(z, sampling_variance);
  return model.p0() * model.null().sf(z, sampling_variance) +
         model.p1() * alt_upper_tail(model, z, sampling_variance);
}

// P(Z <= z) under the marginal.
inline double marginal_lower_tail(const TwoGroupsModel& model, double z, double sampling_variance) {
  detail::check_point(z, sampling_variance);
  return model.p0() * model.null().cdf(z, sampling_variance) +
         model.p1() * alt_lower_tail(model, z, sampling_variance);
}

struct Unit {
  std::string id;
  double z = 0.0;
  std::optional<double> sampling_variance;
  std::optional<long> sample_size;
};

// Observed units. A unit carries either its own sampling variance, a sample size n
// (variance sigma^2 / n for a panel-level sigma^2), or neither (model default).
class ZPanel {
public:
  ZPanel() = default;
  explicit ZPanel(std::vector<Unit> units) : units_(std::move(units)) {
    std::unordered_set<std::string> seen;
    for (const auto& u : units_) {
      if (!seen.insert(u.id).second) throw invalid_input("duplicate unit id '" + u.id + "'");
      if (!std::isfinite(u.z)) throw invalid_input("unit '" + u.id + "' has non-finite z");
      if (u.sampling_variance && u.sample_size)
        throw invalid_input("unit '" + u.id + "' has both a variance and a sample size");
      if (u.sampling_variance && !(std::isfinite(*u.sampling_variance) && *u.sampling_variance > 0.0))
        throw invalid_input("unit '" + u.id + "' needs a positive sampling variance");
      if (u.sample_size && *u.sample_size <= 0)
        throw invalid_input("unit '" + u.id + "' needs a positive sample size");
    }
  }

  std::size_t size() const { return units_.size(); }
  bool empty() const { return units_.empty(); }
  const std::vector<Unit>& units() const { return units_; }
  const Unit& operator[](std::size_t i) const { return units_[i]; }

  // sigma2 is the per-observation variance for sample-size units and the default otherwise.
  double variance(std::size_t i, double sigma2) const {
    const auto& u = units_[i];
    if (u.sampling_variance) return *u.sampling_variance;
    if (u.sample_size) return sigma2 / static_cast<double>(*u.sample_size);
    return sigma2;
  }

  std::vector<double> variances(double sigma2) const {
    std::vector<double> v(units_.size());
    for (std::size_t i = 0; i < units_.size(); ++i) v[i] = variance(i, sigma2);
    return v;
  }

  std::vector<double> z_values() const {
    std::vector<double> z(units_.size());
    for (std::size_t i = 0; i < units_.size(); ++i) z[i] = units_[i].z;
    return z;
  }

private:
  std::vector<Unit> units_;
};

struct SampledPanel {
  ZPanel panel;
  std::vector<double> effects;  // true mu_i
};

inline std::string unit_id(std::size_t index, std::size_t count) {
  std::string digits = std::to_string(index + 1);
  const std::size_t width = std::to_string(count).size();
  return "u" + std::string(width - digits.size(), '0') + digits;
}

// Draws N units from the model. `variances` is empty (model default), a single value,
// or one value per unit; explicit variances are recorded on the units. Each unit uses
// its own substream of `seed`.
inline SampledPanel sample_panel(const TwoGroupsModel& model, std::size_t n, std::span<const double> variances,
                                 std::uint64_t seed) {
  if (n == 0) throw invalid_input("sample_panel needs N >= 1");
  if (variances.size() > 1 && variances.size() != n)
    throw invalid_input("variances must be empty, a scalar, or one per unit");
  for (double v : variances)
    if (!std::isfinite(v) || v <= 0.0) throw invalid_input("sampling variances must be > 0");

  std::vector<double> cumulative;
  if (auto g = model.g().as_grid()) {
    cumulative.resize(g->weights.size());
    double c = 0.0;
    for (std::size_t j = 0; j < g->weights.size(); ++j) cumulative[j] = (c += g->weights[j]);
  }

  SampledPanel out;
  std::vector<Unit> units(n);
  out.effects.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = variances.empty() ? model.default_sampling_variance()
                                       : variances[variances.size() == 1 ? 0 : i];
    SplitMix64 engine(derive_seed(seed, i));
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const bool is_null = uniform(engine) < model.p0();
    double mu = 0.0;
    double z = 0.0;
    if (is_null) {
      const auto& nc = model.null();
      z = std::normal_distribution<double>(nc.delta0, nc.sigma0 * std::sqrt(v))(engine);
    } else {
      if (auto g = model.g().as_normal()) {
        mu = std::normal_distribution<double>(g->mean, std::sqrt(g->variance))(engine);
      } else {
        const double u = uniform(engine) * cumulative.back();
        const auto pos = std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin();
        const auto j = std::min<std::size_t>(static_cast<std::size_t>(pos), cumulative.size() - 1);
        mu = model.g().as_grid()->support[j];
      }
      z = std::normal_distribution<double>(mu, std::sqrt(v))(engine);
    }
    units[i].id = unit_id(i, n);
    units[i].z = z;
    if (!variances.empty()) units[i].sampling_variance = v;
    out.effects[i] = mu;
  }
  out.panel = ZPanel(std::move(units));
  return out;
}

}  // namespace twogroups
