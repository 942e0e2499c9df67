#pragma once

#include <cmath>
#include <numbers>

#include <boost/math/distributions/normal.hpp>

namespace twogroups::normal {

inline double pdf(double x, double mean = 0.0, double variance = 1.0) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / variance) / std::sqrt(2.0 * std::numbers::pi * variance);
}

inline double log_pdf(double x, double mean = 0.0, double variance = 1.0) {
  const double d = x - mean;
  return -0.5 * d * d / variance - 0.5 * std::log(2.0 * std::numbers::pi * variance);
}

// P(X <= x), accurate in the far lower tail.
inline double cdf(double x, double mean = 0.0, double variance = 1.0) {
  return 0.5 * std::erfc(-(x - mean) / std::sqrt(2.0 * variance));
}

// P(X > x), accurate in the far upper tail.
inline double sf(double x, double mean = 0.0, double variance = 1.0) {
  return 0.5 * std::erfc((x - mean) / std::sqrt(2.0 * variance));
}

// Standard normal quantile.
inline double quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>{}, p);
}

// Standard normal upper-tail quantile: x with P(X > x) = q.
inline double upper_quantile(double q) {
  return boost::math::quantile(boost::math::complement(boost::math::normal_distribution<double>{}, q));
}

// Two-sided critical value for a central interval of the given coverage.
inline double critical_value(double nominal) { return upper_quantile(0.5 * (1.0 - nominal)); }

}  // namespace twogroups::normal
