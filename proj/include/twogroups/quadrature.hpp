#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace twogroups {

// Reference integrator: adaptive 61-point Gauss-Kronrod on a finite interval.
template <typename F>
double integrate(F&& f, double a, double b, double tolerance = 1e-10, unsigned max_depth = 20) {
  double error = 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, max_depth, tolerance,
                                                                        &error);
}

}  // namespace twogroups
