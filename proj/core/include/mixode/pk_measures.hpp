#pragma once

#include <functional>

#include "mixode/common.hpp"

namespace mixode {

struct PkEstimate {
  double estimate = 0.0;
  double se = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Peak/trough concentration and area under the curve over a reporting window.
struct PkSummary {
  PkEstimate cmax;
  PkEstimate cmin;  // CI lower bound floored at 0
  PkEstimate auc;
  double tmax = 0.0;
  double window_start = 0.0;
  double window_end = 0.0;
};

// Variance of a linear functional of the trajectory; the weight vector is
// aligned with the full grid (zeros outside the window).
using CovProvider = std::function<double(const Vector& grid_weights)>;

// Grid-extremum convention: cmax/cmin are the window extrema over grid
// points, each with the pointwise SE at its arg-extremum; AUC by the
// trapezoid rule, with its SE from the covariance of the weighted sum.
PkSummary summarize(const Vector& grid_times, const Vector& trajectory,
                    const Vector& pointwise_se, const CovProvider& cov,
                    double window_start, double window_end,
                    double level = 0.95);

// Trapezoid quadrature weights for the grid restricted to [start, end]
// (zeros outside).
Vector trapezoid_weights(const Vector& grid_times, double window_start,
                         double window_end);

}  // namespace mixode
