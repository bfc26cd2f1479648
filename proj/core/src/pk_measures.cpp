#include "mixode/pk_measures.hpp"

#include <cmath>

#include "mixode/uncertainty.hpp"

namespace mixode {

Vector trapezoid_weights(const Vector& grid_times, double window_start,
                         double window_end) {
  const Eigen::Index n = grid_times.size();
  Vector w = Vector::Zero(n);
  Eigen::Index ia = -1, ib = -1;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (ia < 0 && grid_times[i] >= window_start - 1e-12) ia = i;
    if (grid_times[i] <= window_end + 1e-12) ib = i;
  }
  if (ia < 0 || ib < ia)
    throw Error(ErrorCode::Range, "reporting window is outside the grid");
  for (Eigen::Index i = ia; i < ib; ++i) {
    const double h = grid_times[i + 1] - grid_times[i];
    w[i] += 0.5 * h;
    w[i + 1] += 0.5 * h;
  }
  return w;
}

PkSummary summarize(const Vector& grid_times, const Vector& trajectory,
                    const Vector& pointwise_se, const CovProvider& cov,
                    double window_start, double window_end, double level) {
  const Eigen::Index n = grid_times.size();
  if (trajectory.size() != n || pointwise_se.size() != n)
    throw Error(ErrorCode::InvalidArgument,
                "trajectory and SE vectors must match the grid");
  if (!(window_end > window_start))
    throw Error(ErrorCode::Range, "reporting window is empty");
  if (window_start < grid_times[0] - 1e-9 ||
      window_end > grid_times[n - 1] + 1e-9)
    throw Error(ErrorCode::Range, "reporting window is outside the grid");

  Eigen::Index ia = -1, ib = -1;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (ia < 0 && grid_times[i] >= window_start - 1e-12) ia = i;
    if (grid_times[i] <= window_end + 1e-12) ib = i;
  }

  PkSummary out;
  out.window_start = window_start;
  out.window_end = window_end;

  Eigen::Index imax = ia, imin = ia;
  for (Eigen::Index i = ia; i <= ib; ++i) {
    if (trajectory[i] > trajectory[imax]) imax = i;
    if (trajectory[i] < trajectory[imin]) imin = i;
  }
  out.tmax = grid_times[imax];
  out.cmax.estimate = trajectory[imax];
  out.cmax.se = pointwise_se[imax];
  std::tie(out.cmax.lo, out.cmax.hi) =
      credible_interval(out.cmax.estimate, out.cmax.se, level);
  out.cmin.estimate = trajectory[imin];
  out.cmin.se = pointwise_se[imin];
  std::tie(out.cmin.lo, out.cmin.hi) = credible_interval(
      out.cmin.estimate, out.cmin.se, level, /*floor_at_zero=*/true);

  const Vector w = trapezoid_weights(grid_times, window_start, window_end);
  out.auc.estimate = w.dot(trajectory);
  out.auc.se = std::sqrt(std::max(cov(w), 0.0));
  std::tie(out.auc.lo, out.auc.hi) =
      credible_interval(out.auc.estimate, out.auc.se, level);
  return out;
}

}  // namespace mixode
