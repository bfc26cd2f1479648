#include "mixode/discretization.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace mixode {

namespace {

constexpr double kLatticeTol = 1e-9;

// Base step of the smallest evenly-spaced superset. Fast path for uniform
// gaps; otherwise the times must sit on a decimal lattice (denominator up to
// 1e6), which covers clinical sampling schedules like half-hour multiples.
double base_step(const std::vector<double>& times) {
  std::vector<double> gaps;
  gaps.reserve(times.size() - 1);
  for (std::size_t i = 1; i < times.size(); ++i)
    gaps.push_back(times[i] - times[i - 1]);
  const double gmin = *std::min_element(gaps.begin(), gaps.end());
  const double gmax = *std::max_element(gaps.begin(), gaps.end());
  if (gmax - gmin <= kLatticeTol * std::max(1.0, gmax)) return gmin;

  const double t0 = times.front();
  for (double scale = 1.0; scale <= 1e6 + 0.5; scale *= 10.0) {
    bool ok = true;
    long long gcd = 0;
    for (double t : times) {
      const double scaled = (t - t0) * scale;
      const double rounded = std::round(scaled);
      if (std::abs(scaled - rounded) > kLatticeTol * scale * std::max(1.0, std::abs(t - t0))) {
        ok = false;
        break;
      }
      gcd = std::gcd(gcd, static_cast<long long>(rounded));
    }
    if (ok && gcd > 0) return static_cast<double>(gcd) / scale;
  }
  throw Error(ErrorCode::InvalidArgument,
              "observation times do not lie on an even base grid within "
              "tolerance 1e-9; consider rounding them");
}

}  // namespace

int Grid::index_of(double t) const {
  auto it = obs_index.find(t);
  if (it == obs_index.end())
    throw Error(ErrorCode::Lookup,
                "time " + std::to_string(t) + " is not an observation time");
  return it->second;
}

Grid build_grid_indexed(const Vector& obs_times, int refinement_level,
                        const Vector& indexed_times,
                        std::optional<Horizon> horizon) {
  if (obs_times.size() == 0)
    throw Error(ErrorCode::InvalidArgument, "observation times are empty");
  if (refinement_level < 0)
    throw Error(ErrorCode::InvalidArgument, "refinement level must be >= 0");
  std::vector<double> times(obs_times.data(), obs_times.data() + obs_times.size());
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1]))
      throw Error(ErrorCode::InvalidArgument,
                  "observation times must be sorted and distinct");

  std::vector<double> pts;
  if (times.size() == 1) {
    pts = times;
  } else {
    const double h = base_step(times);
    const double t0 = times.front();
    const long long count =
        static_cast<long long>(std::round((times.back() - t0) / h));
    pts.reserve(count + 1);
    for (long long i = 0; i <= count; ++i) pts.push_back(t0 + i * h);
    // snap lattice points to the exact observation values
    for (double t : times) {
      const long long idx = static_cast<long long>(std::round((t - t0) / h));
      if (idx < 0 || idx > count ||
          std::abs(pts[idx] - t) > kLatticeTol * std::max(1.0, std::abs(t)))
        throw Error(ErrorCode::InvalidArgument,
                    "observation times do not lie on an even base grid within "
                    "tolerance 1e-9; consider rounding them");
      pts[idx] = t;
    }
    for (int level = 0; level < refinement_level; ++level) {
      std::vector<double> refined;
      refined.reserve(pts.size() * 2);
      for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        refined.push_back(pts[i]);
        refined.push_back(0.5 * (pts[i] + pts[i + 1]));
      }
      refined.push_back(pts.back());
      pts = std::move(refined);
    }
  }

  Grid grid;
  if (horizon) {
    if (!(horizon->step > 0.0))
      throw Error(ErrorCode::InvalidArgument, "prediction step must be > 0");
    const double t_max = pts.back();
    if (horizon->t_end > t_max + kLatticeTol) {
      grid.horizon_start = static_cast<int>(pts.size());
      for (long long i = 1;; ++i) {
        const double t = t_max + i * horizon->step;
        if (t > horizon->t_end + kLatticeTol) break;
        pts.push_back(t);
      }
    }
  }

  // resolve observation indices, re-snapping so the round-trip
  // points[obs_index[t]] == t is exact
  for (Eigen::Index k = 0; k < indexed_times.size(); ++k) {
    const double t = indexed_times[k];
    auto it = std::lower_bound(pts.begin(), pts.end(), t - kLatticeTol);
    if (it == pts.end() || std::abs(*it - t) > kLatticeTol)
      throw Error(ErrorCode::InvalidArgument,
                  "observation time " + std::to_string(t) +
                      " is missing from the constructed grid");
    *it = t;
    grid.obs_index[t] = static_cast<int>(it - pts.begin());
  }
  grid.points = Eigen::Map<Vector>(pts.data(), static_cast<Eigen::Index>(pts.size()));
  return grid;
}

Grid build_grid(const Vector& obs_times, int refinement_level,
                std::optional<Horizon> horizon) {
  return build_grid_indexed(obs_times, refinement_level, obs_times, horizon);
}

}  // namespace mixode
