#pragma once

#include <map>
#include <optional>

#include "mixode/common.hpp"

namespace mixode {

// Per-subject discretization grid. Every observation time appears exactly in
// `points`; grid points with no observation simply have no obs_index entry.
struct Grid {
  Vector points;
  std::map<double, int> obs_index;
  std::optional<int> horizon_start;  // first prediction-only index, if any

  int size() const { return static_cast<int>(points.size()); }
  int index_of(double t) const;  // throws Lookup if t is not an obs time
};

struct Horizon {
  double t_end = 0.0;
  double step = 0.0;
};

// Level 0 is the smallest evenly-spaced superset of the observation times;
// level k bisects each adjacent pair of the previous level k times
// (2^k - 1 midpoints per level-0 pair). An optional horizon appends equally
// spaced points on (max obs, t_end].
Grid build_grid(const Vector& obs_times, int refinement_level,
                std::optional<Horizon> horizon = std::nullopt);

// Same grid construction, but obs_index entries are created only for
// `indexed_times` (a subset of obs_times); used when one subject's grid is
// shared across components or subjects with differing observation times.
Grid build_grid_indexed(const Vector& obs_times, int refinement_level,
                        const Vector& indexed_times,
                        std::optional<Horizon> horizon = std::nullopt);

}  // namespace mixode
