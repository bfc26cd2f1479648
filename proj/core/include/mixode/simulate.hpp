#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mixode/dataset.hpp"
#include "mixode/ode_models.hpp"

namespace mixode {

struct ComponentDist {
  double mean = 0.0;
  double sd = 0.0;
};

// Ground-truth generation protocol: fixed effects, random-effect covariance,
// initial-condition distribution, noise levels, and the observation design.
struct SimProtocol {
  std::string model;
  Vector eta;        // length l, natural scale
  Matrix sigma_b;    // r x r over the random-effect parameters
  std::vector<std::string> random_effects;  // names; empty = model default
  std::vector<ComponentDist> x0;            // per component
  Vector noise_sd;                          // per component
  Vector obs_times;
  int n_subjects = 0;
  std::optional<double> dose;
  std::uint64_t seed = 1;
  // redraw random effects until every positivity-constrained theta component
  // is positive (per-subject stream, so still reproducible)
  bool truncate_positive = false;
  std::string id_prefix = "subj";

  void validate() const;
  std::vector<int> random_effect_indices(const OdeModel& model) const;
};

struct SubjectTruth {
  Vector theta;       // length l
  Vector x0;          // length m
  Matrix trajectory;  // |obs_times| x m, noiseless
};

struct SimResult {
  Dataset data;
  std::vector<SubjectTruth> truth;
};

// Classical fixed-step RK4 with internal step <= min(max_step, min gap),
// substepping so requested output times are hit exactly. x0 applies at
// times[0]. Throws a blow-up error naming the last valid time on non-finite
// states.
Matrix rk_solve(const OdeModel& model, const Vector& theta, const Vector& x0,
                const Vector& times, double dose = 0.0, double max_step = 0.01);

// Draws b_j ~ N(0, Sigma_b) (PSD square root with negative-eigenvalue
// clipping, so exactly singular covariances are fine), x0 from its
// distribution, solves each subject, adds observation noise. Bitwise
// reproducible from the seed; subjects use derived RNG streams.
SimResult generate_dataset(const SimProtocol& protocol);

// (1/s) sum_j (1/|gamma_j|) || C_j - C_hat_j ||^2 where both trajectories are
// RK solutions at the observation times. Returns +inf if a solve under the
// estimates blows up.
double trajectory_mse(const OdeModel& model,
                      const std::vector<Vector>& theta_hat,
                      const std::vector<Vector>& x0_hat,
                      const std::vector<SubjectTruth>& truth,
                      const Vector& obs_times, const std::vector<double>& doses);

}  // namespace mixode
