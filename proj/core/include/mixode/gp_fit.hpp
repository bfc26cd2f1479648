#pragma once

#include <optional>

#include "mixode/kernel.hpp"

namespace mixode {

// Stage-one GP fit for one subject-component. The hyperparameters are frozen
// for all later stages.
struct HyperFit {
  double variance_scale = 1.0;
  double bandwidth = 1.0;
  double noise_sd = 0.1;
  bool converged = false;
  double log_marginal = 0.0;
};

// Maximizes the Gaussian marginal likelihood N(y; mean, K + sigma^2 I) over
// log-parameters with multi-start. If known_noise is supplied, sigma is held
// fixed. Duplicate observation times are averaged first. Requires >= 3
// observations.
HyperFit fit_hyperparameters(const Vector& times, const Vector& values,
                             double smoothness,
                             std::optional<double> known_noise = std::nullopt,
                             double mean_value = 0.0);

// Posterior mean of the stage-one GP at the grid points, used for starting
// values at unobserved discretization points.
Vector gp_posterior_mean(const Vector& obs_times, const Vector& obs_values,
                         const Vector& grid, const KernelConfig& cfg,
                         double noise_sd, double mean_value = 0.0);

}  // namespace mixode
