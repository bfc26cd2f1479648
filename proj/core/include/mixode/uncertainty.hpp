#pragma once

#include "mixode/optimizer.hpp"

namespace mixode {

// Delta-method uncertainty for the latent block and the outer parameters:
//   Var(u) ~ J Sigma_omega J^T + blockdiag(H^{-1})
// where J = d u_hat / d omega is computed column-by-column with
// finite-difference re-solves of the inner problem.
struct UncertaintyReport {
  Vector u_se;
  Vector omega_se;
  Matrix j_matrix;  // |u| x |omega|
};

UncertaintyReport delta_method_variance(const Problem& problem,
                                        const OuterSolution& fit,
                                        const OuterOptions& opts = {});

// Variance of a linear functional w^T u (w given over the full u vector),
// combining the delta-method term with the conditional covariance term.
double functional_variance(const Problem& problem, const OuterSolution& fit,
                           const UncertaintyReport& report, const Vector& w);

// Weight vector selecting subject j, component i trajectory coordinates.
Vector trajectory_functional(const Problem& problem, int j, int i,
                             const Vector& grid_weights);

// estimate +- z_{alpha/2} se; optionally floors the lower bound at zero for
// nonnegative quantities.
std::pair<double, double> credible_interval(double estimate, double se,
                                            double level,
                                            bool floor_at_zero = false);

// P(quantity < threshold) (direction "below") or the complement, under the
// normal approximation N(estimate, se^2).
double threshold_probability(double estimate, double se, double threshold,
                             bool below);

double normal_quantile(double p);  // inverse standard normal CDF
double normal_cdf(double x);

}  // namespace mixode
