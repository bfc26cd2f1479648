#pragma once

#include <optional>

#include "mixode/gp_fit.hpp"
#include "mixode/posterior.hpp"
#include "mixode/quasi_newton.hpp"

namespace mixode {

struct InnerOptions {
  double grad_tol = 1e-8;  // scaled: ||g||_inf <= tol * max(1, |Q|)
  int max_iterations = 500;
  int max_line_search = 60;
};

// Inner MAP solution u_hat(omega) with the factorized per-subject Hessian
// blocks evaluated at the optimum.
struct InnerSolution {
  Vector u_hat;
  double q_value = 0.0;
  double logdet_h = 0.0;
  std::vector<Eigen::LLT<Matrix>> hessian_factors;
  double max_block_ridge = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Thrown when no descent is possible from the starting point; carries the
// incumbent so callers can inspect how far the solve got.
class InnerFailure : public Error {
 public:
  InnerFailure(const std::string& what, InnerSolution incumbent)
      : Error(ErrorCode::NonConvergence, what), incumbent(std::move(incumbent)) {}
  InnerSolution incumbent;
};

// Damped Newton over u with per-subject block solves; falls back to
// limited-memory quasi-Newton when a block stays indefinite after ridge
// escalation or the Newton line search stalls.
InnerSolution inner_optimize(const Problem& problem, const Vector& omega,
                             const Vector& u_start,
                             const InnerOptions& opts = {});

struct LaplaceResult {
  double value = 0.0;  // Q(u_hat, omega) + 0.5 logdet H - (|u|/2) log(2 pi)
  InnerSolution inner;
};

// Negative log of the Laplace-approximated marginal over u.
LaplaceResult laplace_objective(const Problem& problem, const Vector& omega,
                                const std::optional<Vector>& warm_u = {},
                                const InnerOptions& opts = {});

struct OuterOptions {
  InnerOptions inner;
  double grad_tol = 1e-6;
  double obj_tol = 1e-10;
  int max_iterations = 300;
  double fd_step = 1e-5;    // relative step for the outer gradient
  double hess_step = 1e-3;  // relative step for the omega covariance
  std::vector<bool> frozen;  // omega coordinates held fixed (empty = none)
};

struct OuterSolution {
  Vector omega_hat;
  double neg_log_marginal = 0.0;
  Matrix omega_cov;  // inverse FD Hessian of the objective, symmetrized
  InnerSolution inner;
  bool converged = false;
  int iterations = 0;
  std::vector<double> trace;  // objective at accepted iterates
};

// BFGS over omega on the Laplace objective; gradients by central finite
// differences with warm-started inner solves.
OuterSolution outer_optimize(const Problem& problem, const Vector& omega0,
                             const Vector& u0, const OuterOptions& opts = {});

struct StartingValues {
  Vector u0;
  Vector omega0;
  std::vector<Vector> theta_prefit;  // per subject, length l
};

// Starting construction: x from observations and the stage-one GP mean,
// per-subject theta from independent single-subject MAP pre-fits, eta from
// the subject mean, beta from the sample covariance of the implied b_j.
StartingValues starting_values(
    const Problem& problem,
    const std::vector<std::vector<HyperFit>>& hyper_fits,
    const InnerOptions& opts = {});

}  // namespace mixode
