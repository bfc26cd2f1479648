#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mixode/common.hpp"

namespace mixode {

// Right-hand side of a mixed-effects ODE system together with analytic
// Jacobians in the state and in the parameters. Evaluation signature is
// (state, theta, t, dose); dose is a per-subject covariate and is 0 for
// models that do not use one.
struct OdeModel {
  std::string name;
  int n_components = 0;  // m
  int n_params = 0;      // l
  std::vector<std::string> param_names;
  // log-transform the corresponding fixed effect in the outer parameter
  // vector (keeps rates positive during optimization)
  std::vector<bool> positivity;
  // which parameters carry random effects by default
  std::vector<bool> default_random_effects;
  bool uses_dose = false;

  std::function<Vector(const Vector& x, const Vector& theta, double t,
                       double dose)>
      rhs;
  std::function<Matrix(const Vector& x, const Vector& theta, double t,
                       double dose)>
      jac_state;  // m x m, entry (i,k) = d f_i / d x_k
  std::function<Matrix(const Vector& x, const Vector& theta, double t,
                       double dose)>
      jac_theta;  // m x l, entry (i,p) = d f_i / d theta_p

  int param_index(const std::string& pname) const;
};

// theta_j = eta + b_j
struct ThetaDecomposition {
  Vector fixed;   // eta
  Vector random;  // b_j (zero-padded to length l)
  Vector theta() const { return fixed + random; }
};

// Builtin systems: population_growth, forced_vdp, fitzhugh_nagumo,
// pk_bateman. Throws a lookup error listing the available names otherwise.
const OdeModel& builtin(const std::string& name);

// Extension hook: register a user-defined model (rhs + Jacobians + metadata).
// Also resolvable through builtin() afterwards.
void register_model(const OdeModel& model);

std::vector<std::string> registered_model_names();

// Row t of the result is rhs(x_grid.row(t), theta, times[t]); throws a
// model-evaluation error naming the offending row on non-finite output.
Matrix evaluate_rhs_grid(const OdeModel& model, const Matrix& x_grid,
                         const Vector& theta, const Vector& times,
                         double dose = 0.0);

}  // namespace mixode
