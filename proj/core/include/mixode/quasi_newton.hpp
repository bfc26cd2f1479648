#pragma once

#include <functional>
#include <vector>

#include "mixode/common.hpp"

namespace mixode {

// Objective callback: returns the value and, when grad != nullptr, fills the
// gradient. Non-finite trial values are rejected by the line search.
using ValueGrad = std::function<double(const Vector& x, Vector* grad)>;

struct QnOptions {
  int max_iterations = 200;
  double grad_tol = 1e-8;  // scaled: ||g||_inf <= grad_tol * max(1, |f|)
  double obj_tol = 0.0;    // stop when an accepted decrease falls below this
  double armijo_c = 1e-4;
  int max_line_search = 60;
  int lbfgs_memory = 10;
  // An exhausted line search means no representable decrease remains; with
  // an objective-decrease stopping rule in force that counts as converged.
  bool converge_on_line_search_failure = false;
};

struct QnResult {
  Vector x;
  double value = 0.0;
  Vector gradient;
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
  std::vector<double> trace;  // objective at accepted iterates, x0 first
};

// Dense BFGS (inverse-Hessian update) with Armijo backtracking. Suited to the
// low-dimensional outer problems here.
QnResult bfgs_minimize(const ValueGrad& f, const Vector& x0,
                       const QnOptions& opts = {});

// Limited-memory variant for high-dimensional problems.
QnResult lbfgs_minimize(const ValueGrad& f, const Vector& x0,
                        const QnOptions& opts = {});

}  // namespace mixode
