#pragma once

#include <optional>

#include "mixode/dataset.hpp"
#include "mixode/pk_measures.hpp"
#include "mixode/uncertainty.hpp"

namespace mixode {

struct ToleranceConfig {
  double inner_grad = 1e-8;
  int inner_max_iter = 500;
  double outer_grad = 1e-6;
  double outer_obj = 1e-10;
  int outer_max_iter = 300;
  double fd_step = 1e-5;
  double hess_step = 1e-3;
  double jitter = 1e-10;
};

struct FitConfig {
  std::string model;
  std::vector<std::string> random_effects;  // empty = model defaults
  int discretization_level = 1;
  bool common_grid = true;
  std::optional<double> predict_to;
  double predict_step = 0.0;  // 0 = continue the refined grid step
  double smoothness = 2.01;
  std::string mean_mode = "zero";  // "zero" | "constant"
  double lambda = 1.0;
  bool lambda_auto = false;  // lambda_j = m |I_j| / sum_i |gamma_ij|
  std::string noise_mode = "shared";  // "shared" | "per_subject"
  bool freeze_sigma = false;          // hold sigma at the stage-one values
  std::vector<double> known_noise_sd;  // per component; empty = estimated
  PriorSpec priors;
  ToleranceConfig tol;
  std::uint64_t seed = 1;
  double ci_level = 0.95;
  bool pk_summaries = false;  // forced on for dose-bearing models
  std::optional<std::pair<double, double>> pk_window;
  double cmin_threshold = 0.1;

  void validate() const;
};

struct ScalarReport {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;  // natural-scale delta-method SE
  double lo = 0.0;
  double hi = 0.0;
};

struct SubjectFit {
  std::string id;
  std::optional<double> dose;
  Vector b;      // random effects, length r
  Vector theta;  // eta + b embedded, length l, natural scale
  Vector grid_times;
  std::optional<int> horizon_start;
  Matrix trajectory;     // n x m
  Matrix trajectory_se;  // n x m
  std::vector<PkSummary> pk;  // per component when PK summaries are enabled
  std::optional<PkEstimate> predicted_trough;  // over the prediction window
  std::optional<double> prob_trough_below;     // P(trough < threshold)
};

struct FitResult {
  std::string model;
  std::vector<std::string> random_effects;
  std::vector<ScalarReport> eta;
  Matrix sigma_b;
  std::vector<ScalarReport> sd_b;   // sqrt of sigma_b diagonal
  std::vector<ScalarReport> sigma;  // observation noise per component
  std::vector<SubjectFit> subjects;
  bool converged = false;
  int outer_iterations = 0;
  int inner_iterations_final = 0;
  double neg_log_marginal = 0.0;
  std::vector<double> objective_trace;
  Vector omega_hat;
  Matrix omega_cov;
  std::string failure_reason;  // empty on success
};

// Full pipeline: stage-one GP fits, starting values, nested optimization,
// delta-method uncertainty, and per-subject summaries. Does not throw on
// optimizer non-convergence; the result carries converged = false and a
// failure reason instead.
FitResult run_fit(const Dataset& data, const FitConfig& config);

// The assembled problem for callers that need the internals (tests, tools).
struct AssembledProblem {
  Problem problem;
  std::vector<std::vector<HyperFit>> hyper_fits;  // per subject, per component
};
AssembledProblem assemble_problem(const Dataset& data, const FitConfig& config);

}  // namespace mixode
