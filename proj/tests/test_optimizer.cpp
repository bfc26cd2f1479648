#include <doctest.h>

#include <random>

#include "mixode/fit.hpp"
#include "mixode/optimizer.hpp"
#include "mixode/simulate.hpp"
#include "support/problems.hpp"

using namespace mixode;
using fixture::SubjectSpec;

namespace {

using QuadraticOracle = fixture::LinearQuadraticOracle;

Problem linear_problem(const OdeModel& model, std::mt19937_64& rng,
                       int n_subjects, int n_grid) {
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<SubjectSpec> specs;
  for (int j = 0; j < n_subjects; ++j) {
    SubjectSpec s;
    s.grid_times = Vector::LinSpaced(n_grid, 0.0, 2.0);
    for (int k = 0; k < n_grid; k += 2) s.obs_idx.push_back(k);
    s.obs_values.resize(static_cast<Eigen::Index>(s.obs_idx.size()));
    // distinct subject levels keep the random-effect scale identified
    const double level = 1.0 + 0.6 * (j - 0.5 * (n_subjects - 1));
    for (Eigen::Index k = 0; k < s.obs_values.size(); ++k)
      s.obs_values[k] = level + noise(rng);
    specs.push_back(std::move(s));
  }
  return fixture::make_problem(model, specs, {{1.0, 0.7, 2.5}}, {0});
}

}  // namespace

TEST_CASE("inner Newton lands on the quadratic minimizer in one step") {
  std::mt19937_64 rng(201);
  OdeModel model = fixture::linear_model(-0.4);
  Problem problem = linear_problem(model, rng, 2, 7);
  Vector beta(1);
  beta << std::log(0.6);
  Vector eta(1);
  eta << 0.5;
  Vector omega = fixture::make_omega(problem, beta, eta, std::log(0.25));

  QuadraticOracle oracle_route(problem, omega, -0.4);
  InnerSolution sol =
      inner_optimize(problem, omega, Vector::Zero(problem.u_layout().dim));
  CHECK(sol.converged);
  CHECK(sol.iterations <= 2);
  CHECK((sol.u_hat - oracle_route.u_star).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK(grad_u(problem, sol.u_hat, omega).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("Laplace value is exact for linear-Gaussian problems") {
  std::mt19937_64 rng(202);
  OdeModel model = fixture::linear_model(-0.6);
  Problem problem = linear_problem(model, rng, 3, 6);
  Vector beta(1);
  beta << std::log(0.4);
  Vector eta(1);
  eta << 0.3;
  Vector omega = fixture::make_omega(problem, beta, eta, std::log(0.2));

  QuadraticOracle oracle_route(problem, omega, -0.6);
  LaplaceResult lap = laplace_objective(problem, omega);
  CHECK(std::abs(lap.value - oracle_route.neg_log_marginal) < 1e-8);
}

TEST_CASE("a decoupled unit-variance random effect integrates to one") {
  std::mt19937_64 rng(203);
  OdeModel narrow = fixture::linear_model(-0.5);
  OdeModel padded = fixture::linear_model_padded(-0.5);

  std::normal_distribution<double> noise(0.0, 0.3);
  SubjectSpec s;
  s.grid_times = Vector::LinSpaced(6, 0.0, 2.0);
  s.obs_idx = {0, 2, 4};
  s.obs_values.resize(3);
  for (int k = 0; k < 3; ++k) s.obs_values[k] = 1.0 + noise(rng);

  Problem p1 = fixture::make_problem(narrow, {s}, {{1.0, 0.7, 2.5}}, {0});
  Problem p2 = fixture::make_problem(padded, {s}, {{1.0, 0.7, 2.5}}, {0, 1});

  Vector beta1(1), eta1(1);
  beta1 << std::log(0.5);
  eta1 << 0.4;
  Vector omega1 = fixture::make_omega(p1, beta1, eta1, std::log(0.2));
  // padded problem: block-diagonal factor with unit variance for the idle
  // effect, same eta for the live one
  Vector beta2(3), eta2(2);
  beta2 << std::log(0.5), 0.0, std::log(1.0);
  eta2 << 0.4, 0.0;
  Vector omega2 = fixture::make_omega(p2, beta2, eta2, std::log(0.2));

  LaplaceResult l1 = laplace_objective(p1, omega1);
  LaplaceResult l2 = laplace_objective(p2, omega2);
  CHECK(std::abs(l1.value - l2.value) < 1e-9);
}

TEST_CASE("Laplace value is invariant to subject order") {
  std::mt19937_64 rng(204);
  OdeModel model = fixture::linear_model(-0.3);
  Problem problem = linear_problem(model, rng, 3, 6);
  Vector beta(1), eta(1);
  beta << std::log(0.5);
  eta << 0.2;
  Vector omega = fixture::make_omega(problem, beta, eta, std::log(0.25));
  const double v0 = laplace_objective(problem, omega).value;

  Problem rotated = problem;
  std::rotate(rotated.subjects.begin(), rotated.subjects.begin() + 1,
              rotated.subjects.end());
  const double v1 = laplace_objective(rotated, omega).value;
  CHECK(oracle::rel_err(v1, v0) < 1e-12);
}

TEST_CASE("warm starts do not take more inner iterations than cold starts") {
  SimProtocol p;
  p.model = "population_growth";
  p.eta = Vector::Constant(1, 3.0);
  p.sigma_b = Matrix::Constant(1, 1, 0.09);
  p.x0 = {{1.0, 0.1}};
  p.noise_sd = Vector::Constant(1, 0.03);
  p.obs_times = Vector::LinSpaced(21, 0.0, 1.0);
  p.n_subjects = 6;
  p.seed = 11;
  SimResult sim = generate_dataset(p);

  FitConfig cfg;
  cfg.model = p.model;
  cfg.discretization_level = 1;
  cfg.smoothness = 2.01;
  AssembledProblem ap = assemble_problem(sim.data, cfg);
  StartingValues sv = starting_values(ap.problem, ap.hyper_fits);
  Vector omega = sv.omega0;

  InnerSolution cold = inner_optimize(ap.problem, omega, sv.u0);
  CHECK(cold.converged);
  // perturb omega as an outer iterate would and resume from the previous
  // solution
  Vector omega2 = omega;
  omega2[omega.size() - 1] += 3e-2;
  InnerSolution warm = inner_optimize(ap.problem, omega2, cold.u_hat);
  InnerSolution cold2 = inner_optimize(ap.problem, omega2, sv.u0);
  CHECK(warm.converged);
  CHECK(warm.iterations <= cold2.iterations);
  // same optimum from either start
  CHECK((warm.u_hat - cold2.u_hat).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("inner solution tracks the analytic decay at the true parameters") {
  SimProtocol p;
  p.model = "population_growth";
  p.eta = Vector::Constant(1, 3.0);
  p.sigma_b = Matrix::Constant(1, 1, 0.09);
  p.x0 = {{1.0, 0.1}};
  p.noise_sd = Vector::Constant(1, 0.03);
  p.obs_times = Vector::LinSpaced(21, 0.0, 1.0);
  p.n_subjects = 8;
  p.seed = 5;
  SimResult sim = generate_dataset(p);

  FitConfig cfg;
  cfg.model = p.model;
  cfg.discretization_level = 1;
  cfg.smoothness = 2.01;
  AssembledProblem ap = assemble_problem(sim.data, cfg);
  StartingValues sv = starting_values(ap.problem, ap.hyper_fits);

  // omega at the generating truth
  Vector omega = sv.omega0;
  omega.head(1)[0] = std::log(0.3);                      // sd_b
  omega[ap.problem.n_beta()] = std::log(3.0);           // log eta
  omega[ap.problem.n_beta() + 1] = std::log(0.03);      // log sigma
  InnerSolution sol = inner_optimize(ap.problem, omega, sv.u0);
  REQUIRE(sol.converged);
  CHECK(sol.max_block_ridge < 1e-6);  // blocks factor without meaningful ridge

  const ULayout layout = ap.problem.u_layout();
  int inside = 0, total = 0;
  for (int j = 0; j < ap.problem.s(); ++j) {
    const auto& span = layout.spans[j];
    const int n = span.n;
    Matrix h_inv = sol.hessian_factors[j].solve(Matrix::Identity(1 + n, 1 + n));
    const double theta_j = 3.0 + sol.u_hat[span.offset];
    const double x0_j = sol.u_hat[span.offset + 1];
    for (int t = 0; t < n; ++t) {
      const double x_hat = sol.u_hat[span.offset + 1 + t];
      const double sd = std::sqrt(std::max(h_inv(1 + t, 1 + t), 0.0));
      const double x_true = oracle::population_growth_solution(
          x0_j, theta_j, ap.problem.subjects[j].grid.points[t]);
      inside += std::abs(x_hat - x_true) <= 3.0 * sd + 1e-9 ? 1 : 0;
      ++total;
    }
  }
  CHECK(inside >= static_cast<int>(0.95 * total));
}

TEST_CASE("outer optimization recovers the exact-marginal maximizer") {
  std::mt19937_64 rng(206);
  OdeModel model = fixture::linear_model(-0.5);
  Problem problem = linear_problem(model, rng, 6, 6);
  Vector beta0(1), eta0(1);
  beta0 << std::log(0.5);
  eta0 << 0.2;
  Vector omega0 = fixture::make_omega(problem, beta0, eta0, std::log(0.3));

  OuterOptions opts;
  OuterSolution fit = outer_optimize(
      problem, omega0, Vector::Zero(problem.u_layout().dim), opts);
  CHECK(fit.converged);

  // oracle: minimize the closed-form Gaussian marginal by quasi-Newton with
  // finite-difference gradients
  auto exact_marginal = [&](const Vector& omega) -> double {
    try {
      return QuadraticOracle(problem, omega, -0.5).neg_log_marginal;
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  QnOptions qopts;
  qopts.grad_tol = 1e-9;
  qopts.max_iterations = 300;
  qopts.obj_tol = 1e-12;
  qopts.converge_on_line_search_failure = true;
  QnResult oracle_fit = bfgs_minimize(
      [&](const Vector& w, Vector* g) {
        const double v = exact_marginal(w);
        if (g) *g = oracle::fd_gradient(exact_marginal, w, 1e-6);
        return v;
      },
      omega0, qopts);
  REQUIRE(oracle_fit.converged);
  CHECK((fit.omega_hat - oracle_fit.x).lpNorm<Eigen::Infinity>() < 1e-4);
  CHECK(std::abs(fit.neg_log_marginal - oracle_fit.value) < 1e-6);
}

TEST_CASE("objective trace decreases monotonically") {
  std::mt19937_64 rng(207);
  OdeModel model = fixture::linear_model(-0.5);
  Problem problem = linear_problem(model, rng, 2, 6);
  Vector beta0(1), eta0(1);
  beta0 << std::log(0.8);
  eta0 << -0.5;
  Vector omega0 = fixture::make_omega(problem, beta0, eta0, std::log(0.5));
  OuterSolution fit = outer_optimize(
      problem, omega0, Vector::Zero(problem.u_layout().dim));
  for (std::size_t k = 1; k < fit.trace.size(); ++k)
    CHECK(fit.trace[k] <= fit.trace[k - 1] + 1e-12);
}

TEST_CASE("starting values recover degenerate and generic configurations") {
  // zero between-subject variance: b starts vanish, covariance is floored
  SimProtocol p;
  p.model = "population_growth";
  p.eta = Vector::Constant(1, 3.0);
  p.sigma_b = Matrix::Zero(1, 1);
  p.x0 = {{1.0, 0.0}};
  p.noise_sd = Vector::Constant(1, 1e-4);
  p.obs_times = Vector::LinSpaced(21, 0.0, 1.0);
  p.n_subjects = 4;
  p.seed = 3;
  SimResult sim = generate_dataset(p);

  FitConfig cfg;
  cfg.model = p.model;
  cfg.discretization_level = 0;
  cfg.smoothness = 2.01;
  AssembledProblem ap = assemble_problem(sim.data, cfg);
  StartingValues sv = starting_values(ap.problem, ap.hyper_fits);
  const ULayout layout = ap.problem.u_layout();
  for (int j = 0; j < ap.problem.s(); ++j)
    CHECK(std::abs(sv.u0[layout.spans[j].offset]) < 0.05);
  // floored covariance: B(beta0) B(beta0)^T ~ 1e-6
  Matrix b = cholesky_factor_from_beta(sv.omega0.head(1), 1);
  CHECK((b * b.transpose())(0, 0) == doctest::Approx(1e-6).epsilon(0.5));
  // x starts interpolate the observations
  CHECK(std::abs(sv.u0[layout.spans[0].offset + 1] -
                 sim.data.subjects[0].series[0].values[0]) < 1e-12);
}

TEST_CASE("covariance round-trips through the log-Cholesky parameterization") {
  std::mt19937_64 rng(208);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    Matrix a(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) a(i, j) = n(rng);
    Matrix cov = a * a.transpose() + 0.01 * Matrix::Identity(3, 3);
    Vector beta = beta_from_covariance(cov, 1e-6);
    Matrix b = cholesky_factor_from_beta(beta, 3);
    CHECK(oracle::rel_frobenius(b * b.transpose(), cov) < 1e-10);
  }
}

TEST_CASE("pre-fits land near the generating parameters on the two-component system") {
  SimProtocol p;
  p.model = "fitzhugh_nagumo";
  p.eta.resize(3);
  p.eta << 0.2, 0.2, 3.0;
  p.sigma_b.resize(3, 3);
  p.sigma_b << 0.0025, 0.0025, 0.03, 0.0025, 0.0025, 0.03, 0.03, 0.03, 0.36;
  p.x0 = {{-1.0, 0.1}, {1.0, 0.1}};
  p.noise_sd = Vector::Constant(2, 0.1);
  p.obs_times = Vector::LinSpaced(41, 0.0, 20.0);
  p.n_subjects = 8;
  p.seed = 19;
  SimResult sim = generate_dataset(p);

  FitConfig cfg;
  cfg.model = p.model;
  cfg.discretization_level = 0;
  cfg.smoothness = 2.01;
  AssembledProblem ap = assemble_problem(sim.data, cfg);
  StartingValues sv = starting_values(ap.problem, ap.hyper_fits);

  int good = 0;
  for (int j = 0; j < p.n_subjects; ++j) {
    bool ok = true;
    for (int k = 0; k < 3; ++k) {
      const double sd = std::sqrt(p.sigma_b(k, k));
      if (std::abs(sv.theta_prefit[j][k] - sim.truth[j].theta[k]) > 3.0 * sd)
        ok = false;
    }
    good += ok ? 1 : 0;
  }
  CHECK(good >= static_cast<int>(0.8 * p.n_subjects));
}

TEST_CASE("fits are deterministic end to end") {
  SimProtocol p;
  p.model = "population_growth";
  p.eta = Vector::Constant(1, 3.0);
  p.sigma_b = Matrix::Constant(1, 1, 0.09);
  p.x0 = {{1.0, 0.1}};
  p.noise_sd = Vector::Constant(1, 0.03);
  p.obs_times = Vector::LinSpaced(11, 0.0, 1.0);
  p.n_subjects = 4;
  p.seed = 23;
  SimResult sim = generate_dataset(p);

  FitConfig cfg;
  cfg.model = p.model;
  cfg.discretization_level = 0;
  cfg.smoothness = 2.01;
  FitResult a = run_fit(sim.data, cfg);
  FitResult b = run_fit(sim.data, cfg);
  REQUIRE(a.converged);
  CHECK(a.omega_hat == b.omega_hat);
  CHECK(a.objective_trace == b.objective_trace);
  CHECK(a.neg_log_marginal == b.neg_log_marginal);
}

TEST_CASE("a single subject collapses to a frozen-covariance fit") {
  SimProtocol p;
  p.model = "population_growth";
  p.eta = Vector::Constant(1, 3.0);
  p.sigma_b = Matrix::Constant(1, 1, 0.0);
  p.x0 = {{1.0, 0.0}};
  p.noise_sd = Vector::Constant(1, 0.03);
  p.obs_times = Vector::LinSpaced(21, 0.0, 1.0);
  p.n_subjects = 1;
  p.seed = 31;
  SimResult sim = generate_dataset(p);

  FitConfig cfg;
  cfg.model = p.model;
  cfg.discretization_level = 1;
  cfg.smoothness = 2.01;
  FitResult fit = run_fit(sim.data, cfg);
  CHECK(fit.converged);
  CHECK(fit.eta[0].estimate == doctest::Approx(3.0).epsilon(0.15));
}
