#include "mixode/fit.hpp"

#include <cmath>
#include <limits>
#include <set>

namespace mixode {

namespace {

std::vector<int> resolve_random_effects(const OdeModel& model,
                                        const std::vector<std::string>& names) {
  std::vector<int> idx;
  if (names.empty()) {
    for (int p = 0; p < model.n_params; ++p)
      if (model.default_random_effects[p]) idx.push_back(p);
  } else {
    for (const std::string& n : names) idx.push_back(model.param_index(n));
  }
  if (idx.empty())
    throw Error(ErrorCode::InvalidArgument,
                "at least one parameter must carry a random effect");
  std::set<int> uniq(idx.begin(), idx.end());
  if (uniq.size() != idx.size())
    throw Error(ErrorCode::InvalidArgument, "duplicate random-effect names");
  return idx;
}

}  // namespace

void FitConfig::validate() const {
  if (model.empty())
    throw Error(ErrorCode::InvalidArgument, "fit config needs a model name");
  if (discretization_level < 0)
    throw Error(ErrorCode::InvalidArgument,
                "discretization level must be >= 0");
  if (!(smoothness > 2.0))
    throw Error(ErrorCode::InvalidArgument,
                "kernel smoothness must exceed 2 for the derivative process");
  if (mean_mode != "zero" && mean_mode != "constant")
    throw Error(ErrorCode::InvalidArgument,
                "mean_mode must be 'zero' or 'constant'");
  if (noise_mode != "shared" && noise_mode != "per_subject")
    throw Error(ErrorCode::InvalidArgument,
                "noise_mode must be 'shared' or 'per_subject'");
  if (!(lambda >= 1.0))
    throw Error(ErrorCode::InvalidArgument, "lambda must be >= 1");
  if (!(ci_level > 0.0 && ci_level < 1.0))
    throw Error(ErrorCode::InvalidArgument, "ci_level must be inside (0,1)");
  if (predict_to && predict_step < 0.0)
    throw Error(ErrorCode::InvalidArgument, "predict_step must be >= 0");
}

AssembledProblem assemble_problem(const Dataset& data, const FitConfig& config) {
  config.validate();
  data.validate();
  const OdeModel& model = builtin(config.model);
  if (data.n_components > model.n_components)
    throw Error(ErrorCode::InvalidArgument,
                "dataset has more components than the model");

  AssembledProblem out;
  Problem& problem = out.problem;
  problem.model = &model;
  problem.re_params = resolve_random_effects(model, config.random_effects);
  problem.priors = config.priors;
  problem.noise_mode = config.freeze_sigma
                           ? NoiseMode::Frozen
                           : (config.noise_mode == "shared"
                                  ? NoiseMode::Shared
                                  : NoiseMode::PerSubject);

  // grid construction; the horizon step defaults to the refined grid step
  Vector union_times = data.all_times();
  const int s = static_cast<int>(data.subjects.size());
  const int m = model.n_components;

  out.hyper_fits.assign(s, std::vector<HyperFit>(m));

  // stage-one marginal-likelihood fits, with a shared fallback for
  // subject-components that have too few observations of their own
  std::vector<std::vector<bool>> fitted(s, std::vector<bool>(m, false));
  for (int j = 0; j < s; ++j) {
    const SubjectRecord& rec = data.subjects[j];
    for (int i = 0; i < m; ++i) {
      if (i >= static_cast<int>(rec.series.size()) || rec.series[i].size() < 3)
        continue;
      const Series& ser = rec.series[i];
      std::optional<double> known;
      if (!config.known_noise_sd.empty())
        known = config.known_noise_sd[static_cast<std::size_t>(i)];
      const double mean_value =
          config.mean_mode == "constant" ? ser.values.mean() : 0.0;
      out.hyper_fits[j][i] = fit_hyperparameters(
          ser.times, ser.values, config.smoothness, known, mean_value);
      fitted[j][i] = true;
    }
  }
  for (int i = 0; i < m; ++i) {
    // geometric-mean fallback across subjects that fitted this component
    double lp1 = 0, lp2 = 0, ls = 0;
    int cnt = 0;
    for (int j = 0; j < s; ++j)
      if (fitted[j][i]) {
        lp1 += std::log(out.hyper_fits[j][i].variance_scale);
        lp2 += std::log(out.hyper_fits[j][i].bandwidth);
        ls += std::log(out.hyper_fits[j][i].noise_sd);
        ++cnt;
      }
    if (cnt == 0)
      throw Error(ErrorCode::InsufficientData,
                  "component " + std::to_string(i) +
                      " has no subject with enough observations");
    HyperFit fallback;
    fallback.variance_scale = std::exp(lp1 / cnt);
    fallback.bandwidth = std::exp(lp2 / cnt);
    fallback.noise_sd = std::exp(ls / cnt);
    fallback.converged = false;
    for (int j = 0; j < s; ++j)
      if (!fitted[j][i]) out.hyper_fits[j][i] = fallback;
  }

  for (int j = 0; j < s; ++j) {
    const SubjectRecord& rec = data.subjects[j];
    SubjectProblem sub;
    sub.id = rec.id;
    sub.dose = rec.dose.value_or(0.0);
    if (model.uses_dose && !rec.dose)
      throw Error(ErrorCode::InvalidArgument,
                  "subject " + rec.id + " is missing the dose covariate");

    Vector base_times = config.common_grid ? union_times : rec.all_times();
    std::optional<Horizon> horizon;
    if (config.predict_to) {
      double step = config.predict_step;
      if (step <= 0.0) {
        Grid probe = build_grid(base_times, config.discretization_level);
        step = probe.points[probe.points.size() - 1] -
               probe.points[probe.points.size() - 2];
      }
      horizon = Horizon{*config.predict_to, step};
    }
    sub.grid = build_grid(base_times, config.discretization_level, horizon);

    int n_obs_total = 0;
    sub.kernel.resize(m);
    sub.gp.resize(m);
    sub.obs_idx.resize(m);
    sub.obs_values.resize(m);
    for (int i = 0; i < m; ++i) {
      const HyperFit& hf = out.hyper_fits[j][i];
      sub.kernel[i] =
          KernelConfig{hf.variance_scale, hf.bandwidth, config.smoothness};
      double mean_value = 0.0;
      if (config.mean_mode == "constant" &&
          i < static_cast<int>(rec.series.size()) && rec.series[i].size() > 0)
        mean_value = rec.series[i].values.mean();
      sub.gp[i] = build_gp_matrices(sub.grid.points, sub.kernel[i],
                                    config.tol.jitter, mean_value,
                                    rec.id + "/component " + std::to_string(i));
      if (i < static_cast<int>(rec.series.size())) {
        const Series& ser = rec.series[i];
        sub.obs_values[i] = ser.values;
        sub.obs_idx[i].resize(ser.size());
        for (int k = 0; k < ser.size(); ++k)
          sub.obs_idx[i][static_cast<std::size_t>(k)] =
              sub.grid.index_of(ser.times[k]);
        n_obs_total += ser.size();
      } else {
        sub.obs_values[i] = Vector();
      }
    }
    if (config.freeze_sigma) {
      sub.frozen_noise.resize(m);
      for (int i = 0; i < m; ++i)
        sub.frozen_noise[i] = std::max(out.hyper_fits[j][i].noise_sd, 1e-8);
    }
    sub.lambda = config.lambda;
    if (config.lambda_auto && n_obs_total > 0)
      sub.lambda = std::max(
          1.0, static_cast<double>(m * sub.n()) / n_obs_total);
    problem.subjects.push_back(std::move(sub));
  }
  problem.validate();
  return out;
}

namespace {

ScalarReport report_eta(const Problem& problem, const OuterSolution& fit,
                        int p, double level) {
  const OdeModel& model = *problem.model;
  ScalarReport rep;
  rep.name = model.param_names[static_cast<std::size_t>(p)];
  const int idx = problem.n_beta() + p;
  const double raw = fit.omega_hat[idx];
  const double se_raw = std::sqrt(std::max(fit.omega_cov(idx, idx), 0.0));
  const double z = normal_quantile(0.5 + 0.5 * level);
  if (model.positivity[static_cast<std::size_t>(p)]) {
    rep.estimate = std::exp(raw);
    rep.se = rep.estimate * se_raw;  // delta method through exp
    rep.lo = std::exp(raw - z * se_raw);
    rep.hi = std::exp(raw + z * se_raw);
  } else {
    rep.estimate = raw;
    rep.se = se_raw;
    rep.lo = raw - z * se_raw;
    rep.hi = raw + z * se_raw;
  }
  return rep;
}

// SD of one random effect, with a log-scale CI through the beta
// parameterization (finite differences; no inner solves involved).
ScalarReport report_sd_b(const Problem& problem, const OuterSolution& fit,
                         int k, double level) {
  ScalarReport rep;
  rep.name =
      "sd_" + problem.model->param_names[static_cast<std::size_t>(
                  problem.re_params[static_cast<std::size_t>(k)])];
  const int nb = problem.n_beta();
  const int r = problem.r();
  auto sd_of = [&](const Vector& beta_vec) {
    Matrix b = cholesky_factor_from_beta(beta_vec, r);
    Matrix sig = b * b.transpose();
    return std::sqrt(sig(k, k));
  };
  Vector beta = fit.omega_hat.head(nb);
  rep.estimate = sd_of(beta);
  Vector grad_log = Vector::Zero(nb);
  for (int q = 0; q < nb; ++q) {
    const double h = 1e-6 * std::max(1.0, std::abs(beta[q]));
    Vector bp = beta, bm = beta;
    bp[q] += h;
    bm[q] -= h;
    grad_log[q] = (std::log(sd_of(bp)) - std::log(sd_of(bm))) / (2.0 * h);
  }
  const Matrix cov_beta = fit.omega_cov.topLeftCorner(nb, nb);
  const double var_log = std::max(grad_log.dot(cov_beta * grad_log), 0.0);
  const double se_log = std::sqrt(var_log);
  const double z = normal_quantile(0.5 + 0.5 * level);
  rep.se = rep.estimate * se_log;
  rep.lo = rep.estimate * std::exp(-z * se_log);
  rep.hi = rep.estimate * std::exp(z * se_log);
  return rep;
}

ScalarReport report_sigma(const Problem& problem, const OuterSolution& fit,
                          int i, double level) {
  ScalarReport rep;
  rep.name = "sigma_" + std::to_string(i);
  if (problem.noise_mode == NoiseMode::Frozen) {
    rep.estimate = problem.subjects[0].frozen_noise[i];
    rep.se = 0.0;
    rep.lo = rep.hi = rep.estimate;
    return rep;
  }
  const int idx = problem.noise_index(0, i);
  const double raw = fit.omega_hat[idx];
  const double se_raw = std::sqrt(std::max(fit.omega_cov(idx, idx), 0.0));
  const double z = normal_quantile(0.5 + 0.5 * level);
  rep.estimate = std::exp(raw);
  rep.se = rep.estimate * se_raw;
  rep.lo = std::exp(raw - z * se_raw);
  rep.hi = std::exp(raw + z * se_raw);
  return rep;
}

}  // namespace

FitResult run_fit(const Dataset& data, const FitConfig& config) {
  AssembledProblem ap = assemble_problem(data, config);
  Problem& problem = ap.problem;
  const OdeModel& model = *problem.model;
  const int s = problem.s(), m = problem.m(), r = problem.r();

  FitResult result;
  result.model = config.model;
  for (int k = 0; k < r; ++k)
    result.random_effects.push_back(
        model.param_names[static_cast<std::size_t>(problem.re_params[k])]);

  InnerOptions inner_opts;
  inner_opts.grad_tol = config.tol.inner_grad;
  inner_opts.max_iterations = config.tol.inner_max_iter;
  OuterOptions outer_opts;
  outer_opts.inner = inner_opts;
  outer_opts.grad_tol = config.tol.outer_grad;
  outer_opts.obj_tol = config.tol.outer_obj;
  outer_opts.max_iterations = config.tol.outer_max_iter;
  outer_opts.fd_step = config.tol.fd_step;
  outer_opts.hess_step = config.tol.hess_step;
  if (s == 1) {
    // a single subject cannot identify Sigma_b; freeze the beta block
    outer_opts.frozen.assign(static_cast<std::size_t>(problem.omega_dim()),
                             false);
    for (int k = 0; k < problem.n_beta(); ++k)
      outer_opts.frozen[static_cast<std::size_t>(k)] = true;
  }

  StartingValues sv;
  OuterSolution fit;
  try {
    sv = starting_values(problem, ap.hyper_fits, inner_opts);
    fit = outer_optimize(problem, sv.omega0, sv.u0, outer_opts);
  } catch (const Error& e) {
    result.converged = false;
    result.failure_reason = e.what();
    return result;
  }

  result.converged = fit.converged;
  result.outer_iterations = fit.iterations;
  result.inner_iterations_final = fit.inner.iterations;
  result.neg_log_marginal = fit.neg_log_marginal;
  result.objective_trace = fit.trace;
  result.omega_hat = fit.omega_hat;
  result.omega_cov = fit.omega_cov;
  if (!fit.converged)
    result.failure_reason = "outer optimization did not converge";

  for (int p = 0; p < model.n_params; ++p)
    result.eta.push_back(report_eta(problem, fit, p, config.ci_level));
  {
    Matrix b = cholesky_factor_from_beta(fit.omega_hat.head(problem.n_beta()),
                                         r);
    result.sigma_b = b * b.transpose();
  }
  for (int k = 0; k < r; ++k)
    result.sd_b.push_back(report_sd_b(problem, fit, k, config.ci_level));
  for (int i = 0; i < m; ++i)
    result.sigma.push_back(report_sigma(problem, fit, i, config.ci_level));

  UncertaintyReport rep;
  bool have_uq = false;
  if (fit.converged) {
    try {
      rep = delta_method_variance(problem, fit, outer_opts);
      have_uq = true;
    } catch (const Error& e) {
      result.failure_reason = e.what();
    }
  }

  const ULayout layout = problem.u_layout();
  const Vector eta_nat = problem.eta_natural(fit.omega_hat);
  const bool want_pk = config.pk_summaries || model.uses_dose;
  for (int j = 0; j < s; ++j) {
    const SubjectProblem& sub = problem.subjects[j];
    const auto& span = layout.spans[j];
    SubjectFit sf;
    sf.id = sub.id;
    if (model.uses_dose) sf.dose = sub.dose;
    sf.b = fit.inner.u_hat.segment(span.offset, r);
    sf.theta = eta_nat;
    for (int k = 0; k < r; ++k) sf.theta[problem.re_params[k]] += sf.b[k];
    sf.grid_times = sub.grid.points;
    sf.horizon_start = sub.grid.horizon_start;
    sf.trajectory.resize(sub.n(), m);
    sf.trajectory_se.setZero(sub.n(), m);
    for (int i = 0; i < m; ++i) {
      sf.trajectory.col(i) =
          fit.inner.u_hat.segment(span.offset + r + i * span.n, span.n);
      if (have_uq)
        sf.trajectory_se.col(i) =
            rep.u_se.segment(span.offset + r + i * span.n, span.n);
    }

    if (want_pk && have_uq) {
      double w_lo = std::numeric_limits<double>::infinity(), w_hi = -w_lo;
      for (int i = 0; i < m; ++i)
        for (int idx : sub.obs_idx[i]) {
          w_lo = std::min(w_lo, sub.grid.points[idx]);
          w_hi = std::max(w_hi, sub.grid.points[idx]);
        }
      if (config.pk_window) {
        w_lo = config.pk_window->first;
        w_hi = config.pk_window->second;
      }
      if (std::isfinite(w_lo) && w_hi > w_lo) {
        for (int i = 0; i < m; ++i) {
          CovProvider cov = [&](const Vector& grid_w) {
            return functional_variance(
                problem, fit, rep, trajectory_functional(problem, j, i, grid_w));
          };
          sf.pk.push_back(summarize(sub.grid.points, sf.trajectory.col(i),
                                    sf.trajectory_se.col(i), cov, w_lo, w_hi,
                                    config.ci_level));
        }
      }
      // prediction window trough and threshold probability (component 0)
      if (sub.grid.horizon_start) {
        const int h0 = *sub.grid.horizon_start;
        int imin = h0;
        for (int idx = h0; idx < sub.n(); ++idx)
          if (sf.trajectory(idx, 0) < sf.trajectory(imin, 0)) imin = idx;
        PkEstimate trough;
        trough.estimate = sf.trajectory(imin, 0);
        trough.se = sf.trajectory_se(imin, 0);
        std::tie(trough.lo, trough.hi) = credible_interval(
            trough.estimate, trough.se, config.ci_level, true);
        sf.predicted_trough = trough;
        sf.prob_trough_below = threshold_probability(
            trough.estimate, trough.se, config.cmin_threshold, true);
      }
    }
    result.subjects.push_back(std::move(sf));
  }
  return result;
}

}  // namespace mixode
