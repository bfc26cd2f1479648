#include "mixode/optimizer.hpp"

#include <cmath>
#include <limits>

namespace mixode {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double scaled_inf_norm_bound(double value) {
  return std::max(1.0, std::abs(value));
}

// Factor a block, escalating a diagonal ridge until it succeeds. Returns the
// ridge used; throws past 1e-2 of the mean diagonal.
double factor_block(const Matrix& h, Eigen::LLT<Matrix>* llt) {
  Eigen::LLT<Matrix> f(h);
  if (f.info() == Eigen::Success) {
    *llt = std::move(f);
    return 0.0;
  }
  const double scale = std::max(h.diagonal().cwiseAbs().mean(), 1e-300);
  for (double ridge = 1e-10; ridge <= 1e-2 * 1.0000001; ridge *= 10.0) {
    Matrix hj = h;
    hj.diagonal().array() += ridge * scale;
    Eigen::LLT<Matrix> fj(hj);
    if (fj.info() == Eigen::Success) {
      *llt = std::move(fj);
      return ridge * scale;
    }
  }
  throw Error(ErrorCode::Numerical,
              "Hessian block could not be factorized even with a ridge");
}

double logdet_from_factors(const std::vector<Eigen::LLT<Matrix>>& factors) {
  double v = 0.0;
  for (const auto& f : factors)
    v += 2.0 * f.matrixLLT().diagonal().array().log().sum();
  return v;
}

}  // namespace

InnerSolution inner_optimize(const Problem& problem, const Vector& omega,
                             const Vector& u_start, const InnerOptions& opts) {
  const ULayout layout = problem.u_layout();
  if (u_start.size() != layout.dim || !u_start.allFinite())
    throw Error(ErrorCode::InvalidArgument,
                "inner optimization needs a finite u_start of the right size");

  InnerSolution sol;
  sol.u_hat = u_start;

  double value;
  Vector grad;
  std::vector<Matrix> blocks;
  if (!eval_posterior(problem, sol.u_hat, omega, &value, &grad, &blocks))
    throw InnerFailure("posterior is non-finite at the inner starting point",
                       sol);

  auto value_only = [&](const Vector& u, double* out) {
    return eval_posterior(problem, u, omega, out, nullptr, nullptr);
  };

  bool tried_lbfgs = false;
  int iter = 0;
  int polish_rounds = 0;
  while (iter < opts.max_iterations) {
    if (grad.lpNorm<Eigen::Infinity>() <=
        opts.grad_tol * scaled_inf_norm_bound(value)) {
      sol.converged = true;
      break;
    }
    ++iter;

    // per-subject Newton directions
    Vector dir(layout.dim);
    bool newton_ok = true;
    for (int j = 0; j < problem.s(); ++j) {
      const auto& span = layout.spans[j];
      const int dim = span.r + span.n * span.m;
      Eigen::LLT<Matrix> f;
      try {
        factor_block(blocks[j], &f);
      } catch (const Error&) {
        newton_ok = false;
        break;
      }
      dir.segment(span.offset, dim) =
          -f.solve(grad.segment(span.offset, dim));
    }
    double slope = newton_ok ? grad.dot(dir)
                             : std::numeric_limits<double>::infinity();

    // Evaluation noise in Q swamps decreases below this; Armijo cannot
    // certify such steps, but full Newton steps still polish the gradient.
    const double noise_floor = 1024.0 *
                               std::numeric_limits<double>::epsilon() *
                               scaled_inf_norm_bound(value);
    if (newton_ok && slope < 0.0 && 0.5 * (-slope) <= noise_floor &&
        grad.lpNorm<Eigen::Infinity>() <=
            1e-3 * scaled_inf_norm_bound(value)) {
      if (polish_rounds >= 4) {
        sol.converged = true;
        break;
      }
      ++polish_rounds;
      Vector u_try = sol.u_hat + dir;
      double v_try;
      if (!value_only(u_try, &v_try)) {
        sol.converged = true;  // cannot even evaluate closer; stop here
        break;
      }
      sol.u_hat = std::move(u_try);
      value = v_try;
      if (!eval_posterior(problem, sol.u_hat, omega, &value, &grad, &blocks))
        throw InnerFailure(
            "posterior became non-finite during inner iteration", sol);
      continue;
    }

    if (!newton_ok || !(slope < 0.0)) {
      dir = -grad;
      slope = -grad.squaredNorm();
    }

    // backtracking Armijo
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < opts.max_line_search; ++ls) {
      Vector u_try = sol.u_hat + t * dir;
      double v_try;
      if (value_only(u_try, &v_try) && v_try <= value + 1e-4 * t * slope) {
        sol.u_hat = std::move(u_try);
        value = v_try;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted && dir != -grad) {
      // retry along steepest descent before giving up
      dir = -grad;
      slope = -grad.squaredNorm();
      t = 1.0 / std::max(1.0, grad.lpNorm<Eigen::Infinity>());
      for (int ls = 0; ls < opts.max_line_search; ++ls) {
        Vector u_try = sol.u_hat + t * dir;
        double v_try;
        if (value_only(u_try, &v_try) && v_try <= value + 1e-4 * t * slope) {
          sol.u_hat = std::move(u_try);
          value = v_try;
          accepted = true;
          break;
        }
        t *= 0.5;
      }
    }
    if (!accepted) {
      if (0.5 * std::abs(slope) <= noise_floor &&
          grad.lpNorm<Eigen::Infinity>() <=
              1e-3 * scaled_inf_norm_bound(value)) {
        sol.converged = true;  // descent below floating-point resolution
        break;
      }
      if (tried_lbfgs) {
        sol.q_value = value;
        sol.iterations = iter;
        throw InnerFailure("inner line search found no descent direction", sol);
      }
      tried_lbfgs = true;
      QnOptions qopts;
      qopts.max_iterations = opts.max_iterations;
      qopts.grad_tol = opts.grad_tol;
      ValueGrad fq = [&](const Vector& u, Vector* g) {
        double v;
        Vector gg;
        if (!eval_posterior(problem, u, omega, &v, g ? &gg : nullptr, nullptr))
          return std::numeric_limits<double>::infinity();
        if (g) *g = std::move(gg);
        return v;
      };
      QnResult qr = lbfgs_minimize(fq, sol.u_hat, qopts);
      if (qr.value < value) {
        sol.u_hat = qr.x;
        value = qr.value;
      }
    }
    if (!eval_posterior(problem, sol.u_hat, omega, &value, &grad, &blocks))
      throw InnerFailure("posterior became non-finite during inner iteration",
                         sol);
  }

  sol.q_value = value;
  sol.iterations = iter;
  sol.hessian_factors.resize(problem.s());
  for (int j = 0; j < problem.s(); ++j) {
    const double ridge = factor_block(blocks[j], &sol.hessian_factors[j]);
    sol.max_block_ridge = std::max(sol.max_block_ridge, ridge);
  }
  sol.logdet_h = logdet_from_factors(sol.hessian_factors);
  return sol;
}

LaplaceResult laplace_objective(const Problem& problem, const Vector& omega,
                                const std::optional<Vector>& warm_u,
                                const InnerOptions& opts) {
  const ULayout layout = problem.u_layout();
  Vector u0 = warm_u.value_or(Vector::Zero(layout.dim));
  LaplaceResult out;
  out.inner = inner_optimize(problem, omega, u0, opts);
  out.value = out.inner.q_value + 0.5 * out.inner.logdet_h -
              0.5 * static_cast<double>(layout.dim) * kLog2Pi;
  return out;
}

namespace {

// Objective wrapper around the Laplace value with warm-started inner solves
// and optional frozen omega coordinates. Non-finite or failed inner solves
// surface as +inf so the line search backs away.
class OuterObjective {
 public:
  OuterObjective(const Problem& problem, const OuterOptions& opts, Vector warm)
      : problem_(problem), opts_(opts), warm_(std::move(warm)) {}

  double value(const Vector& omega, InnerSolution* sol_out = nullptr) {
    try {
      LaplaceResult r =
          laplace_objective(problem_, omega, warm_, opts_.inner);
      warm_ = r.inner.u_hat;
      if (sol_out) *sol_out = std::move(r.inner);
      return r.value;
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  }

  // central finite differences, skipping frozen coordinates
  Vector gradient(const Vector& omega, const Vector& warm_center) {
    Vector g = Vector::Zero(omega.size());
    for (Eigen::Index k = 0; k < omega.size(); ++k) {
      if (frozen(k)) continue;
      const double h = opts_.fd_step * std::max(1.0, std::abs(omega[k]));
      Vector wp = omega, wm = omega;
      wp[k] += h;
      wm[k] -= h;
      warm_ = warm_center;
      const double fp = value(wp);
      warm_ = warm_center;
      const double fm = value(wm);
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw Error(ErrorCode::NonConvergence,
                    "outer gradient probe failed near the current iterate");
      g[k] = (fp - fm) / (2.0 * h);
    }
    warm_ = warm_center;
    return g;
  }

  bool frozen(Eigen::Index k) const {
    return !opts_.frozen.empty() && opts_.frozen[static_cast<std::size_t>(k)];
  }

  const Vector& warm() const { return warm_; }
  void set_warm(Vector w) { warm_ = std::move(w); }

 private:
  const Problem& problem_;
  const OuterOptions& opts_;
  Vector warm_;
};

}  // namespace

OuterSolution outer_optimize(const Problem& problem, const Vector& omega0,
                             const Vector& u0, const OuterOptions& opts) {
  problem.validate();
  if (omega0.size() != problem.omega_dim())
    throw Error(ErrorCode::InvalidArgument,
                "omega0 has the wrong dimension for this problem");
  if (!opts.frozen.empty() &&
      opts.frozen.size() != static_cast<std::size_t>(problem.omega_dim()))
    throw Error(ErrorCode::InvalidArgument,
                "frozen mask must match the omega dimension");

  OuterObjective obj(problem, opts, u0);

  QnOptions qopts;
  qopts.max_iterations = opts.max_iterations;
  qopts.grad_tol = opts.grad_tol;
  qopts.obj_tol = opts.obj_tol;
  qopts.converge_on_line_search_failure = opts.obj_tol > 0.0;

  ValueGrad f = [&](const Vector& omega, Vector* grad) {
    const double v = obj.value(omega);
    if (grad) {
      if (!std::isfinite(v))
        throw Error(ErrorCode::NonConvergence,
                    "outer objective is non-finite where a gradient was "
                    "requested");
      *grad = obj.gradient(omega, obj.warm());
    }
    return v;
  };

  QnResult qr = bfgs_minimize(f, omega0, qopts);

  OuterSolution out;
  out.omega_hat = qr.x;
  out.converged = qr.converged;
  out.iterations = qr.iterations;
  out.trace = qr.trace;

  LaplaceResult final_eval =
      laplace_objective(problem, out.omega_hat, obj.warm(), opts.inner);
  out.neg_log_marginal = final_eval.value;
  out.inner = std::move(final_eval.inner);

  // omega covariance: inverse of the symmetrized FD Hessian of the objective
  const Eigen::Index d = out.omega_hat.size();
  Matrix hess = Matrix::Zero(d, d);
  const Vector warm_center = out.inner.u_hat;
  auto probe = [&](const Vector& w) {
    obj.set_warm(warm_center);
    return obj.value(w);
  };
  const double f0 = out.neg_log_marginal;
  std::vector<double> steps(d);
  for (Eigen::Index k = 0; k < d; ++k)
    steps[k] = opts.hess_step * std::max(1.0, std::abs(out.omega_hat[k]));
  for (Eigen::Index k = 0; k < d; ++k) {
    if (obj.frozen(k)) continue;
    Vector wp = out.omega_hat, wm = out.omega_hat;
    wp[k] += steps[k];
    wm[k] -= steps[k];
    const double fp = probe(wp), fm = probe(wm);
    hess(k, k) = (fp - 2.0 * f0 + fm) / (steps[k] * steps[k]);
    for (Eigen::Index q = k + 1; q < d; ++q) {
      if (obj.frozen(q)) continue;
      Vector wpp = out.omega_hat, wpm = out.omega_hat, wmp = out.omega_hat,
             wmm = out.omega_hat;
      wpp[k] += steps[k];
      wpp[q] += steps[q];
      wpm[k] += steps[k];
      wpm[q] -= steps[q];
      wmp[k] -= steps[k];
      wmp[q] += steps[q];
      wmm[k] -= steps[k];
      wmm[q] -= steps[q];
      const double v = (probe(wpp) - probe(wpm) - probe(wmp) + probe(wmm)) /
                       (4.0 * steps[k] * steps[q]);
      hess(k, q) = v;
      hess(q, k) = v;
    }
  }
  // invert over the free coordinates only
  std::vector<Eigen::Index> free_idx;
  for (Eigen::Index k = 0; k < d; ++k)
    if (!obj.frozen(k)) free_idx.push_back(k);
  Matrix hfree(free_idx.size(), free_idx.size());
  for (std::size_t a = 0; a < free_idx.size(); ++a)
    for (std::size_t b = 0; b < free_idx.size(); ++b)
      hfree(a, b) = hess(free_idx[a], free_idx[b]);
  hfree = 0.5 * (hfree + hfree.transpose().eval());
  Matrix cov_free;
  Eigen::LLT<Matrix> llt(hfree);
  if (llt.info() == Eigen::Success) {
    cov_free = llt.solve(Matrix::Identity(hfree.rows(), hfree.cols()));
  } else {
    // indefinite FD Hessian: floor the spectrum before inverting
    Eigen::SelfAdjointEigenSolver<Matrix> es(hfree);
    Vector ev = es.eigenvalues();
    const double floor_ev = std::max(1e-10, 1e-10 * ev.cwiseAbs().maxCoeff());
    Vector inv = (ev.cwiseMax(floor_ev)).cwiseInverse();
    cov_free = es.eigenvectors() * inv.asDiagonal() *
               es.eigenvectors().transpose();
  }
  out.omega_cov = Matrix::Zero(d, d);
  for (std::size_t a = 0; a < free_idx.size(); ++a)
    for (std::size_t b = 0; b < free_idx.size(); ++b)
      out.omega_cov(free_idx[a], free_idx[b]) = cov_free(a, b);
  out.omega_cov = 0.5 * (out.omega_cov + out.omega_cov.transpose().eval());
  return out;
}

namespace {

// Multi-start Gauss-Newton least squares matching f(x0, theta, t) to the GP
// derivative of the stage-one fit; log-parameterized where positivity holds.
Vector derivative_matching_theta(const Problem& problem, int j,
                                 const std::vector<Vector>& x_cols,
                                 const std::vector<Vector>& dx_cols) {
  const OdeModel& model = *problem.model;
  const SubjectProblem& sub = problem.subjects[j];
  const int l = model.n_params;
  const int n = sub.n();
  const int m = model.n_components;
  const Vector& times = sub.grid.points;

  auto to_raw = [&](const Vector& theta) {
    Vector raw(l);
    for (int p = 0; p < l; ++p)
      raw[p] = model.positivity[p] ? std::log(std::max(theta[p], 1e-12))
                                   : theta[p];
    return raw;
  };
  auto to_nat = [&](const Vector& raw) {
    Vector theta(l);
    for (int p = 0; p < l; ++p)
      theta[p] = model.positivity[p] ? std::exp(raw[p]) : raw[p];
    return theta;
  };

  auto residual = [&](const Vector& theta, Matrix* jac_raw) -> Vector {
    Vector res(n * m);
    if (jac_raw) jac_raw->setZero(n * m, l);
    for (int t = 0; t < n; ++t) {
      Vector xt(m);
      for (int i = 0; i < m; ++i) xt[i] = x_cols[i][t];
      Vector fv = model.rhs(xt, theta, times[t], sub.dose);
      for (int i = 0; i < m; ++i) res[i * n + t] = fv[i] - dx_cols[i][t];
      if (jac_raw) {
        Matrix jt = model.jac_theta(xt, theta, times[t], sub.dose);
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < l; ++p)
            (*jac_raw)(i * n + t, p) =
                jt(i, p) * (model.positivity[p] ? theta[p] : 1.0);
      }
    }
    return res;
  };

  // cartesian multi-start grid per parameter
  std::vector<std::vector<double>> starts(l);
  for (int p = 0; p < l; ++p)
    starts[p] = model.positivity[p]
                    ? std::vector<double>{0.25, 1.0, 4.0, 16.0}
                    : std::vector<double>{-2.0, 0.0, 2.0};
  std::vector<Vector> candidates;
  std::vector<int> counter(l, 0);
  while (true) {
    Vector theta(l);
    for (int p = 0; p < l; ++p) theta[p] = starts[p][counter[p]];
    candidates.push_back(theta);
    int p = 0;
    while (p < l && ++counter[p] == static_cast<int>(starts[p].size()))
      counter[p++] = 0;
    if (p == l) break;
    if (candidates.size() >= 256) break;
  }

  Vector best_theta = candidates.front();
  double best_cost = std::numeric_limits<double>::infinity();
  for (const Vector& cand : candidates) {
    Vector raw = to_raw(cand);
    double cost = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 40; ++it) {
      Vector theta = to_nat(raw);
      Matrix jac;
      Vector res;
      try {
        res = residual(theta, &jac);
      } catch (const std::exception&) {
        break;
      }
      if (!res.allFinite() || !jac.allFinite()) break;
      cost = 0.5 * res.squaredNorm();
      Matrix jtj = jac.transpose() * jac;
      jtj.diagonal().array() += 1e-8 * (jtj.trace() / l + 1.0);
      Vector step = jtj.ldlt().solve(-jac.transpose() * res);
      double t = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 30; ++ls) {
        Vector raw_try = raw + t * step;
        Vector res_try;
        try {
          res_try = residual(to_nat(raw_try), nullptr);
        } catch (const std::exception&) {
          t *= 0.5;
          continue;
        }
        if (res_try.allFinite() && 0.5 * res_try.squaredNorm() < cost) {
          raw = raw_try;
          moved = true;
          break;
        }
        t *= 0.5;
      }
      if (!moved) break;
    }
    if (std::isfinite(cost) && cost < best_cost) {
      best_cost = cost;
      best_theta = to_nat(raw);
    }
  }
  return best_theta;
}

}  // namespace

StartingValues starting_values(
    const Problem& problem,
    const std::vector<std::vector<HyperFit>>& hyper_fits,
    const InnerOptions& opts) {
  problem.validate();
  const OdeModel& model = *problem.model;
  const ULayout layout = problem.u_layout();
  const int s = problem.s(), m = problem.m(), l = problem.l(), r = problem.r();
  if (static_cast<int>(hyper_fits.size()) != s)
    throw Error(ErrorCode::InvalidArgument,
                "need stage-one fits for every subject");

  StartingValues sv;
  sv.u0.setZero(layout.dim);
  sv.omega0.setZero(problem.omega_dim());
  sv.theta_prefit.assign(s, Vector::Zero(l));

  // trajectory starts: observation values where observed, stage-one GP
  // posterior mean elsewhere
  std::vector<std::vector<Vector>> x_start(s), dx_start(s);
  for (int j = 0; j < s; ++j) {
    const SubjectProblem& sub = problem.subjects[j];
    x_start[j].resize(m);
    dx_start[j].resize(m);
    for (int i = 0; i < m; ++i) {
      const HyperFit& hf = hyper_fits[j][i];
      const KernelConfig& cfg = sub.kernel[i];
      Vector x;
      const auto& idx = sub.obs_idx[i];
      const Vector& yv = sub.obs_values[i];
      if (idx.empty()) {
        x = sub.gp[i].mean;
      } else {
        Vector obs_t(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k)
          obs_t[static_cast<Eigen::Index>(k)] = sub.grid.points[idx[k]];
        x = gp_posterior_mean(obs_t, yv, sub.grid.points, cfg, hf.noise_sd,
                              sub.gp[i].mean[0]);
        for (std::size_t k = 0; k < idx.size(); ++k)
          x[idx[k]] = yv[static_cast<Eigen::Index>(k)];
      }
      x_start[j][i] = x;
      dx_start[j][i] =
          sub.gp[i].mean_deriv + sub.gp[i].m * (x - sub.gp[i].mean);
    }
  }

  // independent per-subject pre-fits for theta
  std::vector<bool> prefit_ok(s, false);
  int n_ok = 0;
  for (int j = 0; j < s; ++j) {
    try {
      Vector theta0 =
          derivative_matching_theta(problem, j, x_start[j], dx_start[j]);
      // one-subject problem, all parameters random, numerically flat prior
      Problem single;
      single.model = problem.model;
      single.subjects = {problem.subjects[j]};
      single.re_params.resize(l);
      for (int p = 0; p < l; ++p) single.re_params[p] = p;
      single.noise_mode = NoiseMode::Frozen;
      single.subjects[0].frozen_noise.resize(m);
      for (int i = 0; i < m; ++i)
        single.subjects[0].frozen_noise[i] =
            std::max(hyper_fits[j][i].noise_sd, 1e-8);
      Vector omega_single(single.omega_dim());
      omega_single.setZero();
      Vector beta_flat = Vector::Zero(single.n_beta());
      {
        int k = 0;
        for (int col = 0; col < l; ++col)
          for (int row = col; row < l; ++row) {
            beta_flat[k] = (row == col) ? std::log(1e3) : 0.0;
            ++k;
          }
      }
      omega_single.head(single.n_beta()) = beta_flat;
      for (int p = 0; p < l; ++p)
        omega_single[single.n_beta() + p] =
            model.positivity[p] ? std::log(std::max(theta0[p], 1e-12))
                                : theta0[p];
      const ULayout sl = single.u_layout();
      const int nj = problem.subjects[j].n();
      Vector u_single = Vector::Zero(sl.dim);
      for (int i = 0; i < m; ++i)
        u_single.segment(sl.spans[0].offset + l + i * nj, nj) = x_start[j][i];
      InnerSolution isol = inner_optimize(single, omega_single, u_single, opts);
      Vector b_hat = isol.u_hat.segment(0, l);
      Vector theta_nat(l);
      for (int p = 0; p < l; ++p)
        theta_nat[p] = (model.positivity[p] ? std::exp(omega_single[single.n_beta() + p])
                                            : omega_single[single.n_beta() + p]) +
                       b_hat[p];
      sv.theta_prefit[j] = theta_nat;
      prefit_ok[j] = true;
      ++n_ok;
    } catch (const Error&) {
      prefit_ok[j] = false;
    }
  }
  if (n_ok == 0)
    throw Error(ErrorCode::NonConvergence,
                "every per-subject pre-fit failed during initialization");

  // eta: mean of the per-subject estimates over the successful subset
  Vector eta0 = Vector::Zero(l);
  for (int j = 0; j < s; ++j)
    if (prefit_ok[j]) eta0 += sv.theta_prefit[j];
  eta0 /= static_cast<double>(n_ok);
  for (int p = 0; p < l; ++p)
    sv.omega0[problem.n_beta() + p] =
        model.positivity[p] ? std::log(std::max(eta0[p], 1e-8)) : eta0[p];

  // random-effect starts and their sample covariance
  Matrix b0(s, r);
  for (int j = 0; j < s; ++j)
    for (int k = 0; k < r; ++k)
      b0(j, k) = prefit_ok[j]
                     ? sv.theta_prefit[j][problem.re_params[k]] -
                           eta0[problem.re_params[k]]
                     : 0.0;
  Matrix cov = Matrix::Identity(r, r) * 1e-6;
  if (n_ok >= 2) {
    Vector mean_b = b0.colwise().mean().transpose();
    Matrix centered = b0.rowwise() - mean_b.transpose();
    cov = centered.transpose() * centered / static_cast<double>(s - 1);
  }
  sv.omega0.head(problem.n_beta()) = beta_from_covariance(cov, 1e-6);

  // noise starts from the stage-one fits
  if (problem.noise_mode == NoiseMode::Shared) {
    for (int i = 0; i < m; ++i) {
      double ms = 0.0;
      for (int j = 0; j < s; ++j)
        ms += hyper_fits[j][i].noise_sd * hyper_fits[j][i].noise_sd;
      sv.omega0[problem.n_beta() + l + i] =
          0.5 * std::log(std::max(ms / s, 1e-16));
    }
  } else if (problem.noise_mode == NoiseMode::PerSubject) {
    for (int j = 0; j < s; ++j)
      for (int i = 0; i < m; ++i)
        sv.omega0[problem.n_beta() + l + j * m + i] =
            std::log(std::max(hyper_fits[j][i].noise_sd, 1e-8));
  }

  // latent starts
  for (int j = 0; j < s; ++j) {
    const auto& span = layout.spans[j];
    for (int k = 0; k < r; ++k) sv.u0[span.offset + k] = b0(j, k);
    for (int i = 0; i < m; ++i)
      sv.u0.segment(span.offset + r + i * span.n, span.n) = x_start[j][i];
  }
  return sv;
}

}  // namespace mixode
