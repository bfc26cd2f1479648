#include "mixode/gp_fit.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "mixode/quasi_newton.hpp"

namespace mixode {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Prepared {
  Vector times;
  Vector resid;  // values - mean
};

// average values at duplicate times; K + sigma^2 I must stay well-posed
Prepared dedupe(const Vector& times, const Vector& values, double mean_value) {
  Prepared out;
  std::vector<double> t, v;
  Eigen::Index i = 0;
  while (i < times.size()) {
    Eigen::Index j = i;
    double sum = 0.0;
    while (j < times.size() && times[j] == times[i]) sum += values[j], ++j;
    t.push_back(times[i]);
    v.push_back(sum / static_cast<double>(j - i) - mean_value);
    i = j;
  }
  out.times = Eigen::Map<Vector>(t.data(), static_cast<Eigen::Index>(t.size()));
  out.resid = Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  return out;
}

struct MarginalEval {
  double nll;
  Vector grad;  // in (log phi1, log phi2 [, log sigma])
};

MarginalEval marginal_nll(const Prepared& p, double smoothness,
                          double log_phi1, double log_phi2, double log_sigma,
                          bool fit_sigma) {
  const Eigen::Index n = p.times.size();
  KernelConfig cfg{std::exp(log_phi1), std::exp(log_phi2), smoothness};
  const double sigma2 = std::exp(2.0 * log_sigma);
  Matrix a = kernel_matrix(p.times, p.times, cfg);
  a.diagonal().array() += sigma2 + 1e-10 * cfg.variance_scale;
  Eigen::LLT<Matrix> llt(a);
  MarginalEval out;
  out.grad.resize(fit_sigma ? 3 : 2);
  if (llt.info() != Eigen::Success) {
    out.nll = std::numeric_limits<double>::infinity();
    out.grad.setZero();
    return out;
  }
  const Vector alpha = llt.solve(p.resid);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  out.nll = 0.5 * (p.resid.dot(alpha) + logdet + n * std::log(2.0 * kPi));

  const Matrix a_inv = llt.solve(Matrix::Identity(n, n));
  // dNLL/dp = 0.5 [ tr(A^{-1} dA) - alpha^T dA alpha ]
  Matrix dk_dlphi2(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index ii = 0; ii < n; ++ii)
      dk_dlphi2(ii, j) =
          matern_dbandwidth(std::abs(p.times[ii] - p.times[j]), cfg) *
          cfg.bandwidth;
  Matrix k = a;
  k.diagonal().array() -= sigma2 + 1e-10 * cfg.variance_scale;
  out.grad[0] = 0.5 * ((a_inv.array() * k.array()).sum() -
                       alpha.dot(k * alpha));  // dA/dlog phi1 = K
  out.grad[1] = 0.5 * ((a_inv.array() * dk_dlphi2.array()).sum() -
                       alpha.dot(dk_dlphi2 * alpha));
  if (fit_sigma)
    out.grad[2] = 0.5 * (2.0 * sigma2 * a_inv.trace() -
                         2.0 * sigma2 * alpha.squaredNorm());
  return out;
}

}  // namespace

HyperFit fit_hyperparameters(const Vector& times, const Vector& values,
                             double smoothness,
                             std::optional<double> known_noise,
                             double mean_value) {
  if (times.size() != values.size())
    throw Error(ErrorCode::InvalidArgument, "times/values length mismatch");
  Prepared p = dedupe(times, values, mean_value);
  const Eigen::Index n = p.times.size();
  if (n < 3)
    throw Error(ErrorCode::InsufficientData,
                "GP hyperparameter fitting needs at least 3 observations");
  for (Eigen::Index i = 1; i < n; ++i)
    if (!(p.times[i] > p.times[i - 1]))
      throw Error(ErrorCode::InvalidArgument,
                  "times must be increasing after de-duplication");

  const double range = p.times[n - 1] - p.times[0];
  const double var_y =
      std::max((p.resid.array() - p.resid.mean()).square().mean(), 1e-10);
  const double sd_y = std::sqrt(var_y);
  const bool fit_sigma = !known_noise.has_value();
  const double sigma0 = fit_sigma ? std::max(0.2 * sd_y, 1e-6)
                                  : std::max(*known_noise, 1e-12);

  // data-driven multi-start over the bandwidth
  const double base_bw = range / static_cast<double>(n) * 5.0;
  std::vector<double> bw_starts = {0.25 * base_bw, 0.5 * base_bw, base_bw,
                                   2.0 * base_bw, 0.5 * range};

  ValueGrad objective = [&](const Vector& x, Vector* grad) {
    const double ls = fit_sigma ? x[2] : std::log(sigma0);
    MarginalEval e = marginal_nll(p, smoothness, x[0], x[1], ls, fit_sigma);
    if (grad) *grad = e.grad;
    return e.nll;
  };

  QnOptions opts;
  opts.max_iterations = 200;
  opts.grad_tol = 1e-6;
  bool any = false;
  QnResult best;
  double best_start_value = std::numeric_limits<double>::infinity();
  for (double bw : bw_starts) {
    Vector x0(fit_sigma ? 3 : 2);
    x0[0] = std::log(var_y);
    x0[1] = std::log(std::max(bw, 1e-8));
    if (fit_sigma) x0[2] = std::log(sigma0);
    double f0 = objective(x0, nullptr);
    if (!std::isfinite(f0)) continue;
    best_start_value = std::min(best_start_value, f0);
    QnResult r;
    try {
      r = bfgs_minimize(objective, x0, opts);
    } catch (const Error&) {
      continue;
    }
    if (!std::isfinite(r.value)) continue;
    if (!any || r.value < best.value) best = r, any = true;
  }
  if (!any)
    throw Error(ErrorCode::NonConvergence,
                "all GP hyperparameter starts diverged");

  // cap the bandwidth at the time range (flat data pushes it unbounded)
  if (best.x[1] > std::log(std::max(range, 1e-8))) {
    best.x[1] = std::log(std::max(range, 1e-8));
    Vector g;
    best.value = objective(best.x, &g);
    best.gradient = g;
    best.converged = false;
  }

  HyperFit fit;
  fit.variance_scale = std::exp(best.x[0]);
  fit.bandwidth = std::exp(best.x[1]);
  fit.noise_sd = fit_sigma ? std::exp(best.x[2]) : sigma0;
  fit.log_marginal = -best.value;
  fit.converged = best.converged &&
                  best.gradient.lpNorm<Eigen::Infinity>() <=
                      1e-5 * std::max(1.0, std::abs(best.value));
  if (!(best.value <= best_start_value))
    fit.converged = false;  // should not happen with a monotone line search
  return fit;
}

Vector gp_posterior_mean(const Vector& obs_times, const Vector& obs_values,
                         const Vector& grid, const KernelConfig& cfg,
                         double noise_sd, double mean_value) {
  Prepared p = dedupe(obs_times, obs_values, mean_value);
  Matrix kxx = kernel_matrix(p.times, p.times, cfg);
  kxx.diagonal().array() +=
      noise_sd * noise_sd + 1e-10 * cfg.variance_scale;
  Eigen::LLT<Matrix> llt(kxx);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::Numerical,
                "GP predictive mean: covariance factorization failed");
  Matrix kgx = kernel_matrix(grid, p.times, cfg);
  return (kgx * llt.solve(p.resid)).array() + mean_value;
}

}  // namespace mixode
