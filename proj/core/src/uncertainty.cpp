#include "mixode/uncertainty.hpp"

#include <cmath>

namespace mixode {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Acklam's rational approximation refined with one Halley step; accurate to
// full double precision for p in (0,1).
double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw Error(ErrorCode::InvalidArgument,
                "normal quantile needs p strictly inside (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= phigh) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

std::pair<double, double> credible_interval(double estimate, double se,
                                            double level, bool floor_at_zero) {
  if (!(se >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "credible_interval needs se >= 0");
  if (!(level > 0.0 && level < 1.0))
    throw Error(ErrorCode::InvalidArgument,
                "credible level must be inside (0,1)");
  const double z = normal_quantile(0.5 + 0.5 * level);
  double lo = estimate - z * se, hi = estimate + z * se;
  if (floor_at_zero) lo = std::max(lo, 0.0);
  return {lo, hi};
}

double threshold_probability(double estimate, double se, double threshold,
                             bool below) {
  if (!(se >= 0.0))
    throw Error(ErrorCode::InvalidArgument,
                "threshold_probability needs se >= 0");
  double p_below;
  if (se == 0.0)
    p_below = estimate < threshold ? 1.0 : (estimate > threshold ? 0.0 : 0.5);
  else
    p_below = normal_cdf((threshold - estimate) / se);
  return below ? p_below : 1.0 - p_below;
}

UncertaintyReport delta_method_variance(const Problem& problem,
                                        const OuterSolution& fit,
                                        const OuterOptions& opts) {
  if (!fit.converged)
    throw Error(ErrorCode::NonConvergence,
                "uncertainty quantification needs a converged fit");
  const ULayout layout = problem.u_layout();
  const Eigen::Index ud = layout.dim;
  const Eigen::Index od = fit.omega_hat.size();

  UncertaintyReport rep;
  rep.j_matrix = Matrix::Zero(ud, od);
  rep.omega_se = fit.omega_cov.diagonal().cwiseMax(0.0).cwiseSqrt();

  auto frozen = [&](Eigen::Index k) {
    return !opts.frozen.empty() && opts.frozen[static_cast<std::size_t>(k)];
  };

  // d u_hat / d omega column-by-column via warm-started inner re-solves
  for (Eigen::Index k = 0; k < od; ++k) {
    if (frozen(k)) continue;
    const double h = opts.fd_step * std::max(1.0, std::abs(fit.omega_hat[k]));
    Vector wp = fit.omega_hat, wm = fit.omega_hat;
    wp[k] += h;
    wm[k] -= h;
    InnerSolution up = inner_optimize(problem, wp, fit.inner.u_hat, opts.inner);
    InnerSolution um = inner_optimize(problem, wm, fit.inner.u_hat, opts.inner);
    rep.j_matrix.col(k) = (up.u_hat - um.u_hat) / (2.0 * h);
  }

  // first variance term: rowwise quadratic form with Sigma_omega
  const Matrix js = rep.j_matrix * fit.omega_cov;  // |u| x |omega|
  Vector var1 = (js.array() * rep.j_matrix.array()).rowwise().sum();

  // second term: diagonal of the per-subject conditional covariance H^{-1}
  Vector var2 = Vector::Zero(ud);
  for (int j = 0; j < problem.s(); ++j) {
    const auto& span = layout.spans[j];
    const int dim = span.r + span.n * span.m;
    Matrix inv = fit.inner.hessian_factors[j].solve(Matrix::Identity(dim, dim));
    var2.segment(span.offset, dim) = inv.diagonal();
  }

  rep.u_se = (var1.cwiseMax(0.0) + var2.cwiseMax(0.0)).cwiseSqrt();
  return rep;
}

double functional_variance(const Problem& problem, const OuterSolution& fit,
                           const UncertaintyReport& report, const Vector& w) {
  const ULayout layout = problem.u_layout();
  if (w.size() != layout.dim)
    throw Error(ErrorCode::InvalidArgument,
                "functional weight vector must span the latent dimension");
  const Vector a = report.j_matrix.transpose() * w;  // |omega|
  double var = a.dot(fit.omega_cov * a);
  for (int j = 0; j < problem.s(); ++j) {
    const auto& span = layout.spans[j];
    const int dim = span.r + span.n * span.m;
    Vector wj = w.segment(span.offset, dim);
    if (wj.isZero(0.0)) continue;
    var += wj.dot(fit.inner.hessian_factors[j].solve(wj));
  }
  return std::max(var, 0.0);
}

Vector trajectory_functional(const Problem& problem, int j, int i,
                             const Vector& grid_weights) {
  const ULayout layout = problem.u_layout();
  const auto& span = layout.spans[j];
  if (grid_weights.size() != span.n)
    throw Error(ErrorCode::InvalidArgument,
                "grid weight vector must match the subject grid size");
  Vector w = Vector::Zero(layout.dim);
  w.segment(span.offset + span.r + i * span.n, span.n) = grid_weights;
  return w;
}

}  // namespace mixode
