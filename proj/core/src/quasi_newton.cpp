#include "mixode/quasi_newton.hpp"

#include <cmath>
#include <deque>

namespace mixode {

namespace {

bool scaled_grad_small(const Vector& g, double f, double tol) {
  return g.lpNorm<Eigen::Infinity>() <= tol * std::max(1.0, std::abs(f));
}

// Backtracking Armijo search. Returns the accepted step length, or 0 on
// failure. Non-finite trial values shrink the step like any rejection.
double armijo(const ValueGrad& f, const Vector& x, double fx, double slope,
              const Vector& dir, const QnOptions& opts, Vector* x_out,
              double* f_out) {
  double t = 1.0;
  for (int ls = 0; ls < opts.max_line_search; ++ls) {
    Vector xt = x + t * dir;
    double ft = f(xt, nullptr);
    if (std::isfinite(ft) && ft <= fx + opts.armijo_c * t * slope) {
      *x_out = std::move(xt);
      *f_out = ft;
      return t;
    }
    t *= 0.5;
  }
  return 0.0;
}

}  // namespace

QnResult bfgs_minimize(const ValueGrad& f, const Vector& x0,
                       const QnOptions& opts) {
  const Eigen::Index n = x0.size();
  QnResult res;
  res.x = x0;
  Vector g(n);
  res.value = f(res.x, &g);
  if (!std::isfinite(res.value) || !g.allFinite())
    throw Error(ErrorCode::Numerical,
                "objective is non-finite at the starting point");
  res.gradient = g;
  res.trace.push_back(res.value);
  Matrix h = Matrix::Identity(n, n);  // inverse Hessian approximation
  bool first = true;

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    if (scaled_grad_small(g, res.value, opts.grad_tol)) {
      res.converged = true;
      break;
    }
    Vector dir = -(h * g);
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {  // indefinite update slipped in; reset
      h = Matrix::Identity(n, n);
      dir = -g;
      slope = g.dot(dir);
    }
    Vector x_new;
    double f_new;
    const double step = armijo(f, res.x, res.value, slope, dir, opts, &x_new, &f_new);
    if (step == 0.0) {
      res.line_search_failed = true;
      if (opts.converge_on_line_search_failure) res.converged = true;
      break;
    }
    Vector g_new(n);
    f_new = f(x_new, &g_new);
    const double decrease = res.value - f_new;
    Vector s = x_new - res.x;
    Vector y = g_new - g;
    res.x = std::move(x_new);
    res.value = f_new;
    g = g_new;
    res.gradient = g;
    res.iterations = iter + 1;
    res.trace.push_back(res.value);

    const double ys = y.dot(s);
    if (ys > 1e-12 * y.norm() * s.norm()) {
      if (first) {
        h *= ys / y.squaredNorm();
        first = false;
      }
      const double rho = 1.0 / ys;
      Matrix vt = Matrix::Identity(n, n) - rho * y * s.transpose();
      h = vt.transpose() * h * vt + rho * s * s.transpose();
    }
    if (opts.obj_tol > 0.0 && decrease < opts.obj_tol) {
      res.converged = scaled_grad_small(g, res.value, opts.grad_tol) ||
                      decrease >= 0.0;
      break;
    }
  }
  if (scaled_grad_small(g, res.value, opts.grad_tol)) res.converged = true;
  return res;
}

QnResult lbfgs_minimize(const ValueGrad& f, const Vector& x0,
                        const QnOptions& opts) {
  const Eigen::Index n = x0.size();
  QnResult res;
  res.x = x0;
  Vector g(n);
  res.value = f(res.x, &g);
  if (!std::isfinite(res.value) || !g.allFinite())
    throw Error(ErrorCode::Numerical,
                "objective is non-finite at the starting point");
  res.gradient = g;
  res.trace.push_back(res.value);

  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;
  double gamma = 1.0;

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    if (scaled_grad_small(g, res.value, opts.grad_tol)) {
      res.converged = true;
      break;
    }
    // two-loop recursion
    Vector q = g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    q *= gamma;
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Vector dir = -q;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      dir = -g;
      slope = g.dot(dir);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }
    Vector x_new;
    double f_new;
    const double step = armijo(f, res.x, res.value, slope, dir, opts, &x_new, &f_new);
    if (step == 0.0) {
      res.line_search_failed = true;
      if (opts.converge_on_line_search_failure) res.converged = true;
      break;
    }
    Vector g_new(n);
    f_new = f(x_new, &g_new);
    const double decrease = res.value - f_new;
    Vector s = x_new - res.x;
    Vector y = g_new - g;
    res.x = std::move(x_new);
    res.value = f_new;
    g = g_new;
    res.gradient = g;
    res.iterations = iter + 1;
    res.trace.push_back(res.value);

    const double ys = y.dot(s);
    if (ys > 1e-12 * y.norm() * s.norm()) {
      gamma = ys / y.squaredNorm();
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / ys);
      if (static_cast<int>(s_hist.size()) > opts.lbfgs_memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    if (opts.obj_tol > 0.0 && decrease < opts.obj_tol) {
      res.converged = scaled_grad_small(g, res.value, opts.grad_tol) ||
                      decrease >= 0.0;
      break;
    }
  }
  if (scaled_grad_small(g, res.value, opts.grad_tol)) res.converged = true;
  return res;
}

}  // namespace mixode
