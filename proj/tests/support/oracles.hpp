// Test-only oracles, independent of the library implementation paths they
// check: a series/continued-fraction modified Bessel K, dense Gaussian
// conditioning and log-densities, finite differences, and closed-form ODE
// solutions.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "mixode/common.hpp"

namespace oracle {

using mixode::Matrix;
using mixode::Vector;

// ---------------------------------------------------------------------------
// Modified Bessel function of the second kind, real order nu >= 0, x > 0.
// Temme's series for x <= 2, Steed's continued fraction for x > 2, then
// upward recurrence in the order. Classic special-function evaluation,
// ~1e-12 relative accuracy away from integer orders.
inline double bessel_k(double nu, double x) {
  if (!(x > 0.0) || !(nu >= 0.0))
    throw std::invalid_argument("bessel_k oracle needs x > 0, nu >= 0");
  constexpr double kEps = 1e-16;
  constexpr int kMaxIter = 10000;
  const int nl = static_cast<int>(nu + 0.5);
  const double xmu = nu - nl;  // in [-0.5, 0.5]
  const double xmu2 = xmu * xmu;
  double rkmu, rk1;
  if (x <= 2.0) {
    const double x2 = 0.5 * x;
    const double pimu = M_PI * xmu;
    const double fact =
        std::abs(pimu) < kEps ? 1.0 : pimu / std::sin(pimu);
    double d = -std::log(x2);
    double e = xmu * d;
    const double fact2 = std::abs(e) < kEps ? 1.0 : std::sinh(e) / e;
    const double gampl = 1.0 / std::tgamma(1.0 + xmu);
    const double gammi = 1.0 / std::tgamma(1.0 - xmu);
    const double gam1 = std::abs(xmu) < 1e-8
                            ? 0.57721566490153286
                            : (gammi - gampl) / (2.0 * xmu);
    const double gam2 = 0.5 * (gammi + gampl);
    double ff = fact * (gam1 * std::cosh(e) + gam2 * fact2 * d);
    double sum = ff;
    e = std::exp(e);
    double p = 0.5 * e / gampl;
    double q = 0.5 / (e * gammi);
    double c = 1.0;
    d = x2 * x2;
    double sum1 = p;
    int i = 1;
    for (; i <= kMaxIter; ++i) {
      ff = (i * ff + p + q) / (i * i - xmu2);
      c *= d / i;
      p /= (i - xmu);
      q /= (i + xmu);
      const double del = c * ff;
      sum += del;
      const double del1 = c * (p - i * ff);
      sum1 += del1;
      if (std::abs(del) < std::abs(sum) * kEps) break;
    }
    rkmu = sum;
    rk1 = sum1 * 2.0 / x;
  } else {
    double b = 2.0 * (1.0 + x);
    double d = 1.0 / b;
    double h = d, delh = d;
    double q1 = 0.0, q2 = 1.0;
    const double a1 = 0.25 - xmu2;
    double q = a1, c = a1, a = -a1;
    double s = 1.0 + q * delh;
    for (int i = 2; i <= kMaxIter; ++i) {
      a -= 2 * (i - 1);
      c = -a * c / i;
      const double qnew = (q1 - b * q2) / a;
      q1 = q2;
      q2 = qnew;
      q += c * qnew;
      b += 2.0;
      d = 1.0 / (b + a * d);
      delh = (b * d - 1.0) * delh;
      h += delh;
      const double dels = q * delh;
      s += dels;
      if (std::abs(dels / s) < kEps) break;
    }
    h = a1 * h;
    rkmu = std::sqrt(M_PI / (2.0 * x)) * std::exp(-x) / s;
    rk1 = rkmu * (xmu + x + 0.5 - h) / x;
  }
  for (int i = 1; i <= nl; ++i) {
    const double rktemp = (xmu + i) * 2.0 / x * rk1 + rkmu;
    rkmu = rk1;
    rk1 = rktemp;
  }
  return rkmu;
}

// Matern kernel through the oracle's Bessel path (the "generic" route used
// to cross-check both the closed-form nu = 5/2 path and the library's
// Bessel path).
inline double matern_via_bessel(double d, double phi1, double phi2,
                                double nu) {
  if (d == 0.0) return phi1;
  const double z = std::sqrt(2.0 * nu) * d / phi2;
  return phi1 * std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(z, nu) *
         bessel_k(nu, z);
}

// ---------------------------------------------------------------------------
// Dense Gaussian machinery (LDLT-based, unlike the library's LLT paths).

struct ConditionalGaussian {
  Matrix mean_map;  // E[y|x] = mean_y + mean_map (x - mean_x)
  Matrix cov;
};

inline ConditionalGaussian condition_gaussian(const Matrix& sxx,
                                              const Matrix& sxy,
                                              const Matrix& syx,
                                              const Matrix& syy) {
  Eigen::LDLT<Matrix> ldlt(sxx);
  ConditionalGaussian out;
  out.mean_map = ldlt.solve(syx.transpose()).transpose();
  out.cov = syy - out.mean_map * sxy;
  return out;
}

inline double gaussian_log_pdf(const Vector& x, const Vector& mean,
                               const Matrix& cov) {
  const Eigen::Index n = x.size();
  Eigen::LDLT<Matrix> ldlt(cov);
  const Vector r = x - mean;
  const double quad = r.dot(ldlt.solve(r));
  const double logdet = ldlt.vectorD().array().log().sum();
  return -0.5 * (n * std::log(2.0 * M_PI) + logdet + quad);
}

// ---------------------------------------------------------------------------
// Finite differences.

inline Vector fd_gradient(const std::function<double(const Vector&)>& f,
                          const Vector& x, double h_rel = 1e-6) {
  Vector g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = h_rel * std::max(1.0, std::abs(x[k]));
    Vector xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    g[k] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

inline Matrix fd_hessian(const std::function<double(const Vector&)>& f,
                         const Vector& x, double h_rel = 1e-4) {
  const Eigen::Index n = x.size();
  Matrix h_mat(n, n);
  const double f0 = f(x);
  Vector steps(n);
  for (Eigen::Index k = 0; k < n; ++k)
    steps[k] = h_rel * std::max(1.0, std::abs(x[k]));
  for (Eigen::Index k = 0; k < n; ++k) {
    Vector xp = x, xm = x;
    xp[k] += steps[k];
    xm[k] -= steps[k];
    h_mat(k, k) = (f(xp) - 2.0 * f0 + f(xm)) / (steps[k] * steps[k]);
    for (Eigen::Index q = k + 1; q < n; ++q) {
      Vector xpp = x, xpm = x, xmp = x, xmm = x;
      xpp[k] += steps[k];
      xpp[q] += steps[q];
      xpm[k] += steps[k];
      xpm[q] -= steps[q];
      xmp[k] -= steps[k];
      xmp[q] += steps[q];
      xmm[k] -= steps[k];
      xmm[q] -= steps[q];
      const double v =
          (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * steps[k] * steps[q]);
      h_mat(k, q) = v;
      h_mat(q, k) = v;
    }
  }
  return h_mat;
}

inline double fd_scalar(const std::function<double(double)>& f, double x,
                        double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// ---------------------------------------------------------------------------
// Closed-form ODE solutions.

inline double population_growth_solution(double x0, double theta, double t) {
  return x0 * std::exp(-theta * t);
}

// Bateman concentration with C(0) = 0 (and its window integral).
inline double bateman_solution(double ke, double ka, double cl, double dose,
                               double t) {
  return dose * ke * ka / (cl * (ka - ke)) *
         (std::exp(-ke * t) - std::exp(-ka * t));
}

inline double bateman_auc(double ke, double ka, double cl, double dose,
                          double t_end) {
  return dose * ke * ka / (cl * (ka - ke)) *
         ((1.0 - std::exp(-ke * t_end)) / ke -
          (1.0 - std::exp(-ka * t_end)) / ka);
}

// Relative error with an absolute fallback near zero.
inline double rel_err(double got, double want, double abs_floor = 1e-12) {
  return std::abs(got - want) / std::max(std::abs(want), abs_floor);
}

inline double rel_frobenius(const Matrix& got, const Matrix& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-300);
}

}  // namespace oracle
