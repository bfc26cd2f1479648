#pragma once

#include "mixode/common.hpp"

namespace mixode {

// Matern kernel hyperparameters for one subject-component.
// smoothness > 2 is required for a twice-differentiable process, which the
// conditional derivative matrices depend on.
struct KernelConfig {
  double variance_scale = 1.0;  // overall variance
  double bandwidth = 1.0;       // lengthscale, in time units
  double smoothness = 2.5;      // 2.01 for rough curves, 2.5 for smooth ones

  void validate() const;
};

// Kernel value at lag d >= 0. Returns variance_scale at d = 0.
double matern(double d, const KernelConfig& cfg);

// Radial derivatives of the kernel as a function of the lag:
// matern_dd = g'(d), matern_ddd = g''(d) where g(d) = matern(d).
double matern_dd(double d, const KernelConfig& cfg);
double matern_ddd(double d, const KernelConfig& cfg);

// Derivative of the kernel value in the bandwidth, used by the marginal
// likelihood gradient during hyperparameter fitting.
double matern_dbandwidth(double d, const KernelConfig& cfg);

struct KernelBlocks {
  Matrix k;         // K(s,t)
  Matrix dk_ds;     // d/ds K(s,t)
  Matrix dk_dt;     // d/dt K(s,t)
  Matrix d2k_dsdt;  // d^2/(ds dt) K(s,t)
};

// The four kernel matrices over a pair of grids. Requires smoothness > 2.
KernelBlocks kernel_block(const Vector& s_grid, const Vector& t_grid,
                          const KernelConfig& cfg);

// Covariance matrix K(s,t) only (no derivative blocks); any smoothness > 0.
Matrix kernel_matrix(const Vector& s_grid, const Vector& t_grid,
                     const KernelConfig& cfg);

// Per subject-component GP matrices on a discretization grid:
//   c    = K(I,I)
//   m    = 'K c^{-1}
//   zeta = K'' - 'K c^{-1} K'
// plus factorizations and the products the posterior evaluation reuses.
struct GpMatrices {
  Matrix c;
  Eigen::LLT<Matrix> c_chol;
  Matrix c_inv;
  Matrix m;
  Matrix zeta;
  Eigen::LLT<Matrix> zeta_chol;
  Matrix zeta_inv;
  Matrix zeta_inv_m;     // zeta^{-1} m
  Matrix mt_zeta_inv_m;  // m^T zeta^{-1} m
  Vector mean;           // mu(I)
  Vector mean_deriv;     // mu'(I)
  double logdet_c = 0.0;
  double logdet_zeta = 0.0;
  double jitter_c = 0.0;     // jitter actually used, absolute
  double jitter_zeta = 0.0;
  int n() const { return static_cast<int>(c.rows()); }
};

// Builds the GP matrices with a jitter escalation ladder
// {jitter, 10*jitter, ..., 1e-6} * variance_scale before declaring a
// conditioning failure. `label` names the subject/component in errors.
// The mean function is constant (zero by default).
GpMatrices build_gp_matrices(const Vector& grid, const KernelConfig& cfg,
                             double jitter = 1e-10, double mean_value = 0.0,
                             const std::string& label = "");

}  // namespace mixode
