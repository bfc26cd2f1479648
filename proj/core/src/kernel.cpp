#include "mixode/kernel.hpp"

#include <cmath>
#include <cstring>
#include <unordered_map>

namespace mixode {

namespace {

constexpr double kSmallLag = 1e-8;  // below this the z->0 limits are exact in double
// K_nu(z) ~ exp(-z) sqrt(pi/2z) underflows well before this; the library
// Bessel implementation throws for very large arguments instead
constexpr double kLargeArg = 690.0;

struct RadialValues {
  double g;    // kernel value
  double gd;   // d/dd
  double gdd;  // d^2/dd^2
};

bool is_half_integer_25(double nu) { return std::abs(nu - 2.5) < 1e-12; }

// nu = 5/2 closed form, u = sqrt(5) d / bandwidth:
//   g    = phi1 (1 + u + u^2/3) exp(-u)
//   g'   = -phi1 (5/(3 phi2^2)) d (1 + u) exp(-u)
//   g''  = -phi1 (5/(3 phi2^2)) (1 + u - u^2) exp(-u)
RadialValues radial_25(double d, const KernelConfig& cfg) {
  const double u = std::sqrt(5.0) * d / cfg.bandwidth;
  const double e = std::exp(-u);
  const double c = 5.0 / (3.0 * cfg.bandwidth * cfg.bandwidth);
  RadialValues out;
  out.g = cfg.variance_scale * (1.0 + u + u * u / 3.0) * e;
  out.gd = -cfg.variance_scale * c * d * (1.0 + u) * e;
  out.gdd = -cfg.variance_scale * c * (1.0 + u - u * u) * e;
  return out;
}

// Generic nu via the modified Bessel function of the second kind, using
//   d/dz [z^nu K_nu(z)] = -z^nu K_{nu-1}(z).
RadialValues radial_generic(double d, const KernelConfig& cfg) {
  const double nu = cfg.smoothness;
  const double a = std::sqrt(2.0 * nu) / cfg.bandwidth;
  const double z = a * d;
  const double cnu = std::pow(2.0, 1.0 - nu) / std::tgamma(nu);
  RadialValues out;
  if (z < kSmallLag) {
    out.g = cfg.variance_scale;
    out.gd = 0.0;
    out.gdd = -cfg.variance_scale * a * a / (2.0 * (nu - 1.0));
    return out;
  }
  if (z > kLargeArg) {
    out.g = out.gd = out.gdd = 0.0;
    return out;
  }
  const double znu = std::pow(z, nu);
  const double k_nu = std::cyl_bessel_k(nu, z);
  const double k_nu1 = std::cyl_bessel_k(nu - 1.0, z);
  const double k_nu2 = std::cyl_bessel_k(nu - 2.0, z);
  out.g = cfg.variance_scale * cnu * znu * k_nu;
  out.gd = -cfg.variance_scale * cnu * a * znu * k_nu1;
  out.gdd = -cfg.variance_scale * cnu * a * a *
            (znu / z * k_nu1 - znu * k_nu2);
  return out;
}

RadialValues radial(double d, const KernelConfig& cfg) {
  return is_half_integer_25(cfg.smoothness) ? radial_25(d, cfg)
                                            : radial_generic(d, cfg);
}

// Lags on a lattice grid repeat heavily; memoize on the exact bit pattern.
class RadialCache {
 public:
  explicit RadialCache(const KernelConfig& cfg) : cfg_(cfg) {}
  const RadialValues& at(double d) {
    std::uint64_t key;
    std::memcpy(&key, &d, sizeof(key));
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(key, radial(d, cfg_)).first->second;
  }

 private:
  KernelConfig cfg_;
  std::unordered_map<std::uint64_t, RadialValues> cache_;
};

void check_grid_finite(const Vector& g, const char* name) {
  if (!g.allFinite())
    throw Error(ErrorCode::InvalidArgument,
                std::string(name) + " grid contains non-finite entries");
}

Eigen::LLT<Matrix> factor_with_jitter(const Matrix& a, double jitter0,
                                      double scale, double* jitter_used,
                                      const std::string& what,
                                      const std::string& label) {
  double level = jitter0;
  while (level <= 1e-6 * 1.0000001) {
    Matrix aj = a;
    aj.diagonal().array() += level * scale;
    Eigen::LLT<Matrix> llt(aj);
    if (llt.info() == Eigen::Success) {
      *jitter_used = level * scale;
      return llt;
    }
    level *= 10.0;
  }
  throw Error(ErrorCode::Numerical,
              "factorization of " + what + " failed after jitter escalation" +
                  (label.empty() ? "" : " for " + label));
}

}  // namespace

void KernelConfig::validate() const {
  if (!(variance_scale > 0.0) || !std::isfinite(variance_scale) ||
      !(bandwidth > 0.0) || !std::isfinite(bandwidth))
    throw Error(ErrorCode::InvalidArgument,
                "kernel variance_scale and bandwidth must be positive finite");
  if (!std::isfinite(smoothness) || !(smoothness > 0.0))
    throw Error(ErrorCode::InvalidArgument,
                "kernel smoothness must be positive finite");
}

double matern(double d, const KernelConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(d) || d < 0.0)
    throw Error(ErrorCode::InvalidArgument,
                "matern lag must be finite and nonnegative");
  if (is_half_integer_25(cfg.smoothness)) return radial_25(d, cfg).g;
  const double nu = cfg.smoothness;
  const double z = std::sqrt(2.0 * nu) * d / cfg.bandwidth;
  if (z < kSmallLag) return cfg.variance_scale;
  if (z > kLargeArg) return 0.0;
  const double cnu = std::pow(2.0, 1.0 - nu) / std::tgamma(nu);
  return cfg.variance_scale * cnu * std::pow(z, nu) * std::cyl_bessel_k(nu, z);
}

double matern_dd(double d, const KernelConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(d) || d < 0.0)
    throw Error(ErrorCode::InvalidArgument,
                "matern lag must be finite and nonnegative");
  return radial(d, cfg).gd;
}

double matern_ddd(double d, const KernelConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(d) || d < 0.0)
    throw Error(ErrorCode::InvalidArgument,
                "matern lag must be finite and nonnegative");
  return radial(d, cfg).gdd;
}

double matern_dbandwidth(double d, const KernelConfig& cfg) {
  cfg.validate();
  if (is_half_integer_25(cfg.smoothness)) {
    const double u = std::sqrt(5.0) * d / cfg.bandwidth;
    return cfg.variance_scale * u * u * (1.0 + u) * std::exp(-u) /
           (3.0 * cfg.bandwidth);
  }
  const double nu = cfg.smoothness;
  const double z = std::sqrt(2.0 * nu) * d / cfg.bandwidth;
  if (z < kSmallLag || z > kLargeArg) return 0.0;
  const double cnu = std::pow(2.0, 1.0 - nu) / std::tgamma(nu);
  // dK/dphi2 = phi1 c_nu z^{nu+1} K_{nu-1}(z) / phi2
  return cfg.variance_scale * cnu * std::pow(z, nu + 1.0) *
         std::cyl_bessel_k(nu - 1.0, z) / cfg.bandwidth;
}

Matrix kernel_matrix(const Vector& s_grid, const Vector& t_grid,
                     const KernelConfig& cfg) {
  cfg.validate();
  check_grid_finite(s_grid, "s");
  check_grid_finite(t_grid, "t");
  RadialCache cache(cfg);
  Matrix k(s_grid.size(), t_grid.size());
  for (Eigen::Index j = 0; j < t_grid.size(); ++j)
    for (Eigen::Index i = 0; i < s_grid.size(); ++i)
      k(i, j) = cache.at(std::abs(s_grid[i] - t_grid[j])).g;
  return k;
}

KernelBlocks kernel_block(const Vector& s_grid, const Vector& t_grid,
                          const KernelConfig& cfg) {
  cfg.validate();
  if (!(cfg.smoothness > 2.0))
    throw Error(ErrorCode::InvalidArgument,
                "unsupported smoothness: the derivative process requires "
                "smoothness > 2");
  check_grid_finite(s_grid, "s");
  check_grid_finite(t_grid, "t");
  RadialCache cache(cfg);
  const Eigen::Index ns = s_grid.size(), nt = t_grid.size();
  KernelBlocks out;
  out.k.resize(ns, nt);
  out.dk_ds.resize(ns, nt);
  out.dk_dt.resize(ns, nt);
  out.d2k_dsdt.resize(ns, nt);
  for (Eigen::Index j = 0; j < nt; ++j) {
    for (Eigen::Index i = 0; i < ns; ++i) {
      const double diff = s_grid[i] - t_grid[j];
      const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      const RadialValues& r = cache.at(std::abs(diff));
      out.k(i, j) = r.g;
      out.dk_ds(i, j) = r.gd * sgn;
      out.dk_dt(i, j) = -r.gd * sgn;
      out.d2k_dsdt(i, j) = -r.gdd;
    }
  }
  return out;
}

GpMatrices build_gp_matrices(const Vector& grid, const KernelConfig& cfg,
                             double jitter, double mean_value,
                             const std::string& label) {
  if (grid.size() < 2)
    throw Error(ErrorCode::InvalidArgument,
                "discretization grid needs at least 2 points" +
                    (label.empty() ? "" : " (" + label + ")"));
  for (Eigen::Index i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1]))
      throw Error(ErrorCode::InvalidArgument,
                  "discretization grid must be strictly increasing" +
                      (label.empty() ? "" : " (" + label + ")"));

  KernelBlocks blocks = kernel_block(grid, grid, cfg);
  GpMatrices out;
  out.c = blocks.k;
  out.c_chol = factor_with_jitter(out.c, jitter, cfg.variance_scale,
                                  &out.jitter_c, "GP prior covariance", label);
  const Eigen::Index n = grid.size();
  out.c_inv = out.c_chol.solve(Matrix::Identity(n, n));
  // m = 'K C^{-1}; solve on the transpose to reuse the Cholesky factor
  out.m = out.c_chol.solve(blocks.dk_ds.transpose()).transpose();
  out.zeta = blocks.d2k_dsdt - out.m * blocks.dk_dt;
  out.zeta = 0.5 * (out.zeta + out.zeta.transpose().eval());
  out.zeta_chol =
      factor_with_jitter(out.zeta, jitter, cfg.variance_scale,
                         &out.jitter_zeta, "conditional derivative covariance",
                         label);
  out.zeta_inv = out.zeta_chol.solve(Matrix::Identity(n, n));
  out.zeta_inv_m = out.zeta_chol.solve(out.m);
  out.mt_zeta_inv_m = out.m.transpose() * out.zeta_inv_m;
  out.mean = Vector::Constant(n, mean_value);
  out.mean_deriv = Vector::Zero(n);
  out.logdet_c =
      2.0 * out.c_chol.matrixLLT().diagonal().array().log().sum();
  out.logdet_zeta =
      2.0 * out.zeta_chol.matrixLLT().diagonal().array().log().sum();
  return out;
}

}  // namespace mixode
