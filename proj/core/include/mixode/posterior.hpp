#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mixode/discretization.hpp"
#include "mixode/kernel.hpp"
#include "mixode/ode_models.hpp"

namespace mixode {

// Prior on one fixed effect, applied on the raw scale (log scale where the
// model's positivity mask is set).
struct NormalPrior {
  double mean = 0.0;
  double sd = 1.0;
};

struct InverseWishartPrior {
  double df = 0.0;
  Matrix scale;
};

struct PriorSpec {
  std::map<std::string, NormalPrior> eta;        // by parameter name; absent = flat
  std::optional<InverseWishartPrior> sigma_b;    // absent = flat on beta
};

enum class NoiseMode { Shared, PerSubject, Frozen };

// One subject's static problem data: grid, GP matrices per component,
// observation bindings, tempering divisor.
struct SubjectProblem {
  std::string id;
  double dose = 0.0;
  Grid grid;
  std::vector<KernelConfig> kernel;       // per component, stage-one values
  std::vector<GpMatrices> gp;             // per component
  std::vector<std::vector<int>> obs_idx;  // per component, indices into grid
  std::vector<Vector> obs_values;         // per component
  double lambda = 1.0;                    // divides GP-prior and manifold terms
  Vector frozen_noise;                    // per component, NoiseMode::Frozen

  int n() const { return grid.size(); }
};

// Layout of the latent vector u: per subject [b_j (r), x_{.1} (n_j), ...,
// x_{.m} (n_j)], subjects concatenated in order.
struct ULayout {
  struct Span {
    int offset;
    int r;
    int n;
    int m;
  };
  std::vector<Span> spans;
  int dim = 0;
};

// The assembled hierarchical problem. omega layout:
//   [beta (r(r+1)/2), eta_raw (l), log_noise (m | s*m | 0)]
// beta parameterizes the lower-triangular factor of Sigma_b column-major with
// log-diagonal entries.
struct Problem {
  const OdeModel* model = nullptr;
  std::vector<SubjectProblem> subjects;
  std::vector<int> re_params;  // parameter indices carrying random effects
  PriorSpec priors;
  NoiseMode noise_mode = NoiseMode::Shared;

  int m() const { return model->n_components; }
  int l() const { return model->n_params; }
  int r() const { return static_cast<int>(re_params.size()); }
  int s() const { return static_cast<int>(subjects.size()); }
  int n_beta() const { return r() * (r() + 1) / 2; }
  int n_noise() const;
  int omega_dim() const { return n_beta() + l() + n_noise(); }
  ULayout u_layout() const;

  // omega accessors
  Eigen::Map<const Vector> beta(const Vector& omega) const;
  double eta_raw(const Vector& omega, int p) const;
  Vector eta_natural(const Vector& omega) const;  // exp where positivity set
  double sigma(const Vector& omega, int j, int i) const;
  int noise_index(int j, int i) const;  // index into omega, or -1 when frozen

  void validate() const;
};

// Sigma_b = B B^T from beta (lower-triangular B with log-diagonal).
Matrix cholesky_factor_from_beta(const Vector& beta, int r);
Vector beta_from_covariance(const Matrix& sigma_b, double eigen_floor = 1e-6);

// Negative log joint posterior Q(u, omega): terms (1) priors on eta,
// (2) prior on Sigma_b, (3) random effects, (4) GP prior, (5) observation
// likelihood, (6) manifold constraint. All normalizing constants included.
// Throws a Numerical error identifying the term (1-6) and subject on
// non-finite values.
double neg_log_posterior(const Problem& problem, const Vector& u,
                         const Vector& omega);

// Exact gradient of Q in u.
Vector grad_u(const Problem& problem, const Vector& u, const Vector& omega);

// Per-subject symmetric blocks of the Hessian in u (Gauss-Newton for the
// manifold term, exact for the Gaussian quadratic terms).
std::vector<Matrix> hessian_u_blocks(const Problem& problem, const Vector& u,
                                     const Vector& omega);

// Single-pass evaluation used by the inner optimizer. Returns false (instead
// of throwing) when the value is non-finite.
bool eval_posterior(const Problem& problem, const Vector& u,
                    const Vector& omega, double* value, Vector* grad,
                    std::vector<Matrix>* hess_blocks);

}  // namespace mixode
