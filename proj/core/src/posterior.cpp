#include "mixode/posterior.hpp"

#include <cmath>

namespace mixode {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLog2Pi = 1.8378770664093454836;

double log_multivariate_gamma(double a, int q) {
  double v = 0.25 * q * (q - 1) * std::log(kPi);
  for (int i = 1; i <= q; ++i) v += std::lgamma(a + 0.5 * (1.0 - i));
  return v;
}

struct TermError {
  int term;
  int subject;  // -1 when not subject specific
};

[[noreturn]] void throw_term_error(const Problem& problem, const TermError& e) {
  std::string where = e.subject >= 0
                          ? " for subject " + problem.subjects[e.subject].id
                          : "";
  throw Error(ErrorCode::Numerical,
              "posterior term (" + std::to_string(e.term) +
                  ") is non-finite" + where);
}

}  // namespace

int Problem::n_noise() const {
  switch (noise_mode) {
    case NoiseMode::Shared:
      return m();
    case NoiseMode::PerSubject:
      return s() * m();
    case NoiseMode::Frozen:
      return 0;
  }
  return 0;
}

ULayout Problem::u_layout() const {
  ULayout layout;
  int offset = 0;
  for (const SubjectProblem& sub : subjects) {
    layout.spans.push_back({offset, r(), sub.n(), m()});
    offset += r() + sub.n() * m();
  }
  layout.dim = offset;
  return layout;
}

Eigen::Map<const Vector> Problem::beta(const Vector& omega) const {
  return Eigen::Map<const Vector>(omega.data(), n_beta());
}

double Problem::eta_raw(const Vector& omega, int p) const {
  return omega[n_beta() + p];
}

Vector Problem::eta_natural(const Vector& omega) const {
  Vector eta(l());
  for (int p = 0; p < l(); ++p) {
    const double raw = eta_raw(omega, p);
    eta[p] = model->positivity[p] ? std::exp(raw) : raw;
  }
  return eta;
}

int Problem::noise_index(int j, int i) const {
  switch (noise_mode) {
    case NoiseMode::Shared:
      return n_beta() + l() + i;
    case NoiseMode::PerSubject:
      return n_beta() + l() + j * m() + i;
    case NoiseMode::Frozen:
      return -1;
  }
  return -1;
}

double Problem::sigma(const Vector& omega, int j, int i) const {
  if (noise_mode == NoiseMode::Frozen) return subjects[j].frozen_noise[i];
  return std::exp(omega[noise_index(j, i)]);
}

void Problem::validate() const {
  if (!model) throw Error(ErrorCode::InvalidArgument, "problem has no model");
  if (re_params.empty())
    throw Error(ErrorCode::InvalidArgument,
                "problem needs at least one random-effect parameter");
  for (int p : re_params)
    if (p < 0 || p >= l())
      throw Error(ErrorCode::InvalidArgument,
                  "random-effect index out of range");
  for (const SubjectProblem& sub : subjects) {
    if (static_cast<int>(sub.gp.size()) != m() ||
        static_cast<int>(sub.obs_idx.size()) != m() ||
        static_cast<int>(sub.obs_values.size()) != m())
      throw Error(ErrorCode::InvalidArgument,
                  "subject " + sub.id + " is missing per-component data");
    for (int i = 0; i < m(); ++i) {
      if (sub.gp[i].n() != sub.n())
        throw Error(ErrorCode::InvalidArgument,
                    "subject " + sub.id + " GP matrices do not match the grid");
      if (sub.obs_idx[i].size() !=
          static_cast<std::size_t>(sub.obs_values[i].size()))
        throw Error(ErrorCode::InvalidArgument,
                    "subject " + sub.id + " observation binding mismatch");
    }
    if (noise_mode == NoiseMode::Frozen &&
        sub.frozen_noise.size() != m())
      throw Error(ErrorCode::InvalidArgument,
                  "subject " + sub.id + " lacks frozen noise values");
    if (!(sub.lambda >= 1.0))
      throw Error(ErrorCode::InvalidArgument,
                  "tempering parameter must be >= 1");
  }
}

Matrix cholesky_factor_from_beta(const Vector& beta, int r) {
  Matrix b = Matrix::Zero(r, r);
  int k = 0;
  for (int col = 0; col < r; ++col)
    for (int row = col; row < r; ++row) {
      b(row, col) = (row == col) ? std::exp(beta[k]) : beta[k];
      ++k;
    }
  return b;
}

Vector beta_from_covariance(const Matrix& sigma_b, double eigen_floor) {
  const int r = static_cast<int>(sigma_b.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sigma_b);
  Vector d = es.eigenvalues().cwiseMax(eigen_floor);
  Matrix floored =
      es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
  Eigen::LLT<Matrix> llt(floored);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::Numerical,
                "covariance factorization failed after eigenvalue flooring");
  Matrix lower = llt.matrixL();
  Vector beta(r * (r + 1) / 2);
  int k = 0;
  for (int col = 0; col < r; ++col)
    for (int row = col; row < r; ++row) {
      beta[k] = (row == col) ? std::log(lower(row, col)) : lower(row, col);
      ++k;
    }
  return beta;
}

namespace {

// Everything derived from omega that subject evaluations share.
struct OmegaContext {
  Matrix b_factor;       // B
  Matrix sigma_b_inv;    // B^{-T} B^{-1}
  double logdet_sigma_b;
  Vector eta;            // natural scale
  double prior_terms;    // terms (1) + (2)
  bool finite = true;
  TermError error{0, -1};
};

OmegaContext make_context(const Problem& problem, const Vector& omega) {
  OmegaContext ctx;
  const int r = problem.r();
  ctx.b_factor = cholesky_factor_from_beta(problem.beta(omega), r);
  Matrix b_inv = ctx.b_factor.triangularView<Eigen::Lower>().solve(
      Matrix::Identity(r, r));
  ctx.sigma_b_inv = b_inv.transpose() * b_inv;
  ctx.logdet_sigma_b = 2.0 * ctx.b_factor.diagonal().array().log().sum();
  ctx.eta = problem.eta_natural(omega);

  double q1 = 0.0;
  for (const auto& [name, prior] : problem.priors.eta) {
    const int p = problem.model->param_index(name);
    const double raw = problem.eta_raw(omega, p);
    const double z = (raw - prior.mean) / prior.sd;
    q1 += 0.5 * z * z + std::log(prior.sd) + 0.5 * kLog2Pi;
  }
  double q2 = 0.0;
  if (problem.priors.sigma_b) {
    const InverseWishartPrior& iw = *problem.priors.sigma_b;
    const int q = r;
    Matrix sigma_b = ctx.b_factor * ctx.b_factor.transpose();
    Eigen::LLT<Matrix> llt(sigma_b);
    Matrix sigma_b_inv_s = llt.solve(iw.scale);
    const double df = iw.df;
    Eigen::LLT<Matrix> llt_s(iw.scale);
    const double logdet_s =
        2.0 * llt_s.matrixLLT().diagonal().array().log().sum();
    q2 = 0.5 * (df + q + 1) * ctx.logdet_sigma_b + 0.5 * sigma_b_inv_s.trace() -
         0.5 * df * logdet_s + 0.5 * df * q * std::log(2.0) +
         log_multivariate_gamma(0.5 * df, q);
  }
  if (!std::isfinite(q1)) {
    ctx.finite = false;
    ctx.error = {1, -1};
  } else if (!std::isfinite(q2)) {
    ctx.finite = false;
    ctx.error = {2, -1};
  }
  ctx.prior_terms = q1 + q2;
  return ctx;
}

// Per-subject evaluation. Fills value always; gradient and Hessian block on
// request. Returns false with *err set when any term is non-finite.
bool eval_subject(const Problem& problem, const OmegaContext& ctx,
                  const Vector& omega, int j, const Vector& u,
                  const ULayout::Span& span, double* value, Vector* grad,
                  Matrix* hess, TermError* err) {
  const SubjectProblem& sub = problem.subjects[j];
  const int r = span.r, n = span.n, m = span.m;
  const int l = problem.l();
  const auto b = u.segment(span.offset, r);
  const auto x_all = u.segment(span.offset + r, n * m);
  auto x_col = [&](int i) { return x_all.segment(i * n, n); };

  Vector theta = ctx.eta;
  for (int k = 0; k < r; ++k) theta[problem.re_params[k]] += b[k];

  // term (3)
  Vector sb_inv_b = ctx.sigma_b_inv * b;
  double q3 = 0.5 * (r * kLog2Pi + ctx.logdet_sigma_b + b.dot(sb_inv_b));
  if (!std::isfinite(q3)) {
    *err = {3, j};
    return false;
  }

  // model evaluations over the grid
  const Vector& times = sub.grid.points;
  Matrix f_val(n, m);
  Matrix jx;  // n x (m*m), column i*m+k holds d f_i / d x_k
  Matrix jt;  // n x (m*r), column i*r+k holds d f_i / d theta_{re_k}
  const bool need_jac = grad != nullptr || hess != nullptr;
  if (need_jac) {
    jx.resize(n, m * m);
    jt.resize(n, m * r);
  }
  for (int t = 0; t < n; ++t) {
    Vector xt(m);
    for (int i = 0; i < m; ++i) xt[i] = x_col(i)[t];
    Vector f = problem.model->rhs(xt, theta, times[t], sub.dose);
    if (!f.allFinite()) {
      *err = {6, j};
      return false;
    }
    f_val.row(t) = f.transpose();
    if (need_jac) {
      Matrix djx = problem.model->jac_state(xt, theta, times[t], sub.dose);
      Matrix djt = problem.model->jac_theta(xt, theta, times[t], sub.dose);
      if (!djx.allFinite() || !djt.allFinite()) {
        *err = {6, j};
        return false;
      }
      for (int i = 0; i < m; ++i) {
        for (int k = 0; k < m; ++k) jx(t, i * m + k) = djx(i, k);
        for (int k = 0; k < r; ++k)
          jt(t, i * r + k) = djt(i, problem.re_params[k]);
      }
    }
  }
  (void)l;

  const double inv_lambda = 1.0 / sub.lambda;
  double q4 = 0.0, q5 = 0.0, q6 = 0.0;
  std::vector<Vector> xc(m), cinv_xc(m), e(m), p_vec(m);
  for (int i = 0; i < m; ++i) {
    const GpMatrices& gp = sub.gp[i];
    xc[i] = x_col(i) - gp.mean;
    cinv_xc[i] = gp.c_inv * xc[i];
    q4 += 0.5 * inv_lambda *
          (n * kLog2Pi + gp.logdet_c + xc[i].dot(cinv_xc[i]));

    const double sig = problem.sigma(omega, j, i);
    const auto& idx = sub.obs_idx[i];
    const Vector& yv = sub.obs_values[i];
    double rss = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double d = x_col(i)[idx[k]] - yv[static_cast<Eigen::Index>(k)];
      rss += d * d;
    }
    q5 += 0.5 * (static_cast<double>(idx.size()) *
                     std::log(2.0 * kPi * sig * sig) +
                 rss / (sig * sig));

    e[i] = f_val.col(i) - gp.mean_deriv - gp.m * xc[i];
    p_vec[i] = gp.zeta_inv * e[i];
    q6 += 0.5 * inv_lambda *
          (n * kLog2Pi + gp.logdet_zeta + e[i].dot(p_vec[i]));
  }
  if (!std::isfinite(q4)) {
    *err = {4, j};
    return false;
  }
  if (!std::isfinite(q5)) {
    *err = {5, j};
    return false;
  }
  if (!std::isfinite(q6)) {
    *err = {6, j};
    return false;
  }
  *value = q3 + q4 + q5 + q6;

  if (grad != nullptr) {
    grad->setZero(r + n * m);
    grad->head(r) = sb_inv_b;
    for (int i = 0; i < m; ++i) {
      const GpMatrices& gp = sub.gp[i];
      const Vector p_scaled = inv_lambda * p_vec[i];
      // random-effect block: G_i^T p, G_i = columns of jac_theta at re params
      for (int k = 0; k < r; ++k)
        (*grad)[k] += jt.col(i * r + k).dot(p_scaled);
      auto gx = grad->segment(r + i * n, n);
      gx += inv_lambda * cinv_xc[i];
      const double sig = problem.sigma(omega, j, i);
      const auto& idx = sub.obs_idx[i];
      const Vector& yv = sub.obs_values[i];
      for (std::size_t k = 0; k < idx.size(); ++k)
        gx[idx[k]] += (x_col(i)[idx[k]] - yv[static_cast<Eigen::Index>(k)]) /
                      (sig * sig);
      gx -= gp.m.transpose() * p_scaled;
      // cross terms d f_ii' / d x_i
      for (int i2 = 0; i2 < m; ++i2) {
        const Vector p2 = inv_lambda * p_vec[i2];
        gx += jx.col(i2 * m + i).cwiseProduct(p2);
      }
    }
  }

  if (hess != nullptr) {
    const int dim = r + n * m;
    hess->setZero(dim, dim);
    hess->topLeftCorner(r, r) = ctx.sigma_b_inv;
    std::vector<Matrix> g_mat(m), w_mat(m);
    for (int i = 0; i < m; ++i) {
      g_mat[i].resize(n, r);
      for (int k = 0; k < r; ++k) g_mat[i].col(k) = jt.col(i * r + k);
      w_mat[i] = inv_lambda * (sub.gp[i].zeta_inv * g_mat[i]);  // n x r
      hess->topLeftCorner(r, r) += g_mat[i].transpose() * w_mat[i];
    }
    for (int k = 0; k < m; ++k) {
      // b-x blocks
      Matrix bx = Matrix::Zero(r, n);
      for (int i = 0; i < m; ++i) {
        // W_i^T D_ik with D_ik the diagonal of d f_i / d x_k
        bx += w_mat[i].transpose() * jx.col(i * m + k).asDiagonal();
      }
      bx -= inv_lambda * (g_mat[k].transpose() * sub.gp[k].zeta_inv_m);
      hess->block(0, r + k * n, r, n) = bx;
      hess->block(r + k * n, 0, n, r) = bx.transpose();

      // x-x blocks
      for (int q = k; q < m; ++q) {
        Matrix xx = Matrix::Zero(n, n);
        for (int i = 0; i < m; ++i) {
          const auto dk = jx.col(i * m + k);
          const auto dq = jx.col(i * m + q);
          xx += dk.asDiagonal() * sub.gp[i].zeta_inv * dq.asDiagonal();
        }
        xx -= jx.col(q * m + k).asDiagonal() * sub.gp[q].zeta_inv_m;
        xx -= (jx.col(k * m + q).asDiagonal() * sub.gp[k].zeta_inv_m)
                  .transpose()
                  .eval();
        xx *= inv_lambda;
        if (k == q) {
          xx += inv_lambda * (sub.gp[k].mt_zeta_inv_m + sub.gp[k].c_inv);
          const double sig = problem.sigma(omega, j, k);
          for (int idx : sub.obs_idx[k]) xx(idx, idx) += 1.0 / (sig * sig);
        }
        hess->block(r + k * n, r + q * n, n, n) = xx;
        if (q != k)
          hess->block(r + q * n, r + k * n, n, n) = xx.transpose();
      }
    }
    *hess = 0.5 * (*hess + hess->transpose().eval());
  }
  return true;
}

}  // namespace

bool eval_posterior(const Problem& problem, const Vector& u,
                    const Vector& omega, double* value, Vector* grad,
                    std::vector<Matrix>* hess_blocks) {
  const ULayout layout = problem.u_layout();
  OmegaContext ctx = make_context(problem, omega);
  if (!ctx.finite) return false;
  double total = ctx.prior_terms;
  if (grad) grad->setZero(layout.dim);
  if (hess_blocks) hess_blocks->assign(problem.s(), Matrix());
  for (int j = 0; j < problem.s(); ++j) {
    const auto& span = layout.spans[j];
    double qj = 0.0;
    Vector gj;
    Matrix hj;
    TermError err;
    if (!eval_subject(problem, ctx, omega, j, u, span, &qj,
                      grad ? &gj : nullptr, hess_blocks ? &hj : nullptr, &err))
      return false;
    total += qj;
    if (grad) grad->segment(span.offset, span.r + span.n * span.m) = gj;
    if (hess_blocks) (*hess_blocks)[j] = std::move(hj);
  }
  if (!std::isfinite(total)) return false;
  *value = total;
  return true;
}

double neg_log_posterior(const Problem& problem, const Vector& u,
                         const Vector& omega) {
  const ULayout layout = problem.u_layout();
  if (u.size() != layout.dim || omega.size() != problem.omega_dim())
    throw Error(ErrorCode::InvalidArgument,
                "u/omega dimensions do not match the problem");
  OmegaContext ctx = make_context(problem, omega);
  if (!ctx.finite) throw_term_error(problem, ctx.error);
  double total = ctx.prior_terms;
  for (int j = 0; j < problem.s(); ++j) {
    double qj = 0.0;
    TermError err;
    if (!eval_subject(problem, ctx, omega, j, u, layout.spans[j], &qj, nullptr,
                      nullptr, &err))
      throw_term_error(problem, err);
    total += qj;
  }
  return total;
}

Vector grad_u(const Problem& problem, const Vector& u, const Vector& omega) {
  double value;
  Vector g;
  if (!eval_posterior(problem, u, omega, &value, &g, nullptr))
    throw Error(ErrorCode::Numerical,
                "posterior gradient evaluation hit a non-finite term");
  return g;
}

std::vector<Matrix> hessian_u_blocks(const Problem& problem, const Vector& u,
                                     const Vector& omega) {
  double value;
  std::vector<Matrix> blocks;
  if (!eval_posterior(problem, u, omega, &value, nullptr, &blocks))
    throw Error(ErrorCode::Numerical,
                "posterior Hessian evaluation hit a non-finite term");
  return blocks;
}

}  // namespace mixode
