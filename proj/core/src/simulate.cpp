#include "mixode/simulate.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace mixode {

void SimProtocol::validate() const {
  const OdeModel& mdl = builtin(model);
  if (eta.size() != mdl.n_params)
    throw Error(ErrorCode::InvalidArgument,
                "protocol eta length must equal the model parameter count");
  const auto re = random_effect_indices(mdl);
  if (sigma_b.rows() != static_cast<Eigen::Index>(re.size()) ||
      sigma_b.cols() != sigma_b.rows())
    throw Error(ErrorCode::InvalidArgument,
                "protocol sigma_b must be square over the random effects");
  if (!sigma_b.isApprox(sigma_b.transpose(), 1e-12))
    throw Error(ErrorCode::InvalidArgument, "protocol sigma_b must be symmetric");
  if (static_cast<int>(x0.size()) != mdl.n_components)
    throw Error(ErrorCode::InvalidArgument,
                "protocol needs one x0 distribution per component");
  if (noise_sd.size() != mdl.n_components)
    throw Error(ErrorCode::InvalidArgument,
                "protocol needs one noise SD per component");
  if (n_subjects < 1)
    throw Error(ErrorCode::InvalidArgument, "protocol needs n_subjects >= 1");
  if (obs_times.size() < 1)
    throw Error(ErrorCode::InvalidArgument, "protocol needs observation times");
  for (Eigen::Index i = 1; i < obs_times.size(); ++i)
    if (!(obs_times[i] > obs_times[i - 1]))
      throw Error(ErrorCode::InvalidArgument,
                  "protocol observation times must be strictly increasing");
  if (mdl.uses_dose && !dose.has_value())
    throw Error(ErrorCode::InvalidArgument,
                "model " + model + " needs a dose covariate");
}

std::vector<int> SimProtocol::random_effect_indices(const OdeModel& mdl) const {
  std::vector<int> idx;
  if (random_effects.empty()) {
    for (int p = 0; p < mdl.n_params; ++p)
      if (mdl.default_random_effects[p]) idx.push_back(p);
  } else {
    for (const std::string& name : random_effects)
      idx.push_back(mdl.param_index(name));
  }
  return idx;
}

Matrix rk_solve(const OdeModel& model, const Vector& theta, const Vector& x0,
                const Vector& times, double dose, double max_step) {
  if (times.size() == 0)
    throw Error(ErrorCode::InvalidArgument, "rk_solve needs output times");
  if (!x0.allFinite() || x0.size() != model.n_components)
    throw Error(ErrorCode::InvalidArgument,
                "rk_solve needs a finite x0 of length n_components");
  double min_gap = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1]))
      throw Error(ErrorCode::InvalidArgument, "rk_solve times must be sorted");
    min_gap = std::min(min_gap, times[i] - times[i - 1]);
  }
  const double h_max = std::min(max_step, min_gap);

  Matrix out(times.size(), model.n_components);
  Vector x = x0;
  out.row(0) = x.transpose();
  for (Eigen::Index i = 1; i < times.size(); ++i) {
    const double t_from = times[i - 1], t_to = times[i];
    const double gap = t_to - t_from;
    const long long nsub =
        std::max<long long>(1, static_cast<long long>(std::ceil(gap / h_max - 1e-12)));
    const double h = gap / static_cast<double>(nsub);
    for (long long k = 0; k < nsub; ++k) {
      const double t = t_from + k * h;
      const Vector k1 = model.rhs(x, theta, t, dose);
      const Vector k2 = model.rhs(x + 0.5 * h * k1, theta, t + 0.5 * h, dose);
      const Vector k3 = model.rhs(x + 0.5 * h * k2, theta, t + 0.5 * h, dose);
      const Vector k4 = model.rhs(x + h * k3, theta, t + h, dose);
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!x.allFinite())
        throw Error(ErrorCode::Numerical,
                    "ODE solution blew up after t = " + std::to_string(t));
    }
    out.row(i) = x.transpose();
  }
  return out;
}

namespace {

Matrix psd_sqrt(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  Vector d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

SimResult generate_dataset(const SimProtocol& protocol) {
  protocol.validate();
  const OdeModel& model = builtin(protocol.model);
  const auto re = protocol.random_effect_indices(model);
  const Matrix s_half = psd_sqrt(protocol.sigma_b);
  const double dose = protocol.dose.value_or(0.0);

  SimResult result;
  result.data.n_components = model.n_components;
  for (int j = 0; j < protocol.n_subjects; ++j) {
    std::mt19937_64 rng(derive_seed(protocol.seed, static_cast<std::uint64_t>(j)));
    std::normal_distribution<double> stdnorm(0.0, 1.0);

    Vector theta;
    for (int attempt = 0;; ++attempt) {
      Vector z(static_cast<Eigen::Index>(re.size()));
      for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = stdnorm(rng);
      Vector b = s_half * z;
      theta = protocol.eta;
      for (std::size_t k = 0; k < re.size(); ++k) theta[re[k]] += b[k];
      if (!protocol.truncate_positive) break;
      bool ok = true;
      for (int p = 0; p < model.n_params; ++p)
        if (model.positivity[p] && !(theta[p] > 0.0)) ok = false;
      if (ok) break;
      if (attempt > 1000)
        throw Error(ErrorCode::Numerical,
                    "could not draw positive parameters for subject " +
                        std::to_string(j + 1));
    }

    Vector x0(model.n_components);
    for (int i = 0; i < model.n_components; ++i)
      x0[i] = protocol.x0[i].mean + protocol.x0[i].sd * stdnorm(rng);

    Matrix traj = rk_solve(model, theta, x0, protocol.obs_times, dose);

    SubjectRecord rec;
    rec.id = protocol.id_prefix + std::to_string(j + 1);
    if (model.uses_dose) rec.dose = dose;
    rec.series.resize(model.n_components);
    for (int i = 0; i < model.n_components; ++i) {
      Series& s = rec.series[i];
      s.times = protocol.obs_times;
      s.values.resize(protocol.obs_times.size());
      for (Eigen::Index k = 0; k < protocol.obs_times.size(); ++k)
        s.values[k] = traj(k, i) + protocol.noise_sd[i] * stdnorm(rng);
    }
    result.data.subjects.push_back(std::move(rec));
    result.truth.push_back({theta, x0, std::move(traj)});
  }
  return result;
}

double trajectory_mse(const OdeModel& model,
                      const std::vector<Vector>& theta_hat,
                      const std::vector<Vector>& x0_hat,
                      const std::vector<SubjectTruth>& truth,
                      const Vector& obs_times,
                      const std::vector<double>& doses) {
  const std::size_t s = truth.size();
  if (theta_hat.size() != s || x0_hat.size() != s || doses.size() != s)
    throw Error(ErrorCode::InvalidArgument,
                "trajectory_mse: per-subject vectors must have equal length");
  double total = 0.0;
  for (std::size_t j = 0; j < s; ++j) {
    Matrix c_true =
        rk_solve(model, truth[j].theta, truth[j].x0, obs_times, doses[j]);
    Matrix c_hat;
    try {
      c_hat = rk_solve(model, theta_hat[j], x0_hat[j], obs_times, doses[j]);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
    total += (c_true - c_hat).squaredNorm() /
             static_cast<double>(obs_times.size());
  }
  return total / static_cast<double>(s);
}

}  // namespace mixode
