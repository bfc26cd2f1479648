#include "mixode/study.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

namespace mixode {

ReplicateMetrics evaluate_replicate(const SimProtocol& protocol,
                                    const SimResult& sim,
                                    const FitResult& fit) {
  const OdeModel& model = builtin(protocol.model);
  const auto re = protocol.random_effect_indices(model);
  const int l = model.n_params;
  const int r = static_cast<int>(re.size());
  const int m = model.n_components;
  const int s = protocol.n_subjects;

  ReplicateMetrics out;
  out.converged = fit.converged;
  out.eta_hat.setZero(l);
  out.eta_covered.assign(l, false);
  out.sigma_b_hat = fit.sigma_b;
  out.sd_b_hat.setZero(r);
  out.sd_b_covered.assign(r, false);
  out.sigma_hat.setZero(m);
  out.sigma_covered.assign(m, false);
  if (!fit.converged) {
    out.resolved_mse = std::numeric_limits<double>::infinity();
    out.inferred_mse = std::numeric_limits<double>::infinity();
    return out;
  }

  for (int p = 0; p < l; ++p) {
    const ScalarReport& rep = fit.eta[static_cast<std::size_t>(p)];
    out.eta_hat[p] = rep.estimate;
    out.eta_covered[static_cast<std::size_t>(p)] =
        protocol.eta[p] >= rep.lo && protocol.eta[p] <= rep.hi;
  }
  for (int k = 0; k < r; ++k) {
    const ScalarReport& rep = fit.sd_b[static_cast<std::size_t>(k)];
    const double truth = std::sqrt(protocol.sigma_b(k, k));
    out.sd_b_hat[k] = rep.estimate;
    out.sd_b_covered[static_cast<std::size_t>(k)] =
        truth >= rep.lo && truth <= rep.hi;
  }
  for (int i = 0; i < m; ++i) {
    const ScalarReport& rep = fit.sigma[static_cast<std::size_t>(i)];
    out.sigma_hat[i] = rep.estimate;
    out.sigma_covered[static_cast<std::size_t>(i)] =
        protocol.noise_sd[i] >= rep.lo && protocol.noise_sd[i] <= rep.hi;
  }

  // trajectory MSE from re-solved estimates
  std::vector<Vector> theta_hat(s), x0_hat(s);
  std::vector<double> doses(s, protocol.dose.value_or(0.0));
  for (int j = 0; j < s; ++j) {
    theta_hat[j] = fit.subjects[static_cast<std::size_t>(j)].theta;
    const SubjectFit& sf = fit.subjects[static_cast<std::size_t>(j)];
    x0_hat[j] = sf.trajectory.row(0).transpose();
  }
  out.resolved_mse = trajectory_mse(model, theta_hat, x0_hat, sim.truth,
                                    protocol.obs_times, doses);

  // inferred-trajectory MSE at the observation times
  double total = 0.0;
  for (int j = 0; j < s; ++j) {
    const SubjectFit& sf = fit.subjects[static_cast<std::size_t>(j)];
    double err = 0.0;
    for (Eigen::Index k = 0; k < protocol.obs_times.size(); ++k) {
      // locate the grid index of this observation time
      Eigen::Index gi = -1;
      for (Eigen::Index g = 0; g < sf.grid_times.size(); ++g)
        if (std::abs(sf.grid_times[g] - protocol.obs_times[k]) < 1e-9) {
          gi = g;
          break;
        }
      if (gi < 0) continue;
      for (int i = 0; i < m; ++i) {
        const double d = sf.trajectory(gi, i) - sim.truth[j].trajectory(k, i);
        err += d * d;
      }
    }
    total += err / static_cast<double>(protocol.obs_times.size());
  }
  out.inferred_mse = total / static_cast<double>(s);
  return out;
}

StudyResult run_study(const SimProtocol& protocol, const FitConfig& fit_config,
                      int n_replicates, int threads) {
  if (n_replicates < 1)
    throw Error(ErrorCode::InvalidArgument, "need at least one replicate");
  const OdeModel& model = builtin(protocol.model);
  const auto re = protocol.random_effect_indices(model);
  const int l = model.n_params;
  const int r = static_cast<int>(re.size());
  const int m = model.n_components;

  StudyResult result;
  result.replicates.resize(static_cast<std::size_t>(n_replicates));

  std::atomic<int> next{0};
  auto worker = [&]() {
    while (true) {
      const int rep = next.fetch_add(1);
      if (rep >= n_replicates) break;
      SimProtocol p = protocol;
      p.seed = derive_seed(protocol.seed, static_cast<std::uint64_t>(rep));
      FitConfig cfg = fit_config;
      cfg.model = protocol.model;
      cfg.random_effects = protocol.random_effects;
      cfg.seed = p.seed;
      const auto t0 = std::chrono::steady_clock::now();
      SimResult sim = generate_dataset(p);
      FitResult fit = run_fit(sim.data, cfg);
      const auto t1 = std::chrono::steady_clock::now();
      ReplicateMetrics metrics = evaluate_replicate(p, sim, fit);
      metrics.runtime_seconds =
          std::chrono::duration<double>(t1 - t0).count();
      result.replicates[static_cast<std::size_t>(rep)] = std::move(metrics);
    }
  };
  const int nt = std::max(1, std::min(threads, n_replicates));
  if (nt == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // aggregate over converged replicates, in replicate order
  std::vector<const ReplicateMetrics*> ok;
  for (const auto& rm : result.replicates) {
    if (rm.converged) ok.push_back(&rm);
    result.n_converged += rm.converged ? 1 : 0;
    result.mean_runtime_seconds += rm.runtime_seconds;
  }
  result.mean_runtime_seconds /= static_cast<double>(n_replicates);
  if (ok.empty()) return result;
  const double n_ok = static_cast<double>(ok.size());

  auto add_row = [&](const std::string& name, double truth, auto estimate,
                     auto covered, bool track_coverage) {
    // a lone replicate gives a 0/1 indicator, not a coverage statistic
    track_coverage = track_coverage && ok.size() > 1;
    MetricRow row;
    row.name = name;
    row.truth = truth;
    double sum = 0.0, sq = 0.0, cov = 0.0;
    for (const ReplicateMetrics* rm : ok) {
      const double est = estimate(*rm);
      sum += est;
      sq += (est - truth) * (est - truth);
      if (track_coverage) cov += covered(*rm) ? 1.0 : 0.0;
    }
    row.mean_estimate = sum / n_ok;
    row.rmse = std::sqrt(sq / n_ok);
    row.coverage = track_coverage ? cov / n_ok : -1.0;
    result.rows.push_back(row);
  };

  for (int p = 0; p < l; ++p)
    add_row("eta_" + model.param_names[static_cast<std::size_t>(p)],
            protocol.eta[p],
            [p](const ReplicateMetrics& rm) { return rm.eta_hat[p]; },
            [p](const ReplicateMetrics& rm) {
              return rm.eta_covered[static_cast<std::size_t>(p)];
            },
            true);
  for (int a = 0; a < r; ++a)
    for (int b = a; b < r; ++b)
      add_row("sigma_b(" + std::to_string(a + 1) + "," + std::to_string(b + 1) +
                  ")",
              protocol.sigma_b(a, b),
              [a, b](const ReplicateMetrics& rm) {
                return rm.sigma_b_hat(a, b);
              },
              [](const ReplicateMetrics&) { return false; }, false);
  for (int k = 0; k < r; ++k)
    add_row("sd_b_" + model.param_names[static_cast<std::size_t>(re[k])],
            std::sqrt(protocol.sigma_b(k, k)),
            [k](const ReplicateMetrics& rm) { return rm.sd_b_hat[k]; },
            [k](const ReplicateMetrics& rm) {
              return rm.sd_b_covered[static_cast<std::size_t>(k)];
            },
            true);
  for (int i = 0; i < m; ++i)
    add_row("sigma_" + std::to_string(i), protocol.noise_sd[i],
            [i](const ReplicateMetrics& rm) { return rm.sigma_hat[i]; },
            [i](const ReplicateMetrics& rm) {
              return rm.sigma_covered[static_cast<std::size_t>(i)];
            },
            true);

  double mse_sum = 0.0, inf_sum = 0.0;
  int n_finite = 0;
  for (const ReplicateMetrics* rm : ok) {
    if (std::isfinite(rm->resolved_mse) && std::isfinite(rm->inferred_mse)) {
      mse_sum += rm->resolved_mse;
      inf_sum += rm->inferred_mse;
      ++n_finite;
    } else {
      ++result.n_mse_blowups;
    }
  }
  if (n_finite > 0) {
    result.mean_resolved_mse = mse_sum / n_finite;
    result.mean_inferred_mse = inf_sum / n_finite;
  } else {
    result.mean_resolved_mse = std::numeric_limits<double>::infinity();
    result.mean_inferred_mse = std::numeric_limits<double>::infinity();
  }
  return result;
}

}  // namespace mixode
