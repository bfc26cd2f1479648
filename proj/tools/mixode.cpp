#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "mixode/artifact.hpp"
#include "mixode/study.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace mixode;

namespace {

struct FitFlags {
  std::string model;
  int level = -1;
  double predict_to = std::numeric_limits<double>::quiet_NaN();
  double predict_step = -1.0;
  double lambda = -1.0;
  std::uint64_t seed = 0;
  bool have_seed = false;
  std::string noise_mode;
  bool freeze_sigma = false;
};

void apply_flags(FitConfig& cfg, const FitFlags& f) {
  if (!f.model.empty()) cfg.model = f.model;
  if (f.level >= 0) cfg.discretization_level = f.level;
  if (std::isfinite(f.predict_to)) cfg.predict_to = f.predict_to;
  if (f.predict_step >= 0.0) cfg.predict_step = f.predict_step;
  if (f.lambda > 0.0) cfg.lambda = f.lambda;
  if (f.have_seed) cfg.seed = f.seed;
  if (!f.noise_mode.empty()) cfg.noise_mode = f.noise_mode;
  if (f.freeze_sigma) cfg.freeze_sigma = true;
}

Dataset load_data(const std::string& data_path, std::string covariates_path) {
  Dataset data = read_dataset_csv(data_path);
  if (covariates_path.empty()) {
    // a covariates file produced by `simulate` sits next to the data
    fs::path sibling = fs::path(data_path).parent_path() / "covariates.csv";
    if (fs::exists(sibling)) covariates_path = sibling.string();
  }
  if (!covariates_path.empty()) read_covariates_csv(data, covariates_path);
  return data;
}

void print_fit_summary(const FitResult& r) {
  std::printf("model: %s   converged: %s   -log marginal: %.6f\n",
              r.model.c_str(), r.converged ? "yes" : "no",
              r.neg_log_marginal);
  std::printf("%-12s %10s %10s %18s\n", "parameter", "estimate", "se",
              "95% CI");
  for (const ScalarReport& e : r.eta)
    std::printf("%-12s %10.4f %10.4f   (%.4f, %.4f)\n", e.name.c_str(),
                e.estimate, e.se, e.lo, e.hi);
  for (const ScalarReport& e : r.sd_b)
    std::printf("%-12s %10.4f %10.4f   (%.4f, %.4f)\n", e.name.c_str(),
                e.estimate, e.se, e.lo, e.hi);
  for (const ScalarReport& e : r.sigma)
    std::printf("%-12s %10.4f %10.4f   (%.4f, %.4f)\n", e.name.c_str(),
                e.estimate, e.se, e.lo, e.hi);
  if (!r.failure_reason.empty())
    std::printf("failure: %s\n", r.failure_reason.c_str());
}

int cmd_fit(const std::string& data_path, const std::string& covariates_path,
            const std::string& config_path, const std::string& out_path,
            const FitFlags& flags) {
  FitConfig cfg = config_path.empty() ? FitConfig{}
                                      : fit_config_from_json_file(config_path);
  apply_flags(cfg, flags);
  FitArtifact artifact;
  artifact.config = cfg;
  artifact.data = load_data(data_path, covariates_path);
  artifact.result = run_fit(artifact.data, cfg);
  if (!out_path.empty()) write_fit_artifact(artifact, out_path);
  print_fit_summary(artifact.result);
  if (!artifact.result.converged) {
    std::cerr << "fit did not converge: " << artifact.result.failure_reason
              << "\n";
    return 3;
  }
  return 0;
}

int cmd_simulate(const std::string& protocol_path, const std::string& out_dir,
                 std::uint64_t seed, bool have_seed) {
  SimProtocol protocol = protocol_from_json_file(protocol_path);
  if (have_seed) protocol.seed = seed;
  SimResult sim = generate_dataset(protocol);
  fs::create_directories(out_dir);
  write_dataset_csv(sim.data, (fs::path(out_dir) / "data.csv").string());
  const OdeModel& model = builtin(protocol.model);
  if (model.uses_dose)
    write_covariates_csv(sim.data,
                         (fs::path(out_dir) / "covariates.csv").string());
  {
    std::ofstream out(fs::path(out_dir) / "truth_params.csv");
    out << "subject_id,param,value\n";
    for (int j = 0; j < protocol.n_subjects; ++j) {
      const SubjectTruth& t = sim.truth[static_cast<std::size_t>(j)];
      const std::string& id = sim.data.subjects[static_cast<std::size_t>(j)].id;
      for (int p = 0; p < model.n_params; ++p)
        out << id << ',' << model.param_names[static_cast<std::size_t>(p)]
            << ',' << format_shortest(t.theta[p]) << '\n';
      for (int i = 0; i < model.n_components; ++i)
        out << id << ",x0_" << i << ',' << format_shortest(t.x0[i]) << '\n';
    }
  }
  {
    std::ofstream out(fs::path(out_dir) / "truth_trajectories.csv");
    out << "subject_id,component,time,value\n";
    for (int j = 0; j < protocol.n_subjects; ++j) {
      const SubjectTruth& t = sim.truth[static_cast<std::size_t>(j)];
      const std::string& id = sim.data.subjects[static_cast<std::size_t>(j)].id;
      for (int i = 0; i < model.n_components; ++i)
        for (Eigen::Index k = 0; k < protocol.obs_times.size(); ++k)
          out << id << ',' << i << ',' << format_shortest(protocol.obs_times[k])
              << ',' << format_shortest(t.trajectory(k, i)) << '\n';
    }
  }
  std::printf("wrote %d subjects x %d times to %s\n", protocol.n_subjects,
              static_cast<int>(protocol.obs_times.size()), out_dir.c_str());
  return 0;
}

int cmd_predict(const std::string& fit_path, double predict_to,
                double predict_step, double threshold,
                const std::string& out_path) {
  FitArtifact artifact = read_fit_artifact(fit_path);
  artifact.config.predict_to = predict_to;
  if (predict_step > 0.0) artifact.config.predict_step = predict_step;
  artifact.config.cmin_threshold = threshold;
  artifact.result = run_fit(artifact.data, artifact.config);
  if (!out_path.empty()) write_fit_artifact(artifact, out_path);
  print_fit_summary(artifact.result);
  bool any = false;
  for (const SubjectFit& s : artifact.result.subjects)
    if (s.predicted_trough) {
      if (!any)
        std::printf("%-10s %10s %10s %22s\n", "subject", "trough", "se",
                    "P(trough < threshold)");
      any = true;
      std::printf("%-10s %10.4f %10.4f %22.2f\n", s.id.c_str(),
                  s.predicted_trough->estimate, s.predicted_trough->se,
                  s.prob_trough_below.value_or(0.0));
    }
  return artifact.result.converged ? 0 : 3;
}

int cmd_benchmark(const std::string& protocol_path, int replicates,
                  const std::string& out_dir, int threads) {
  SimProtocol protocol = protocol_from_json_file(protocol_path);
  FitConfig fit_cfg = protocol_fit_config(protocol_path);
  StudyResult study = run_study(protocol, fit_cfg, replicates, threads);

  std::printf("%-22s %10s %10s %10s %10s\n", "parameter", "truth", "mean est",
              "RMSE", "coverage");
  for (const MetricRow& row : study.rows) {
    if (row.coverage >= 0.0)
      std::printf("%-22s %10.4f %10.4f %10.4f %10.2f\n", row.name.c_str(),
                  row.truth, row.mean_estimate, row.rmse, row.coverage);
    else
      std::printf("%-22s %10.4f %10.4f %10.4f %10s\n", row.name.c_str(),
                  row.truth, row.mean_estimate, row.rmse, "-");
  }
  std::printf("trajectory MSE (re-solved): %.6g\n", study.mean_resolved_mse);
  std::printf("trajectory MSE (inferred):  %.6g\n", study.mean_inferred_mse);
  if (study.n_mse_blowups > 0)
    std::printf("replicates with solver blow-up under estimates: %d\n",
                study.n_mse_blowups);
  std::printf("converged: %d/%d   mean runtime: %.2f s\n", study.n_converged,
              replicates, study.mean_runtime_seconds);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    json metrics;
    metrics["schema_version"] = 1;
    metrics["protocol"] = protocol_path;
    metrics["config_hash"] = config_hash(fit_cfg);
    metrics["seed"] = protocol.seed;
    metrics["n_replicates"] = replicates;
    metrics["n_converged"] = study.n_converged;
    json rows = json::array();
    for (const MetricRow& row : study.rows) {
      json r = {{"name", row.name},
                {"truth", row.truth},
                {"mean_estimate", row.mean_estimate},
                {"rmse", row.rmse}};
      r["coverage"] = row.coverage >= 0.0 ? json(row.coverage) : json(nullptr);
      rows.push_back(r);
    }
    metrics["rows"] = rows;
    metrics["mean_trajectory_mse"] = study.mean_resolved_mse;
    metrics["mean_inferred_mse"] = study.mean_inferred_mse;
    metrics["mse_blowups"] = study.n_mse_blowups;
    json reps = json::array();
    for (const ReplicateMetrics& rm : study.replicates) {
      json r;
      r["converged"] = rm.converged;
      json eta = json::array();
      for (Eigen::Index p = 0; p < rm.eta_hat.size(); ++p)
        eta.push_back(rm.eta_hat[p]);
      r["eta_hat"] = eta;
      r["resolved_mse"] = rm.converged ? json(rm.resolved_mse) : json(nullptr);
      r["inferred_mse"] = rm.converged ? json(rm.inferred_mse) : json(nullptr);
      reps.push_back(r);
    }
    metrics["replicates"] = reps;
    std::ofstream mout(fs::path(out_dir) / "metrics.json");
    mout << metrics.dump(2) << '\n';

    // wall-clock timing lives in a sidecar so metrics.json stays
    // reproducible byte-for-byte
    json timing;
    timing["mean_runtime_seconds"] = study.mean_runtime_seconds;
    json per = json::array();
    for (const ReplicateMetrics& rm : study.replicates)
      per.push_back(rm.runtime_seconds);
    timing["replicate_runtime_seconds"] = per;
    std::ofstream tout(fs::path(out_dir) / "runtime.json");
    tout << timing.dump(2) << '\n';
  }
  return study.n_converged > 0 ? 0 : 3;
}

int cmd_pk_report(const std::string& fit_path, double cmax_threshold,
                  double cmin_threshold, const std::string& out_path) {
  FitArtifact artifact = read_fit_artifact(fit_path);
  const FitResult& r = artifact.result;
  json report = json::array();
  std::printf("%-10s %28s %28s %28s %8s %8s\n", "subject",
              "Cmax (95% CI)", "Cmin (95% CI)", "AUC (95% CI)", "Cmax>thr",
              "Cmin<thr");
  for (const SubjectFit& s : r.subjects) {
    if (s.pk.empty()) continue;
    const PkSummary& p = s.pk[0];
    const bool cmax_flag = p.cmax.estimate > cmax_threshold;
    const bool cmin_flag = p.cmin.estimate < cmin_threshold;
    std::printf(
        "%-10s %8.2f (%6.2f, %6.2f) %8.2f (%6.2f, %6.2f) %8.2f (%6.2f, %6.2f) "
        "%8s %8s\n",
        s.id.c_str(), p.cmax.estimate, p.cmax.lo, p.cmax.hi, p.cmin.estimate,
        p.cmin.lo, p.cmin.hi, p.auc.estimate, p.auc.lo, p.auc.hi,
        cmax_flag ? "yes" : "no", cmin_flag ? "yes" : "no");
    json row;
    row["subject"] = s.id;
    row["cmax"] = {{"estimate", p.cmax.estimate},
                   {"se", p.cmax.se},
                   {"ci", json::array({p.cmax.lo, p.cmax.hi})},
                   {"above_threshold", cmax_flag}};
    row["cmin"] = {{"estimate", p.cmin.estimate},
                   {"se", p.cmin.se},
                   {"ci", json::array({p.cmin.lo, p.cmin.hi})},
                   {"below_threshold", cmin_flag}};
    row["auc"] = {{"estimate", p.auc.estimate},
                  {"se", p.auc.se},
                  {"ci", json::array({p.auc.lo, p.auc.hi})}};
    row["tmax"] = p.tmax;
    report.push_back(row);
  }
  if (!out_path.empty()) {
    json doc;
    doc["schema_version"] = 1;
    doc["config_hash"] = config_hash(artifact.config);
    doc["seed"] = artifact.config.seed;
    doc["cmax_threshold"] = cmax_threshold;
    doc["cmin_threshold"] = cmin_threshold;
    doc["rows"] = report;
    std::ofstream out(out_path);
    out << doc.dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GP-constrained inference for mixed-effects ODE models"};
  app.require_subcommand(1);

  // fit
  auto* fit = app.add_subcommand("fit", "fit a mixed-effects ODE model");
  std::string data_path, covariates_path, config_path, out_path;
  FitFlags flags;
  fit->add_option("--data", data_path, "observation CSV")->required();
  fit->add_option("--covariates", covariates_path, "covariates CSV");
  fit->add_option("--config", config_path, "fit configuration JSON");
  fit->add_option("--out", out_path, "output artifact path");
  fit->add_option("--model", flags.model, "model name");
  fit->add_option("--level,--discretization-level", flags.level,
                  "discretization refinement level");
  fit->add_option("--predict-to", flags.predict_to, "prediction horizon end");
  fit->add_option("--predict-step", flags.predict_step, "prediction step");
  fit->add_option("--lambda", flags.lambda, "tempering parameter");
  auto* seed_opt = fit->add_option("--seed", flags.seed, "seed");
  fit->add_option("--noise-mode", flags.noise_mode, "shared|per_subject");
  fit->add_flag("--freeze-sigma", flags.freeze_sigma,
                "hold sigma at stage-one values");

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  std::string protocol_path, sim_out;
  std::uint64_t sim_seed = 0;
  sim->add_option("--protocol", protocol_path, "protocol JSON")->required();
  sim->add_option("--out", sim_out, "output directory")->required();
  auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "seed override");

  // predict
  auto* pred = app.add_subcommand("predict",
                                  "refit with an extended grid and report "
                                  "predictions");
  std::string pred_fit, pred_out;
  double pred_to = 0.0, pred_step = 0.0, pred_threshold = 0.1;
  pred->add_option("--fit", pred_fit, "fit artifact")->required();
  pred->add_option("--predict-to", pred_to, "horizon end")->required();
  pred->add_option("--predict-step", pred_step, "horizon step");
  pred->add_option("--threshold", pred_threshold, "trough threshold");
  pred->add_option("--out", pred_out, "output artifact path");

  // benchmark
  auto* bench = app.add_subcommand("benchmark",
                                   "simulate-and-refit replicate study");
  std::string bench_protocol, bench_out;
  int replicates = 10, threads = 1;
  bench->add_option("--protocol", bench_protocol, "protocol JSON")->required();
  bench->add_option("--replicates", replicates, "number of replicates");
  bench->add_option("--out", bench_out, "output directory");
  bench->add_option("--threads", threads, "worker threads");

  // pk-report
  auto* pk = app.add_subcommand("pk-report", "pharmacokinetic summary table");
  std::string pk_fit, pk_out;
  double cmax_threshold = 8.0, cmin_threshold = 0.1;
  pk->add_option("--fit", pk_fit, "fit artifact")->required();
  pk->add_option("--cmax-threshold", cmax_threshold, "peak threshold");
  pk->add_option("--cmin-threshold", cmin_threshold, "trough threshold");
  pk->add_option("--out", pk_out, "output report path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fit) {
      flags.have_seed = seed_opt->count() > 0;
      return cmd_fit(data_path, covariates_path, config_path, out_path, flags);
    }
    if (*sim)
      return cmd_simulate(protocol_path, sim_out, sim_seed,
                          sim_seed_opt->count() > 0);
    if (*pred)
      return cmd_predict(pred_fit, pred_to, pred_step, pred_threshold,
                         pred_out);
    if (*bench) return cmd_benchmark(bench_protocol, replicates, bench_out,
                                     threads);
    if (*pk) return cmd_pk_report(pk_fit, cmax_threshold, cmin_threshold,
                                  pk_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
