#include "mixode/artifact.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace mixode {

using json = nlohmann::ordered_json;

namespace {

constexpr int kSchemaVersion = 1;

json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vector vector_from_json(const json& arr) {
  Vector v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  return v;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Matrix matrix_from_json(const json& rows) {
  const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
  if (r == 0) return Matrix();
  const Eigen::Index c = static_cast<Eigen::Index>(rows[0].size());
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j)
      m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]
                    .get<double>();
  return m;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Parse, "cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, path + ": " + e.what());
  }
  return j;
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  return j[key].get<T>();
}

PriorSpec priors_from_json(const json& j) {
  PriorSpec priors;
  if (j.contains("eta") && !j["eta"].is_null())
    for (auto it = j["eta"].begin(); it != j["eta"].end(); ++it) {
      NormalPrior p;
      p.mean = it.value().at("mean").get<double>();
      p.sd = it.value().at("sd").get<double>();
      priors.eta[it.key()] = p;
    }
  if (j.contains("sigma_b") && !j["sigma_b"].is_null()) {
    InverseWishartPrior iw;
    iw.df = j["sigma_b"].at("df").get<double>();
    if (j["sigma_b"].contains("scale"))
      iw.scale = matrix_from_json(j["sigma_b"]["scale"]);
    else {
      // scale_diag with dimension resolved at problem assembly
      const double d = j["sigma_b"].at("scale_diag").get<double>();
      const int dim = j["sigma_b"].at("dim").get<int>();
      iw.scale = Matrix::Identity(dim, dim) * d;
    }
    priors.sigma_b = iw;
  }
  return priors;
}

json priors_to_json(const PriorSpec& priors) {
  json j;
  if (!priors.eta.empty()) {
    json eta;
    for (const auto& [name, p] : priors.eta)
      eta[name] = {{"mean", p.mean}, {"sd", p.sd}};
    j["eta"] = eta;
  }
  if (priors.sigma_b) {
    j["sigma_b"] = {{"df", priors.sigma_b->df},
                    {"scale", matrix_to_json(priors.sigma_b->scale)}};
  }
  return j;
}

FitConfig fit_config_from_json(const json& j) {
  FitConfig cfg;
  cfg.model = get_or<std::string>(j, "model", "");
  cfg.random_effects =
      get_or<std::vector<std::string>>(j, "random_effects", {});
  cfg.discretization_level = get_or<int>(j, "discretization_level", 1);
  cfg.common_grid = get_or<bool>(j, "common_grid", true);
  if (j.contains("predict_to") && !j["predict_to"].is_null())
    cfg.predict_to = j["predict_to"].get<double>();
  cfg.predict_step = get_or<double>(j, "predict_step", 0.0);
  cfg.smoothness = get_or<double>(j, "smoothness", 2.01);
  cfg.mean_mode = get_or<std::string>(j, "mean_mode", "zero");
  cfg.lambda = get_or<double>(j, "lambda", 1.0);
  cfg.lambda_auto = get_or<bool>(j, "lambda_auto", false);
  cfg.noise_mode = get_or<std::string>(j, "noise_mode", "shared");
  cfg.freeze_sigma = get_or<bool>(j, "freeze_sigma", false);
  cfg.known_noise_sd = get_or<std::vector<double>>(j, "known_noise_sd", {});
  if (j.contains("priors") && !j["priors"].is_null())
    cfg.priors = priors_from_json(j["priors"]);
  if (j.contains("tolerances") && !j["tolerances"].is_null()) {
    const json& t = j["tolerances"];
    cfg.tol.inner_grad = get_or<double>(t, "inner_grad", cfg.tol.inner_grad);
    cfg.tol.inner_max_iter =
        get_or<int>(t, "inner_max_iter", cfg.tol.inner_max_iter);
    cfg.tol.outer_grad = get_or<double>(t, "outer_grad", cfg.tol.outer_grad);
    cfg.tol.outer_obj = get_or<double>(t, "outer_obj", cfg.tol.outer_obj);
    cfg.tol.outer_max_iter =
        get_or<int>(t, "outer_max_iter", cfg.tol.outer_max_iter);
    cfg.tol.fd_step = get_or<double>(t, "fd_step", cfg.tol.fd_step);
    cfg.tol.hess_step = get_or<double>(t, "hess_step", cfg.tol.hess_step);
    cfg.tol.jitter = get_or<double>(t, "jitter", cfg.tol.jitter);
  }
  cfg.seed = get_or<std::uint64_t>(j, "seed", 1);
  cfg.ci_level = get_or<double>(j, "ci_level", 0.95);
  cfg.pk_summaries = get_or<bool>(j, "pk_summaries", false);
  if (j.contains("pk_window") && !j["pk_window"].is_null())
    cfg.pk_window = std::make_pair(j["pk_window"][0].get<double>(),
                                   j["pk_window"][1].get<double>());
  cfg.cmin_threshold = get_or<double>(j, "cmin_threshold", 0.1);
  return cfg;
}

json fit_config_to_json(const FitConfig& cfg) {
  json j;
  j["model"] = cfg.model;
  j["random_effects"] = cfg.random_effects;
  j["discretization_level"] = cfg.discretization_level;
  j["common_grid"] = cfg.common_grid;
  j["predict_to"] = cfg.predict_to ? json(*cfg.predict_to) : json(nullptr);
  j["predict_step"] = cfg.predict_step;
  j["smoothness"] = cfg.smoothness;
  j["mean_mode"] = cfg.mean_mode;
  j["lambda"] = cfg.lambda;
  j["lambda_auto"] = cfg.lambda_auto;
  j["noise_mode"] = cfg.noise_mode;
  j["freeze_sigma"] = cfg.freeze_sigma;
  j["known_noise_sd"] = cfg.known_noise_sd;
  j["priors"] = priors_to_json(cfg.priors);
  j["tolerances"] = {{"inner_grad", cfg.tol.inner_grad},
                     {"inner_max_iter", cfg.tol.inner_max_iter},
                     {"outer_grad", cfg.tol.outer_grad},
                     {"outer_obj", cfg.tol.outer_obj},
                     {"outer_max_iter", cfg.tol.outer_max_iter},
                     {"fd_step", cfg.tol.fd_step},
                     {"hess_step", cfg.tol.hess_step},
                     {"jitter", cfg.tol.jitter}};
  j["seed"] = cfg.seed;
  j["ci_level"] = cfg.ci_level;
  j["pk_summaries"] = cfg.pk_summaries;
  j["pk_window"] = cfg.pk_window
                       ? json::array({cfg.pk_window->first, cfg.pk_window->second})
                       : json(nullptr);
  j["cmin_threshold"] = cfg.cmin_threshold;
  return j;
}

json dataset_to_json(const Dataset& data) {
  json subjects = json::array();
  for (const SubjectRecord& s : data.subjects) {
    json rec;
    rec["id"] = s.id;
    rec["dose"] = s.dose ? json(*s.dose) : json(nullptr);
    json series = json::array();
    for (const Series& ser : s.series)
      series.push_back({{"times", vector_to_json(ser.times)},
                        {"values", vector_to_json(ser.values)}});
    rec["series"] = series;
    subjects.push_back(rec);
  }
  return {{"n_components", data.n_components}, {"subjects", subjects}};
}

Dataset dataset_from_json(const json& j) {
  Dataset data;
  data.n_components = j.at("n_components").get<int>();
  for (const json& rec : j.at("subjects")) {
    SubjectRecord s;
    s.id = rec.at("id").get<std::string>();
    if (!rec.at("dose").is_null()) s.dose = rec["dose"].get<double>();
    for (const json& ser : rec.at("series")) {
      Series sr;
      sr.times = vector_from_json(ser.at("times"));
      sr.values = vector_from_json(ser.at("values"));
      s.series.push_back(std::move(sr));
    }
    data.subjects.push_back(std::move(s));
  }
  return data;
}

json scalar_report_to_json(const ScalarReport& r) {
  return {{"name", r.name},
          {"estimate", r.estimate},
          {"se", r.se},
          {"ci", json::array({r.lo, r.hi})}};
}

ScalarReport scalar_report_from_json(const json& j) {
  ScalarReport r;
  r.name = j.at("name").get<std::string>();
  r.estimate = j.at("estimate").get<double>();
  r.se = j.at("se").get<double>();
  r.lo = j.at("ci")[0].get<double>();
  r.hi = j.at("ci")[1].get<double>();
  return r;
}

json pk_estimate_to_json(const PkEstimate& e) {
  return {{"estimate", e.estimate},
          {"se", e.se},
          {"ci", json::array({e.lo, e.hi})}};
}

PkEstimate pk_estimate_from_json(const json& j) {
  PkEstimate e;
  e.estimate = j.at("estimate").get<double>();
  e.se = j.at("se").get<double>();
  e.lo = j.at("ci")[0].get<double>();
  e.hi = j.at("ci")[1].get<double>();
  return e;
}

json fit_result_to_json(const FitResult& r) {
  json j;
  j["model"] = r.model;
  j["random_effects"] = r.random_effects;
  j["converged"] = r.converged;
  j["failure_reason"] = r.failure_reason;
  j["neg_log_marginal"] = r.neg_log_marginal;
  j["outer_iterations"] = r.outer_iterations;
  j["inner_iterations_final"] = r.inner_iterations_final;
  j["objective_trace"] = r.objective_trace;
  json eta = json::array();
  for (const auto& e : r.eta) eta.push_back(scalar_report_to_json(e));
  j["eta"] = eta;
  j["sigma_b"] = matrix_to_json(r.sigma_b);
  json sdb = json::array();
  for (const auto& e : r.sd_b) sdb.push_back(scalar_report_to_json(e));
  j["sd_b"] = sdb;
  json sig = json::array();
  for (const auto& e : r.sigma) sig.push_back(scalar_report_to_json(e));
  j["sigma"] = sig;
  j["omega_hat"] = vector_to_json(r.omega_hat);
  j["omega_cov"] = matrix_to_json(r.omega_cov);
  json subjects = json::array();
  for (const SubjectFit& s : r.subjects) {
    json sj;
    sj["id"] = s.id;
    sj["dose"] = s.dose ? json(*s.dose) : json(nullptr);
    sj["b"] = vector_to_json(s.b);
    sj["theta"] = vector_to_json(s.theta);
    sj["grid_times"] = vector_to_json(s.grid_times);
    sj["horizon_start"] =
        s.horizon_start ? json(*s.horizon_start) : json(nullptr);
    sj["trajectory"] = matrix_to_json(s.trajectory);
    sj["trajectory_se"] = matrix_to_json(s.trajectory_se);
    json pk = json::array();
    for (const PkSummary& p : s.pk)
      pk.push_back({{"cmax", pk_estimate_to_json(p.cmax)},
                    {"cmin", pk_estimate_to_json(p.cmin)},
                    {"auc", pk_estimate_to_json(p.auc)},
                    {"tmax", p.tmax},
                    {"window", json::array({p.window_start, p.window_end})}});
    sj["pk"] = pk;
    sj["predicted_trough"] = s.predicted_trough
                                 ? pk_estimate_to_json(*s.predicted_trough)
                                 : json(nullptr);
    sj["prob_trough_below"] =
        s.prob_trough_below ? json(*s.prob_trough_below) : json(nullptr);
    subjects.push_back(sj);
  }
  j["subjects"] = subjects;
  return j;
}

FitResult fit_result_from_json(const json& j) {
  FitResult r;
  r.model = j.at("model").get<std::string>();
  r.random_effects = j.at("random_effects").get<std::vector<std::string>>();
  r.converged = j.at("converged").get<bool>();
  r.failure_reason = j.at("failure_reason").get<std::string>();
  r.neg_log_marginal = j.at("neg_log_marginal").get<double>();
  r.outer_iterations = j.at("outer_iterations").get<int>();
  r.inner_iterations_final = j.at("inner_iterations_final").get<int>();
  r.objective_trace = j.at("objective_trace").get<std::vector<double>>();
  for (const json& e : j.at("eta")) r.eta.push_back(scalar_report_from_json(e));
  r.sigma_b = matrix_from_json(j.at("sigma_b"));
  for (const json& e : j.at("sd_b"))
    r.sd_b.push_back(scalar_report_from_json(e));
  for (const json& e : j.at("sigma"))
    r.sigma.push_back(scalar_report_from_json(e));
  r.omega_hat = vector_from_json(j.at("omega_hat"));
  r.omega_cov = matrix_from_json(j.at("omega_cov"));
  for (const json& sj : j.at("subjects")) {
    SubjectFit s;
    s.id = sj.at("id").get<std::string>();
    if (!sj.at("dose").is_null()) s.dose = sj["dose"].get<double>();
    s.b = vector_from_json(sj.at("b"));
    s.theta = vector_from_json(sj.at("theta"));
    s.grid_times = vector_from_json(sj.at("grid_times"));
    if (!sj.at("horizon_start").is_null())
      s.horizon_start = sj["horizon_start"].get<int>();
    s.trajectory = matrix_from_json(sj.at("trajectory"));
    s.trajectory_se = matrix_from_json(sj.at("trajectory_se"));
    for (const json& p : sj.at("pk")) {
      PkSummary ps;
      ps.cmax = pk_estimate_from_json(p.at("cmax"));
      ps.cmin = pk_estimate_from_json(p.at("cmin"));
      ps.auc = pk_estimate_from_json(p.at("auc"));
      ps.tmax = p.at("tmax").get<double>();
      ps.window_start = p.at("window")[0].get<double>();
      ps.window_end = p.at("window")[1].get<double>();
      s.pk.push_back(ps);
    }
    if (!sj.at("predicted_trough").is_null())
      s.predicted_trough = pk_estimate_from_json(sj["predicted_trough"]);
    if (!sj.at("prob_trough_below").is_null())
      s.prob_trough_below = sj["prob_trough_below"].get<double>();
    r.subjects.push_back(std::move(s));
  }
  return r;
}

}  // namespace

FitConfig fit_config_from_json_file(const std::string& path) {
  return fit_config_from_json(load_json_file(path));
}

FitConfig fit_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, std::string("config: ") + e.what());
  }
  return fit_config_from_json(j);
}

std::string fit_config_to_json_text(const FitConfig& config) {
  return fit_config_to_json(config).dump(2);
}

SimProtocol protocol_from_json_file(const std::string& path) {
  const json j = load_json_file(path);
  SimProtocol p;
  p.model = j.at("model").get<std::string>();
  p.eta = vector_from_json(j.at("eta"));
  p.sigma_b = matrix_from_json(j.at("sigma_b"));
  p.random_effects =
      get_or<std::vector<std::string>>(j, "random_effects", {});
  for (const json& c : j.at("x0"))
    p.x0.push_back({c.at("mean").get<double>(), c.at("sd").get<double>()});
  p.noise_sd = vector_from_json(j.at("noise_sd"));
  if (j.at("obs_times").is_array()) {
    p.obs_times = vector_from_json(j["obs_times"]);
  } else {
    const json& o = j["obs_times"];
    const double from = o.at("from").get<double>();
    const double to = o.at("to").get<double>();
    const int count = o.at("count").get<int>();
    p.obs_times = Vector::LinSpaced(count, from, to);
  }
  p.n_subjects = j.at("n_subjects").get<int>();
  if (j.contains("dose") && !j["dose"].is_null())
    p.dose = j["dose"].get<double>();
  p.seed = get_or<std::uint64_t>(j, "seed", 1);
  p.truncate_positive = get_or<bool>(j, "truncate_positive", false);
  p.id_prefix = get_or<std::string>(j, "id_prefix", "subj");
  return p;
}

FitConfig protocol_fit_config(const std::string& path) {
  const json j = load_json_file(path);
  FitConfig cfg;
  if (j.contains("fit") && !j["fit"].is_null())
    cfg = fit_config_from_json(j["fit"]);
  cfg.model = j.at("model").get<std::string>();
  cfg.random_effects =
      get_or<std::vector<std::string>>(j, "random_effects", {});
  return cfg;
}

void write_fit_artifact(const FitArtifact& artifact, const std::string& path) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["config_hash"] = config_hash(artifact.config);
  j["seed"] = artifact.config.seed;
  j["config"] = fit_config_to_json(artifact.config);
  j["dataset"] = dataset_to_json(artifact.data);
  j["result"] = fit_result_to_json(artifact.result);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Parse, "cannot write " + path);
  out << j.dump(2) << '\n';
}

FitArtifact read_fit_artifact(const std::string& path) {
  const json j = load_json_file(path);
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != kSchemaVersion)
    throw Error(ErrorCode::Parse,
                path + ": unsupported or missing schema_version");
  FitArtifact a;
  a.config = fit_config_from_json(j.at("config"));
  a.data = dataset_from_json(j.at("dataset"));
  a.result = fit_result_from_json(j.at("result"));
  return a;
}

std::string config_hash(const FitConfig& config) {
  const std::string text = fit_config_to_json(config).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace mixode
