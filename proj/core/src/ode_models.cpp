#include "mixode/ode_models.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace mixode {

namespace {

OdeModel make_population_growth() {
  OdeModel m;
  m.name = "population_growth";
  m.n_components = 1;
  m.n_params = 1;
  m.param_names = {"theta"};
  m.positivity = {true};
  m.default_random_effects = {true};
  m.rhs = [](const Vector& x, const Vector& th, double, double) {
    Vector f(1);
    f[0] = -th[0] * x[0];
    return f;
  };
  m.jac_state = [](const Vector&, const Vector& th, double, double) {
    Matrix j(1, 1);
    j(0, 0) = -th[0];
    return j;
  };
  m.jac_theta = [](const Vector& x, const Vector&, double, double) {
    Matrix j(1, 1);
    j(0, 0) = -x[0];
    return j;
  };
  return m;
}

OdeModel make_forced_vdp() {
  OdeModel m;
  m.name = "forced_vdp";
  m.n_components = 1;
  m.n_params = 2;
  m.param_names = {"theta1", "theta2"};
  m.positivity = {false, false};
  m.default_random_effects = {true, true};
  m.rhs = [](const Vector& x, const Vector& th, double t, double) {
    Vector f(1);
    f[0] = th[0] * (1.0 - x[0] * x[0]) * x[0] - th[1] * std::sin(t);
    return f;
  };
  m.jac_state = [](const Vector& x, const Vector& th, double, double) {
    Matrix j(1, 1);
    j(0, 0) = th[0] * (1.0 - 3.0 * x[0] * x[0]);
    return j;
  };
  m.jac_theta = [](const Vector& x, const Vector&, double t, double) {
    Matrix j(1, 2);
    j(0, 0) = (1.0 - x[0] * x[0]) * x[0];
    j(0, 1) = -std::sin(t);
    return j;
  };
  return m;
}

OdeModel make_fitzhugh_nagumo() {
  OdeModel m;
  m.name = "fitzhugh_nagumo";
  m.n_components = 2;
  m.n_params = 3;
  m.param_names = {"theta1", "theta2", "theta3"};
  m.positivity = {true, true, true};
  m.default_random_effects = {true, true, true};
  m.rhs = [](const Vector& x, const Vector& th, double, double) {
    const double v = x[0], r = x[1];
    Vector f(2);
    f[0] = th[2] * (v - v * v * v / 3.0 + r);
    f[1] = -1.0 / th[2] * (v - th[0] + th[1] * r);
    return f;
  };
  m.jac_state = [](const Vector& x, const Vector& th, double, double) {
    const double v = x[0];
    Matrix j(2, 2);
    j(0, 0) = th[2] * (1.0 - v * v);
    j(0, 1) = th[2];
    j(1, 0) = -1.0 / th[2];
    j(1, 1) = -th[1] / th[2];
    return j;
  };
  m.jac_theta = [](const Vector& x, const Vector& th, double, double) {
    const double v = x[0], r = x[1];
    Matrix j = Matrix::Zero(2, 3);
    j(0, 2) = v - v * v * v / 3.0 + r;
    j(1, 0) = 1.0 / th[2];
    j(1, 1) = -r / th[2];
    j(1, 2) = (v - th[0] + th[1] * r) / (th[2] * th[2]);
    return j;
  };
  return m;
}

OdeModel make_pk_bateman() {
  OdeModel m;
  m.name = "pk_bateman";
  m.n_components = 1;
  m.n_params = 3;
  m.param_names = {"Ke", "Ka", "Cl"};
  m.positivity = {true, true, true};
  // the elimination rate is a fixed effect only by default
  m.default_random_effects = {false, true, true};
  m.uses_dose = true;
  m.rhs = [](const Vector& x, const Vector& th, double t, double dose) {
    const double ke = th[0], ka = th[1], cl = th[2];
    Vector f(1);
    f[0] = -ke * x[0] + dose * ke * ka / cl * std::exp(-ka * t);
    return f;
  };
  m.jac_state = [](const Vector&, const Vector& th, double, double) {
    Matrix j(1, 1);
    j(0, 0) = -th[0];
    return j;
  };
  m.jac_theta = [](const Vector& x, const Vector& th, double t, double dose) {
    const double ke = th[0], ka = th[1], cl = th[2];
    const double e = std::exp(-ka * t);
    Matrix j(1, 3);
    j(0, 0) = -x[0] + dose * ka / cl * e;
    j(0, 1) = dose * ke / cl * e * (1.0 - ka * t);
    j(0, 2) = -dose * ke * ka / (cl * cl) * e;
    return j;
  };
  return m;
}

std::map<std::string, OdeModel>& registry() {
  static std::map<std::string, OdeModel> models = [] {
    std::map<std::string, OdeModel> r;
    for (const OdeModel& m :
         {make_population_growth(), make_forced_vdp(), make_fitzhugh_nagumo(),
          make_pk_bateman()})
      r.emplace(m.name, m);
    return r;
  }();
  return models;
}

std::mutex& registry_mutex() {
  static std::mutex mu;
  return mu;
}

}  // namespace

int OdeModel::param_index(const std::string& pname) const {
  for (std::size_t i = 0; i < param_names.size(); ++i)
    if (param_names[i] == pname) return static_cast<int>(i);
  throw Error(ErrorCode::Lookup,
              "model " + name + " has no parameter named " + pname);
}

const OdeModel& builtin(const std::string& name) {
  std::lock_guard<std::mutex> lock(registry_mutex());
  auto& models = registry();
  auto it = models.find(name);
  if (it == models.end()) {
    std::string known;
    for (const auto& [k, v] : models) known += (known.empty() ? "" : ", ") + k;
    throw Error(ErrorCode::Lookup,
                "unknown model '" + name + "'; available: " + known);
  }
  return it->second;
}

void register_model(const OdeModel& model) {
  if (model.name.empty() || !model.rhs || !model.jac_state || !model.jac_theta)
    throw Error(ErrorCode::InvalidArgument,
                "model registration requires a name, rhs, and both Jacobians");
  if (static_cast<int>(model.param_names.size()) != model.n_params ||
      static_cast<int>(model.positivity.size()) != model.n_params ||
      static_cast<int>(model.default_random_effects.size()) != model.n_params)
    throw Error(ErrorCode::InvalidArgument,
                "model metadata vectors must have length n_params");
  std::lock_guard<std::mutex> lock(registry_mutex());
  registry()[model.name] = model;
}

std::vector<std::string> registered_model_names() {
  std::lock_guard<std::mutex> lock(registry_mutex());
  std::vector<std::string> names;
  for (const auto& [k, v] : registry()) names.push_back(k);
  return names;
}

Matrix evaluate_rhs_grid(const OdeModel& model, const Matrix& x_grid,
                         const Vector& theta, const Vector& times,
                         double dose) {
  if (x_grid.cols() != model.n_components || x_grid.rows() != times.size())
    throw Error(ErrorCode::InvalidArgument,
                "rhs grid shapes are inconsistent with the model");
  Matrix out(x_grid.rows(), x_grid.cols());
  for (Eigen::Index t = 0; t < times.size(); ++t) {
    Vector f = model.rhs(x_grid.row(t).transpose(), theta, times[t], dose);
    if (!f.allFinite())
      throw Error(ErrorCode::Numerical,
                  "model " + model.name + " produced a non-finite value at row " +
                      std::to_string(t));
    out.row(t) = f.transpose();
  }
  return out;
}

}  // namespace mixode
