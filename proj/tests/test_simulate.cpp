#include <doctest.h>

#include "mixode/simulate.hpp"
#include "support/oracles.hpp"

using namespace mixode;

namespace {

Vector vec(std::initializer_list<double> vals) {
  Vector v(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (double x : vals) v[i++] = x;
  return v;
}

SimProtocol vdp_protocol() {
  SimProtocol p;
  p.model = "forced_vdp";
  p.eta = vec({0.6, 0.6});
  p.sigma_b = Matrix::Constant(2, 2, 0.01);  // exactly singular by design
  p.x0 = {{1.0, 0.03}};
  p.noise_sd = vec({0.03});
  p.obs_times = Vector::LinSpaced(21, 0.0, 20.0);
  p.n_subjects = 25;
  p.seed = 42;
  return p;
}

SimProtocol fn_protocol() {
  SimProtocol p;
  p.model = "fitzhugh_nagumo";
  p.eta = vec({0.2, 0.2, 3.0});
  p.sigma_b.resize(3, 3);
  p.sigma_b << 0.0025, 0.0025, 0.03, 0.0025, 0.0025, 0.03, 0.03, 0.03, 0.36;
  p.x0 = {{-1.0, 0.1}, {1.0, 0.1}};
  p.noise_sd = vec({0.1, 0.1});
  p.obs_times = Vector::LinSpaced(41, 0.0, 20.0);
  p.n_subjects = 25;
  p.seed = 7;
  return p;
}

}  // namespace

TEST_CASE("rk4 reproduces the exponential-decay solution") {
  const OdeModel& m = builtin("population_growth");
  Vector times = Vector::LinSpaced(11, 0.0, 1.0);
  Matrix x = rk_solve(m, vec({3.0}), vec({1.0}), times);
  for (Eigen::Index i = 0; i < times.size(); ++i)
    CHECK(std::abs(x(i, 0) -
                   oracle::population_growth_solution(1.0, 3.0, times[i])) <
          1e-8);
}

TEST_CASE("rk4 reproduces the absorption-elimination closed form") {
  const OdeModel& m = builtin("pk_bateman");
  Vector times = Vector::LinSpaced(25, 0.0, 12.0);
  Matrix x = rk_solve(m, vec({0.3, 1.0, 22.45}), vec({0.0}), times, 400.0);
  for (Eigen::Index i = 0; i < times.size(); ++i)
    CHECK(std::abs(x(i, 0) - oracle::bateman_solution(0.3, 1.0, 22.45, 400.0,
                                                      times[i])) < 1e-7);
  CHECK(std::abs(x(4, 0) - 3.1573122712624657) < 1e-7);  // t = 2
}

TEST_CASE("zero right-hand side keeps the state constant") {
  const OdeModel& m = builtin("population_growth");
  Matrix x = rk_solve(m, vec({0.0}), vec({1.0}), Vector::LinSpaced(5, 0, 1));
  CHECK((x.array() == 1.0).all());
}

TEST_CASE("rk4 error shrinks at fourth order under step halving") {
  const OdeModel& m = builtin("population_growth");
  Vector times(2);
  times << 0.0, 1.0;
  const double truth = oracle::population_growth_solution(1.0, 3.0, 1.0);
  const double e1 =
      std::abs(rk_solve(m, vec({3.0}), vec({1.0}), times, 0.0, 0.1)(1, 0) -
               truth);
  const double e2 =
      std::abs(rk_solve(m, vec({3.0}), vec({1.0}), times, 0.0, 0.05)(1, 0) -
               truth);
  CHECK(e1 / e2 > 12.0);
  CHECK(e1 / e2 < 20.0);
}

TEST_CASE("rk4 reports blow-up with the last valid time") {
  OdeModel m = builtin("population_growth");
  m.rhs = [](const Vector& x, const Vector&, double, double) {
    Vector f(1);
    f[0] = x[0] * x[0] * x[0];  // finite-time escape
    return f;
  };
  Vector times(2);
  times << 0.0, 5.0;
  CHECK_THROWS_AS(rk_solve(m, vec({1.0}), vec({2.0}), times), Error);
}

TEST_CASE("dataset generation matches the oscillator study design") {
  SimResult r = generate_dataset(vdp_protocol());
  CHECK(r.data.subjects.size() == 25);
  CHECK(r.data.n_components == 1);
  for (const auto& s : r.data.subjects) CHECK(s.series[0].size() == 21);
  // singular covariance forces identical random effects per subject
  for (const auto& t : r.truth)
    CHECK(std::abs((t.theta[0] - 0.6) - (t.theta[1] - 0.6)) < 1e-12);
}

TEST_CASE("dataset generation matches the two-component study design") {
  SimResult r = generate_dataset(fn_protocol());
  CHECK(r.data.subjects.size() == 25);
  CHECK(r.data.n_components == 2);
  for (const auto& s : r.data.subjects) {
    CHECK(s.series[0].size() == 41);
    CHECK(s.series[1].size() == 41);
  }
}

TEST_CASE("generation is bitwise reproducible from the seed") {
  SimResult a = generate_dataset(fn_protocol());
  SimResult b = generate_dataset(fn_protocol());
  for (std::size_t j = 0; j < a.data.subjects.size(); ++j)
    for (int i = 0; i < 2; ++i)
      CHECK(a.data.subjects[j].series[i].values ==
            b.data.subjects[j].series[i].values);
  SimProtocol other = fn_protocol();
  other.seed = 8;
  SimResult c = generate_dataset(other);
  CHECK(a.data.subjects[0].series[0].values !=
        c.data.subjects[0].series[0].values);
  // shape is seed-invariant
  CHECK(c.data.subjects.size() == a.data.subjects.size());
}

TEST_CASE("trajectory MSE vanishes at the truth and scales quadratically") {
  SimProtocol p = vdp_protocol();
  p.n_subjects = 5;
  SimResult r = generate_dataset(p);
  const OdeModel& m = builtin(p.model);
  std::vector<Vector> theta, x0;
  std::vector<double> doses(5, 0.0);
  for (const auto& t : r.truth) {
    theta.push_back(t.theta);
    x0.push_back(t.x0);
  }
  CHECK(trajectory_mse(m, theta, x0, r.truth, p.obs_times, doses) == 0.0);

  auto perturbed = [&](double delta) {
    std::vector<Vector> th = theta;
    th[0][0] += delta;
    return trajectory_mse(m, th, x0, r.truth, p.obs_times, doses);
  };
  const double m1 = perturbed(1e-3);
  const double m2 = perturbed(5e-4);
  CHECK(m1 / m2 == doctest::Approx(4.0).epsilon(0.15));
}
