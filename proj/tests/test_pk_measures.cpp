#include <doctest.h>

#include "mixode/pk_measures.hpp"
#include "mixode/simulate.hpp"
#include "support/oracles.hpp"

using namespace mixode;

namespace {

CovProvider zero_cov() {
  return [](const Vector&) { return 0.0; };
}

// diagonal covariance: Var(w^T x) = sum w_i^2 se_i^2
CovProvider diag_cov(const Vector& se) {
  return [se](const Vector& w) {
    return (w.array().square() * se.array().square()).sum();
  };
}

}  // namespace

TEST_CASE("constant trajectories have degenerate summaries") {
  Vector t = Vector::LinSpaced(11, 0.0, 5.0);
  Vector x = Vector::Constant(11, 2.5);
  Vector se = Vector::Zero(11);
  PkSummary s = summarize(t, x, se, zero_cov(), 0.0, 5.0);
  CHECK(s.cmax.estimate == 2.5);
  CHECK(s.cmin.estimate == 2.5);
  CHECK(s.auc.estimate == doctest::Approx(12.5).epsilon(1e-14));
  CHECK(s.cmax.se == 0.0);
  CHECK(s.auc.se == 0.0);
}

TEST_CASE("trapezoid AUC tracks the closed-form exposure integral") {
  const double ke = 0.3, ka = 1.0, cl = 22.45, dose = 400.0;
  Vector t = Vector::LinSpaced(1201, 0.0, 12.0);  // 0.01 step
  Vector x(t.size()), se = Vector::Zero(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i)
    x[i] = oracle::bateman_solution(ke, ka, cl, dose, t[i]);
  PkSummary s = summarize(t, x, se, zero_cov(), 0.0, 12.0);
  const double want = oracle::bateman_auc(ke, ka, cl, dose, 12.0);
  CHECK(oracle::rel_err(s.auc.estimate, want) < 1e-3);
  CHECK(oracle::rel_err(want, 17.121937532711764) < 1e-12);

  // cross-check the oracle itself against an RK solve of the dynamics
  const OdeModel& model = builtin("pk_bateman");
  Vector theta(3);
  theta << ke, ka, cl;
  Matrix rk = rk_solve(model, theta, Vector::Zero(1), t, dose);
  CHECK((rk.col(0) - x).lpNorm<Eigen::Infinity>() < 1e-7);

  // the peak sits where absorption crosses elimination; the window minimum
  // of a single-dose curve is the zero start
  CHECK(s.tmax == doctest::Approx(std::log(ka / ke) / (ka - ke)).epsilon(0.01));
  CHECK(s.cmin.estimate == 0.0);
  // restricted to the post-peak window the trough is the final value
  PkSummary post = summarize(t, x, se, zero_cov(), s.tmax, 12.0);
  CHECK(post.cmin.estimate == doctest::Approx(x[t.size() - 1]).epsilon(1e-12));
}

TEST_CASE("trapezoid error decays at second order under grid refinement") {
  const double ke = 0.3, ka = 1.0, cl = 22.45, dose = 400.0;
  const double want = oracle::bateman_auc(ke, ka, cl, dose, 12.0);
  auto auc_err = [&](int n) {
    Vector t = Vector::LinSpaced(n, 0.0, 12.0);
    Vector x(t.size()), se = Vector::Zero(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i)
      x[i] = oracle::bateman_solution(ke, ka, cl, dose, t[i]);
    return std::abs(summarize(t, x, se, zero_cov(), 0.0, 12.0).auc.estimate -
                    want);
  };
  const double ratio = auc_err(97) / auc_err(193);
  CHECK(ratio > 3.5);
  CHECK(ratio < 4.5);
}

TEST_CASE("pk interval construction matches the reporting conventions") {
  // estimate 2.74, CI (2.25, 3.23) -> se = 0.49 / z_{0.025}
  Vector t = Vector::LinSpaced(3, 0.0, 2.0);
  Vector x(3), se(3);
  x << 1.0, 2.74, 0.09;
  const double se_cmax = 0.49 / 1.9599639845400545;
  se << 0.1, se_cmax, 0.24;
  PkSummary s = summarize(t, x, se, diag_cov(se), 0.0, 2.0);
  CHECK(s.cmax.estimate == 2.74);
  CHECK(s.cmax.lo == doctest::Approx(2.25).epsilon(1e-10));
  CHECK(s.cmax.hi == doctest::Approx(3.23).epsilon(1e-10));
  // trough interval floored at zero
  CHECK(s.cmin.estimate == 0.09);
  CHECK(s.cmin.lo == 0.0);
  CHECK(s.cmin.hi > 0.09);
}

TEST_CASE("auc uncertainty flows through the covariance provider") {
  Vector t = Vector::LinSpaced(5, 0.0, 4.0);
  Vector x = Vector::Constant(5, 1.0);
  Vector se = Vector::Constant(5, 0.2);
  PkSummary s = summarize(t, x, se, diag_cov(se), 0.0, 4.0);
  // weights (.5,1,1,1,.5): Var = 0.04 * (0.25 + 3 + 0.25)
  CHECK(s.auc.se == doctest::Approx(std::sqrt(0.04 * 3.5)).epsilon(1e-12));
}

TEST_CASE("windows outside the grid are rejected") {
  Vector t = Vector::LinSpaced(5, 0.0, 4.0);
  Vector x = Vector::Constant(5, 1.0);
  Vector se = Vector::Zero(5);
  CHECK_THROWS_AS(summarize(t, x, se, zero_cov(), -1.0, 4.0), Error);
  CHECK_THROWS_AS(summarize(t, x, se, zero_cov(), 0.0, 6.0), Error);
  CHECK_THROWS_AS(summarize(t, x, se, zero_cov(), 3.0, 3.0), Error);
}

TEST_CASE("summary invariants hold on a peaked trajectory") {
  Vector t = Vector::LinSpaced(49, 0.0, 12.0);
  Vector x(49), se = Vector::Constant(49, 0.3);
  for (Eigen::Index i = 0; i < 49; ++i)
    x[i] = oracle::bateman_solution(0.3, 1.0, 22.45, 400.0, t[i]);
  PkSummary s = summarize(t, x, se, diag_cov(se), 0.0, 12.0);
  CHECK(s.cmin.estimate <= s.cmax.estimate);
  CHECK(s.auc.estimate >= s.cmin.estimate * 12.0);
  CHECK(s.cmin.lo >= 0.0);
}
