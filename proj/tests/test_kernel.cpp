#include <doctest.h>

#include <random>

#include "mixode/kernel.hpp"
#include "support/oracles.hpp"

using namespace mixode;

namespace {

Vector random_grid(std::mt19937_64& rng, int n, double span) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Vector g(n);
  double t = 0.0;
  for (int i = 0; i < n; ++i) {
    t += u(rng) * span / n;
    g[i] = t;
  }
  return g;
}

KernelConfig random_config(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  KernelConfig cfg;
  cfg.variance_scale = std::exp(u(rng) * 3.0 - 1.0);
  cfg.bandwidth = std::exp(u(rng) * 2.0 - 1.0);
  // keep a margin from integer orders, where the test oracle loses accuracy
  cfg.smoothness = 2.05 + 0.9 * u(rng);
  return cfg;
}

}  // namespace

TEST_CASE("matern at zero lag equals the variance scale") {
  CHECK(matern(0.0, {2.0, 1.0, 2.5}) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(matern(0.0, {3.5, 0.7, 2.01}) == doctest::Approx(3.5).epsilon(1e-14));
}

TEST_CASE("matern nu = 5/2 closed form at d = bandwidth") {
  // (1 + sqrt(5) + 5/3) exp(-sqrt(5))
  const double want = 0.52399410883182031;
  CHECK(oracle::rel_err(matern(1.0, {1.0, 1.0, 2.5}), want) < 1e-14);
}

TEST_CASE("matern generic order against the series/CF Bessel oracle") {
  const KernelConfig cfg{1.0, 0.5, 2.01};
  const double got = matern(0.3, cfg);
  const double via_oracle = oracle::matern_via_bessel(0.3, 1.0, 0.5, 2.01);
  CHECK(oracle::rel_err(got, via_oracle) < 1e-10);
  CHECK(oracle::rel_err(got, 0.75128621683094132) < 1e-12);  // mpmath value
}

TEST_CASE("nu = 5/2 fast path agrees with the generic Bessel route") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    const double phi1 = std::exp(2.0 * u(rng) - 1.0);
    const double phi2 = std::exp(1.5 * u(rng) - 0.5);
    const double d = 3.0 * phi2 * u(rng);
    const double fast = matern(d, {phi1, phi2, 2.5});
    const double generic = oracle::matern_via_bessel(d, phi1, phi2, 2.5);
    CHECK(oracle::rel_err(fast, generic) < 1e-9);
  }
}

TEST_CASE("matern rejects invalid input") {
  CHECK_THROWS_AS(matern(std::nan(""), {1.0, 1.0, 2.5}), Error);
  CHECK_THROWS_AS(matern(-0.1, {1.0, 1.0, 2.5}), Error);
  CHECK_THROWS_AS(matern(1.0, {-1.0, 1.0, 2.5}), Error);
}

TEST_CASE("matern is bounded by its zero-lag value and decreasing") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 30; ++k) {
    const KernelConfig cfg = random_config(rng);
    double prev = matern(0.0, cfg);
    for (double d = 0.05 * cfg.bandwidth; d < 6.0 * cfg.bandwidth;
         d += 0.13 * cfg.bandwidth) {
      const double v = matern(d, cfg);
      CHECK(v <= prev * (1.0 + 1e-12));
      CHECK(v <= cfg.variance_scale);
      prev = v;
    }
  }
}

TEST_CASE("kernel_block on the single point {0}") {
  const double phi1 = 1.7, phi2 = 0.6;
  Vector g(1);
  g[0] = 0.0;
  KernelBlocks b = kernel_block(g, g, {phi1, phi2, 2.5});
  CHECK(b.k(0, 0) == doctest::Approx(phi1).epsilon(1e-14));
  CHECK(b.dk_ds(0, 0) == 0.0);
  // derivative-process variance 2 nu phi1 / ((2 nu - 2) phi2^2) = 5 phi1/(3 phi2^2)
  CHECK(oracle::rel_err(b.d2k_dsdt(0, 0), 5.0 * phi1 / (3.0 * phi2 * phi2)) <
        1e-12);
  // cross-check by central differences of matern around small lags
  const KernelConfig cfg{phi1, phi2, 2.5};
  const double h = 1e-5 * phi2;
  const double fd = -(matern(2.0 * h, cfg) - 2.0 * matern(h, cfg) +
                      matern(0.0, cfg)) /
                    (h * h);
  CHECK(oracle::rel_err(b.d2k_dsdt(0, 0), fd, 1e-6) < 1e-4);
}

TEST_CASE("kernel_block derivative matrices match finite differences") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 25; ++rep) {
    const KernelConfig cfg = random_config(rng);
    Vector s = random_grid(rng, 6, 4.0 * cfg.bandwidth);
    Vector t = random_grid(rng, 5, 4.0 * cfg.bandwidth);
    KernelBlocks b = kernel_block(s, t, cfg);
    auto k_of = [&](double si, double tj) {
      return matern(std::abs(si - tj), cfg);
    };
    const double h = 1e-5 * cfg.bandwidth;
    // the mixed second difference amplifies Bessel evaluation noise by
    // 1/(4h^2); balance truncation against that noise with a larger step
    const double h2 = 5e-4 * cfg.bandwidth;
    const double scale2 = std::abs(b.d2k_dsdt(0, 0));
    for (Eigen::Index i = 0; i < s.size(); ++i)
      for (Eigen::Index j = 0; j < t.size(); ++j) {
        if (std::abs(s[i] - t[j]) < 10 * h) continue;
        const double fd_s =
            (k_of(s[i] + h, t[j]) - k_of(s[i] - h, t[j])) / (2.0 * h);
        const double fd_t =
            (k_of(s[i], t[j] + h) - k_of(s[i], t[j] - h)) / (2.0 * h);
        CHECK(oracle::rel_err(b.dk_ds(i, j), fd_s, 1e-8) < 1e-5);
        CHECK(oracle::rel_err(b.dk_dt(i, j), fd_t, 1e-8) < 1e-5);
        if (std::abs(s[i] - t[j]) < 0.1 * cfg.bandwidth) continue;
        const double fd_st = (k_of(s[i] + h2, t[j] + h2) -
                              k_of(s[i] + h2, t[j] - h2) -
                              k_of(s[i] - h2, t[j] + h2) +
                              k_of(s[i] - h2, t[j] - h2)) /
                             (4.0 * h2 * h2);
        CHECK(std::abs(b.d2k_dsdt(i, j) - fd_st) < 1e-5 * scale2);
      }
  }
}

TEST_CASE("kernel_block symmetry and sign conventions") {
  std::mt19937_64 rng(5);
  const KernelConfig cfg = random_config(rng);
  Vector g = random_grid(rng, 8, 3.0);
  KernelBlocks b = kernel_block(g, g, cfg);
  CHECK((b.k - b.k.transpose()).norm() < 1e-13 * b.k.norm());
  CHECK((b.dk_ds + b.dk_dt).norm() == 0.0);
  CHECK(b.dk_ds.diagonal().norm() == 0.0);
}

TEST_CASE("kernel_block rejects smoothness <= 2") {
  Vector g(2);
  g << 0.0, 1.0;
  CHECK_THROWS_AS(kernel_block(g, g, {1.0, 1.0, 1.5}), Error);
  CHECK_THROWS_AS(kernel_block(g, g, {1.0, 1.0, 2.0}), Error);
}

TEST_CASE("build_gp_matrices decorrelates at long lags") {
  const double phi2 = 0.8;
  Vector g(2);
  g << 0.0, 10.0 * phi2;
  for (double nu : {2.5, 2.01}) {
    GpMatrices gp = build_gp_matrices(g, {1.3, phi2, nu});
    const double kpp0 = 2.0 * nu * 1.3 / ((2.0 * nu - 2.0) * phi2 * phi2);
    CHECK(std::abs(gp.zeta(0, 0) - kpp0) < 0.01 * kpp0);
    CHECK(std::abs(gp.zeta(1, 1) - kpp0) < 0.01 * kpp0);
  }
}

TEST_CASE("build_gp_matrices matches brute-force Gaussian conditioning") {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> nd(2, 12);
  for (int rep = 0; rep < 30; ++rep) {
    const KernelConfig cfg = random_config(rng);
    Vector g = random_grid(rng, nd(rng), 5.0 * cfg.bandwidth);
    GpMatrices gp = build_gp_matrices(g, cfg);
    KernelBlocks b = kernel_block(g, g, cfg);
    // joint covariance of (x, x'): [[K, K'], ['K, K'']]; the prior block
    // carries the same stabilizing jitter the factorization used
    Matrix k_jittered = b.k;
    k_jittered.diagonal().array() += gp.jitter_c;
    oracle::ConditionalGaussian cond =
        oracle::condition_gaussian(k_jittered, b.dk_dt, b.dk_ds, b.d2k_dsdt);
    CHECK(oracle::rel_frobenius(gp.m, cond.mean_map) < 1e-8);
    CHECK(oracle::rel_frobenius(gp.zeta, cond.cov) < 1e-8);
    // m C = 'K up to factorization round-off
    CHECK(oracle::rel_frobenius(gp.m * k_jittered, b.dk_ds) < 1e-8);
  }
}

TEST_CASE("build_gp_matrices rejects degenerate grids") {
  Vector one(1);
  one[0] = 0.5;
  CHECK_THROWS_AS(build_gp_matrices(one, {1.0, 1.0, 2.5}), Error);
  Vector bad(3);
  bad << 0.0, 1.0, 1.0;
  CHECK_THROWS_AS(build_gp_matrices(bad, {1.0, 1.0, 2.5}), Error);
}
