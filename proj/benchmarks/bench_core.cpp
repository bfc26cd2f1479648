#include <benchmark/benchmark.h>

#include <random>

#include "mixode/fit.hpp"
#include "mixode/optimizer.hpp"
#include "mixode/simulate.hpp"

using namespace mixode;

namespace {

SimProtocol decay_protocol(int n_subjects, int n_obs) {
  SimProtocol p;
  p.model = "population_growth";
  p.eta = Vector::Constant(1, 3.0);
  p.sigma_b = Matrix::Constant(1, 1, 0.09);
  p.x0 = {{1.0, 0.1}};
  p.noise_sd = Vector::Constant(1, 0.03);
  p.obs_times = Vector::LinSpaced(n_obs, 0.0, 1.0);
  p.n_subjects = n_subjects;
  p.seed = 17;
  return p;
}

struct Assembled {
  AssembledProblem ap;
  StartingValues sv;
};

Assembled assemble(int n_subjects, int level) {
  SimResult sim = generate_dataset(decay_protocol(n_subjects, 21));
  FitConfig cfg;
  cfg.model = "population_growth";
  cfg.discretization_level = level;
  cfg.smoothness = 2.01;
  Assembled out{assemble_problem(sim.data, cfg), {}};
  out.sv = starting_values(out.ap.problem, out.ap.hyper_fits);
  return out;
}

}  // namespace

static void BM_KernelMatrices(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Vector grid = Vector::LinSpaced(n, 0.0, 1.0);
  KernelConfig cfg{1.0, 0.2, 2.01};
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_gp_matrices(grid, cfg));
  }
}
BENCHMARK(BM_KernelMatrices)->Arg(41)->Arg(97)->Arg(161);

static void BM_PosteriorValueGrad(benchmark::State& state) {
  Assembled a = assemble(static_cast<int>(state.range(0)), 1);
  Vector u = a.sv.u0;
  double value;
  Vector grad;
  for (auto _ : state) {
    eval_posterior(a.ap.problem, u, a.sv.omega0, &value, &grad, nullptr);
    benchmark::DoNotOptimize(value);
  }
}
BENCHMARK(BM_PosteriorValueGrad)->Arg(5)->Arg(20);

static void BM_HessianBlocks(benchmark::State& state) {
  Assembled a = assemble(static_cast<int>(state.range(0)), 1);
  Vector u = a.sv.u0;
  double value;
  std::vector<Matrix> blocks;
  for (auto _ : state) {
    eval_posterior(a.ap.problem, u, a.sv.omega0, &value, nullptr, &blocks);
    benchmark::DoNotOptimize(blocks);
  }
}
BENCHMARK(BM_HessianBlocks)->Arg(5)->Arg(20);

static void BM_InnerSolve(benchmark::State& state) {
  Assembled a = assemble(static_cast<int>(state.range(0)), 1);
  for (auto _ : state) {
    InnerSolution sol =
        inner_optimize(a.ap.problem, a.sv.omega0, a.sv.u0);
    benchmark::DoNotOptimize(sol.q_value);
  }
}
BENCHMARK(BM_InnerSolve)->Arg(5)->Arg(20);

static void BM_RkSolve(benchmark::State& state) {
  const OdeModel& model = builtin("pk_bateman");
  Vector theta(3);
  theta << 0.3, 1.0, 22.45;
  Vector times = Vector::LinSpaced(97, 0.0, 12.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        rk_solve(model, theta, Vector::Zero(1), times, 400.0));
  }
}
BENCHMARK(BM_RkSolve);

BENCHMARK_MAIN();
