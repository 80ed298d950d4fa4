#include "vaevar/assimilation.hpp"
#include "vaevar/cost.hpp"
#include "vaevar/dynamics.hpp"
#include "vaevar/rng.hpp"
#include "vaevar/tinynn.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace vaevar;

DynamicalSystem lorenz96() {
  auto p = Lorenz96Params::uniform(20, 8.0);
  p.forcing[0] = 13.0;
  return DynamicalSystem(p);
}

void BM_Rk4Lorenz63(benchmark::State& state) {
  const DynamicalSystem sys(Lorenz63Params{});
  const Vector x0 = Eigen::Vector3d(1.0, 1.0, 20.0);
  for (auto _ : state) benchmark::DoNotOptimize(propagate(sys, x0, 0.01, static_cast<int>(state.range(0))));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Rk4Lorenz63)->Arg(10)->Arg(100);

void BM_Rk4Lorenz96(benchmark::State& state) {
  const DynamicalSystem sys = lorenz96();
  Rng rng(1);
  const Vector x0 = standard_normal(rng, 20);
  for (auto _ : state) benchmark::DoNotOptimize(propagate(sys, x0, 0.01, 10));
}
BENCHMARK(BM_Rk4Lorenz96);

void BM_MlpInputJacobian(benchmark::State& state) {
  const Eigen::Index h = state.range(0), dim = state.range(1), latent = state.range(2);
  Rng rng(2);
  const nn::MlpParams p = nn::MlpParams::init_uniform({latent, h, h, dim}, rng);
  const Vector z = standard_normal(rng, latent);
  for (auto _ : state) benchmark::DoNotOptimize(nn::mlp_input_jacobian(p, z));
}
BENCHMARK(BM_MlpInputJacobian)->Args({8, 3, 3})->Args({35, 20, 15});

void BM_VaeCost(benchmark::State& state) {
  const bool l96 = state.range(0) != 0;
  const Eigen::Index dim = l96 ? 20 : 3, latent = l96 ? 15 : 3, h = l96 ? 35 : 8;
  Rng rng(3);
  auto dec = std::make_shared<const nn::MlpParams>(nn::MlpParams::init_uniform({latent, h, h, dim}, rng));
  const ObservationOperator op = ObservationOperator::full(dim);
  ObservationBatch b;
  b.windows = {{0, standard_normal(rng, dim)}};
  b.r_std = 0.3;
  const CostSpec spec{VaeControl{dec, 1e-2, {}}, standard_normal(rng, dim), op, b, nullptr, 0.01};
  const Vector z = standard_normal(rng, latent);
  for (auto _ : state) benchmark::DoNotOptimize(total_cost(z, spec));
}
BENCHMARK(BM_VaeCost)->Arg(0)->Arg(1);

void BM_Obs4dLorenz96(benchmark::State& state) {
  auto model = std::make_shared<const DynamicalSystem>(lorenz96());
  Rng rng(4);
  const ObservationOperator op = ObservationOperator::full(20);
  ObservationBatch b;
  b.windows = {{0, standard_normal(rng, 20)}, {2, standard_normal(rng, 20)}};
  b.r_std = 0.3;
  const Vector x = standard_normal(rng, 20);
  for (auto _ : state) benchmark::DoNotOptimize(obs_term_4d(x, op, b, *model, 0.01));
}
BENCHMARK(BM_Obs4dLorenz96);

void BM_AssimilateLorenz63(benchmark::State& state) {
  const bool vae = state.range(0) != 0;
  Rng rng(5);
  auto dec = std::make_shared<const nn::MlpParams>(nn::MlpParams::init_uniform({3, 8, 8, 3}, rng));
  const ObservationOperator op({true, true, false});
  ObservationBatch b;
  b.windows = {{0, standard_normal(rng, 2)}};
  b.r_std = 0.3;
  const Vector xb = standard_normal(rng, 3);
  const CostSpec spec = vae ? CostSpec{VaeControl{dec, 1e-2, {}}, xb, op, b, nullptr, 0.01}
                            : CostSpec{TraditionalControl{Matrix::Identity(3, 3)}, xb, op, b, nullptr, 0.01};
  for (auto _ : state) benchmark::DoNotOptimize(assimilate(spec));
}
BENCHMARK(BM_AssimilateLorenz63)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
