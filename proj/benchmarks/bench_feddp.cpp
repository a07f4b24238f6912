#include <benchmark/benchmark.h>

#include "fedchain/feddp.hpp"
#include "fedchain/rng.hpp"

using namespace fedchain;
using namespace fedchain::feddp;

namespace {

std::vector<ModelUpdate> random_updates(std::size_t count, std::size_t params,
                                        std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<ModelUpdate> updates;
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> v(params);
    for (double& x : v) x = rng.next_gaussian();
    updates.push_back({"h" + std::to_string(k), WeightTensor(std::move(v), {params})});
  }
  return updates;
}

}  // namespace

static void BM_ClipUpdate(benchmark::State& state) {
  auto updates = random_updates(1, static_cast<std::size_t>(state.range(0)), 3);
  for (auto _ : state) {
    auto c = clip_update(updates[0].delta, 1.0);
    benchmark::DoNotOptimize(c.data().data());
  }
}
BENCHMARK(BM_ClipUpdate)->Arg(1024)->Arg(65536);

static void BM_DpFederatedRound(benchmark::State& state) {
  const std::size_t params = static_cast<std::size_t>(state.range(0));
  auto updates = random_updates(10, params, 5);
  WeightTensor w_t = WeightTensor::zeros({params});
  FedConfig cfg;
  cfg.clip_bound = 1.0;
  cfg.noise_sigma = 1.0;
  cfg.subsample = 10;
  RngStream rng(7);
  for (auto _ : state) {
    auto next = dp_federated_round(w_t, updates, cfg, rng);
    benchmark::DoNotOptimize(next.data().data());
  }
}
BENCHMARK(BM_DpFederatedRound)->Arg(1024)->Arg(65536);

static void BM_LaplacePerturb(benchmark::State& state) {
  const std::size_t params = static_cast<std::size_t>(state.range(0));
  WeightTensor w = WeightTensor::zeros({params});
  RngStream rng(9);
  for (auto _ : state) {
    auto out = laplace_perturb(w, 1.0, 1.0, rng);
    benchmark::DoNotOptimize(out.data().data());
  }
}
BENCHMARK(BM_LaplacePerturb)->Arg(65536);
