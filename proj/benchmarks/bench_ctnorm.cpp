#include <benchmark/benchmark.h>

#include "fedchain/ctnorm.hpp"
#include "fedchain/rng.hpp"

using namespace fedchain;
using namespace fedchain::ctnorm;

namespace {

CtVolume random_volume(std::uint32_t n, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<float> v(static_cast<std::size_t>(n) * n * n);
  for (float& x : v) {
    x = static_cast<float>(-1000.0 + rng.next_double() * 2000.0);
  }
  return CtVolume({n, n, n}, {1.0, 1.0, 1.0}, std::move(v));
}

}  // namespace

static void BM_SignalNormalize(benchmark::State& state) {
  auto v = random_volume(static_cast<std::uint32_t>(state.range(0)), 11);
  LungWindow w{-600.0, 1200.0};
  for (auto _ : state) {
    auto out = signal_normalize(v, w);
    benchmark::DoNotOptimize(out.voxels().data());
  }
  state.SetItemsProcessed(state.iterations() *
                          static_cast<std::int64_t>(v.voxels().size()));
}
BENCHMARK(BM_SignalNormalize)->Arg(64)->Arg(128);

static void BM_SpatialResample(benchmark::State& state) {
  auto v = random_volume(static_cast<std::uint32_t>(state.range(0)), 13);
  auto e = v.extent_mm();
  Spacing target{0.75, 0.75, 0.75};
  for (auto _ : state) {
    auto out = spatial_resample(v, e, target);
    benchmark::DoNotOptimize(out.voxels().data());
  }
}
BENCHMARK(BM_SpatialResample)->Arg(32)->Arg(64);
