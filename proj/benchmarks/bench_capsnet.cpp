#include <benchmark/benchmark.h>

#include "fedchain/capsnet.hpp"
#include "fedchain/rng.hpp"

using namespace fedchain;
using namespace fedchain::capsnet;

namespace {

Predictions random_predictions(std::size_t n_in, std::size_t n_out, std::size_t d,
                               std::uint64_t seed) {
  RngStream rng(seed);
  Predictions p(n_in, n_out, d);
  for (double& x : p.data) x = rng.next_gaussian();
  return p;
}

LabeledDataset random_blobs(std::size_t n, std::size_t dim, std::uint64_t seed) {
  RngStream rng(seed);
  LabeledDataset d;
  d.feature_dim = dim;
  d.x.resize(n * dim);
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.y[i] = static_cast<std::uint32_t>(i % 2);
    double c = d.y[i] == 0 ? -0.5 : 0.5;
    for (std::size_t k = 0; k < dim; ++k) d.x[i * dim + k] = c + rng.next_gaussian();
  }
  return d;
}

}  // namespace

static void BM_DynamicRouting(benchmark::State& state) {
  auto p = random_predictions(static_cast<std::size_t>(state.range(0)), 10, 16, 1);
  for (auto _ : state) {
    auto r = dynamic_routing(p, 3);
    benchmark::DoNotOptimize(r.v.data.data());
  }
}
BENCHMARK(BM_DynamicRouting)->Arg(32)->Arg(128)->Arg(512);

static void BM_ForwardPass(benchmark::State& state) {
  ModelConfig cfg;
  cfg.input_dim = 16;
  cfg.n_primary = 8;
  cfg.d_primary = 4;
  cfg.n_classes = 2;
  cfg.d_out = 8;
  auto model = CapsuleClassifier::init(cfg, 3);
  auto data = random_blobs(1, 16, 5);
  for (auto _ : state) {
    auto v = model.forward(data.sample(0));
    benchmark::DoNotOptimize(v.data.data());
  }
}
BENCHMARK(BM_ForwardPass);

static void BM_TrainEpoch(benchmark::State& state) {
  ModelConfig cfg;
  cfg.input_dim = 16;
  cfg.n_primary = 4;
  cfg.d_primary = 4;
  cfg.n_classes = 2;
  cfg.d_out = 4;
  auto model = CapsuleClassifier::init(cfg, 3);
  auto data = random_blobs(static_cast<std::size_t>(state.range(0)), 16, 5);
  for (auto _ : state) {
    auto r = train_local(model, data, 1, 0.5, 7);
    benchmark::DoNotOptimize(r.model.parameter_count());
  }
}
BENCHMARK(BM_TrainEpoch)->Arg(64)->Arg(256);
