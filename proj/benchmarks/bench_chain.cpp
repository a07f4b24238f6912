#include <benchmark/benchmark.h>

#include <filesystem>

#include "fedchain/chain.hpp"

using namespace fedchain;
using namespace fedchain::chain;

static void BM_SignVerifyTransaction(benchmark::State& state) {
  KeyPair kp = KeyPair::derive(1, "bench");
  for (auto _ : state) {
    Transaction tx = make_model_tx(kp, std::string(64, 'a'), "ct", 0.1, 4096, 1);
    bool ok = verify_transaction(tx, kp.public_key);
    benchmark::DoNotOptimize(ok);
  }
}
BENCHMARK(BM_SignVerifyTransaction);

static void BM_MerkleRoot(benchmark::State& state) {
  KeyPair kp = KeyPair::derive(2, "bench");
  std::vector<Transaction> txs;
  for (int i = 0; i < state.range(0); ++i) {
    txs.push_back(make_model_tx(kp, std::string(64, 'b'), "ct", 0.1, 64,
                                static_cast<std::uint64_t>(i)));
  }
  for (auto _ : state) {
    auto root = merkle_root_of(txs);
    benchmark::DoNotOptimize(root.data());
  }
}
BENCHMARK(BM_MerkleRoot)->Arg(16)->Arg(128);

static void BM_AppendAndVerifyChain(benchmark::State& state) {
  auto dir = std::filesystem::temp_directory_path() / "fedchain-bench-ledger";
  std::filesystem::create_directories(dir);
  KeyPair kp = KeyPair::derive(3, "bench");
  for (auto _ : state) {
    state.PauseTiming();
    auto path = dir / "chain.jsonl";
    std::filesystem::remove(path);
    state.ResumeTiming();

    Ledger ledger = Ledger::create(path, {make_register_tx(kp, "ct", 0)},
                                   kp.node_id(), 0);
    for (int b = 1; b <= state.range(0); ++b) {
      ledger.append_block({make_model_tx(kp, std::string(64, 'c'), "ct", 0.1, 64,
                                         static_cast<std::uint64_t>(b))},
                          kp.node_id(), b);
    }
    bool ok = verify_chain(ledger);
    benchmark::DoNotOptimize(ok);
  }
}
BENCHMARK(BM_AppendAndVerifyChain)->Arg(16);
