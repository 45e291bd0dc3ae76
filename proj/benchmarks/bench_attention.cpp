#include <benchmark/benchmark.h>

#include "bench_util.hpp"
#include "safenet/attention.hpp"

namespace safenet::bench {
namespace {

// Spike accumulation against the dense product on the same binary queries.
void BM_SpikeMatmul(benchmark::State& state) {
  const double rate = static_cast<double>(state.range(0)) / 100.0;
  Rng rng(3);
  const Tensor q = random_binary({50, 64}, rng, rate);
  const Tensor k_t = random_tensor({64, 50}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(attention::spike_matmul(q, k_t).data());
}
BENCHMARK(BM_SpikeMatmul)->Arg(10)->Arg(30)->Arg(100);

void BM_DenseScores(benchmark::State& state) {
  Rng rng(4);
  const Tensor q = random_binary({50, 64}, rng, 0.3);
  const Tensor k_t = random_tensor({64, 50}, rng);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(ops::matmul(tape.constant(q), tape.constant(k_t)).value().data());
  }
}
BENCHMARK(BM_DenseScores);

void BM_SparseAttention(benchmark::State& state) {
  const auto u = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  const Tensor q = random_binary({50, 64}, rng, 0.3);
  const Tensor k = random_tensor({50, 64}, rng), v = random_tensor({50, 64}, rng);
  const attention::SSAConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(attention::sparse_attention(q, k, v, cfg, u).data());
}
BENCHMARK(BM_SparseAttention)->Arg(0)->Arg(20)->Arg(50);

}  // namespace
}  // namespace safenet::bench
