#include <benchmark/benchmark.h>

#include "bench_util.hpp"
#include "safenet/autodiff.hpp"
#include "safenet/ops.hpp"

namespace safenet::bench {
namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(ops::matmul(tape.constant(a), tape.constant(b)).value().data());
  }
  state.counters["flop/s"] =
      benchmark::Counter(2.0 * double(n * n * n), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(256);

void BM_Conv1dForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor x = random_tensor({batch, 50, 64}, rng);
  Tensor w = random_tensor({3, 64, 64}, rng);
  w.set_requires_grad(true);
  for (auto _ : state) {
    Tape tape;
    Var y = ops::conv1d(tape.constant(x), tape.parameter(w), 2, 4, 0);
    tape.backward(ops::sum(y));
    w.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_Conv1dForwardBackward)->Arg(1)->Arg(50);

}  // namespace
}  // namespace safenet::bench
