#include <benchmark/benchmark.h>

#include <vector>

#include "bench_util.hpp"
#include "safenet/model.hpp"

namespace safenet::bench {
namespace {

void BM_ForwardInference(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  model::SAFENet net(model::SAFENetConfig{}, 8);
  Rng rng(9);
  const Tensor x = random_tensor({batch, 50, 5}, rng, -2.0, 2.0);
  for (auto _ : state) {
    Tape tape(false);
    ForwardContext ctx{tape};
    benchmark::DoNotOptimize(net.forward(ctx, tape.constant(x)).angles.value().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_ForwardInference)->Arg(1)->Arg(50)->Unit(benchmark::kMillisecond);

// One training step's forward and backward pass on a batch of 50.
void BM_TrainingStep(benchmark::State& state) {
  model::SAFENet net(model::SAFENetConfig{}, 10);
  Rng rng(11);
  const Tensor x = random_tensor({50, 50, 5}, rng, -2.0, 2.0);
  const Tensor y = random_tensor({50, 3}, rng);
  std::vector<int> labels(50);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 4);
  for (auto _ : state) {
    Tape tape;
    ForwardContext ctx{tape, true};
    model::ForwardOutput out = net.forward(ctx, tape.constant(x));
    tape.backward(net.loss(ctx, out, tape.constant(y), labels).total);
    net.zero_grad();
  }
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace safenet::bench
