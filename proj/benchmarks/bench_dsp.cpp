#include <benchmark/benchmark.h>

#include "bench_util.hpp"
#include "safenet/dsp.hpp"

namespace safenet::bench {
namespace {

// One default recording: 60 s of 5-channel sEMG at 500 Hz.
void BM_ZeroPhaseChain(benchmark::State& state) {
  Rng rng(6);
  const Tensor x = random_tensor({30000, 5}, rng);
  const dsp::BiquadCascade notch = dsp::design_notch(50.0, 500.0, 35.0);
  const dsp::BiquadCascade hp = dsp::design_butter_highpass(4, 20.0, 500.0);
  for (auto _ : state) benchmark::DoNotOptimize(dsp::filt_zero_phase(hp, dsp::filt_zero_phase(notch, x)).data());
  state.SetItemsProcessed(state.iterations() * 30000);
}
BENCHMARK(BM_ZeroPhaseChain)->Unit(benchmark::kMillisecond);

void BM_SegmentWindows(benchmark::State& state) {
  Rng rng(7);
  const Tensor semg = random_tensor({30000, 5}, rng), angles = random_tensor({30000, 3}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(dsp::segment_windows(semg, angles, 0, 50, 8).windows.data());
}
BENCHMARK(BM_SegmentWindows)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace safenet::bench
