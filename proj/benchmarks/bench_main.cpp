#include <benchmark/benchmark.h>

#include "safenet/runtime.hpp"

int main(int argc, char** argv) {
  safenet::runtime::tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
