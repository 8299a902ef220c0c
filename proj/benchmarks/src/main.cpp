#include <benchmark/benchmark.h>

#include "scca/numkit/parallel.hpp"

int main(int argc, char** argv) {
  scca::nk::configure_process();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
