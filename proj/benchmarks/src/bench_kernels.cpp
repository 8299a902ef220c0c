#include <benchmark/benchmark.h>

#include "scca/adjacency.hpp"
#include "scca/numkit/ops.hpp"
#include "scca/rng.hpp"

namespace nk = scca::nk;

namespace {

nk::Tensor random(const nk::Shape& shape, std::uint64_t seed) {
  scca::Rng rng(seed);
  nk::Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(-1, 1);
  return t;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  const nk::Tensor x = random({16, c, s, s}, 1), w = random({c, c, 3, 3}, 2);
  for (auto _ : state) {
    nk::Tape tape;
    nk::Var xv = tape.constant(x), wv = tape.leaf(w);
    tape.backward(nk::sum(nk::conv2d(xv, wv, 1, 1)));
    benchmark::DoNotOptimize(tape.grad(wv)->data().data());
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({8, 32})->Args({16, 16})->Args({32, 8})->Unit(benchmark::kMillisecond);

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const nk::Tensor a = random({n, n}, 3), b = random({n, n}, 4);
  for (auto _ : state) {
    nk::Tape tape;
    benchmark::DoNotOptimize(nk::matmul(tape.constant(a), tape.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(32, 256);

void BM_MaskedRowSoftmax(benchmark::State& state) {
  const std::size_t n = 68;
  const auto k = static_cast<std::size_t>(state.range(0));
  const nk::Tensor mask = scca::adj::topk_sparsify(random({n, n}, 5), k).mask;
  const nk::Tensor scores = random({16, n, n}, 6);
  for (auto _ : state) {
    nk::Tape tape;
    benchmark::DoNotOptimize(nk::rowsoftmax(tape.constant(scores), mask).value().data().data());
  }
}
BENCHMARK(BM_MaskedRowSoftmax)->Arg(1)->Arg(3)->Arg(10);

}  // namespace
