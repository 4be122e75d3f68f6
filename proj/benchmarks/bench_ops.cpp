#include <benchmark/benchmark.h>

#include "adaptkit/ops.hpp"
#include "adaptkit/rng.hpp"

using namespace adaptkit;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

}  // namespace

static void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  Tensor x = random_tensor({4, channels, 48, 48}, 1);
  Tensor w = random_tensor({channels, channels, 3, 3}, 2);
  for (auto _ : state) {
    Tape tape;
    Var xv = tape.input(x);
    Var wv = tape.input(w);
    Var y = ops::conv2d(xv, wv, 1, 1);
    tape.backward(ops::sum(y));
    benchmark::DoNotOptimize(tape.grad(wv));
  }
  state.SetItemsProcessed(state.iterations() * 4 * 48 * 48 * channels * channels * 9 * 3);
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(8)->Arg(16)->Arg(32);

static void BM_ConvTranspose2d(benchmark::State& state) {
  Tensor x = random_tensor({4, 32, 12, 12}, 3);
  Tensor w = random_tensor({32, 16, 4, 4}, 4);
  for (auto _ : state) {
    Tape tape;
    Var xv = tape.input(x);
    Var wv = tape.input(w);
    Var y = ops::conv_transpose2d(xv, wv, 2, 1);
    tape.backward(ops::sum(y));
    benchmark::DoNotOptimize(tape.grad(wv));
  }
}
BENCHMARK(BM_ConvTranspose2d);

BENCHMARK_MAIN();
