// Microbenchmarks for the hot tensor kernels: conv3d forward/backward and the
// dense linear layer that dominates decoder queries.
#include <benchmark/benchmark.h>

#include "mfsr/rng.hpp"
#include "mfsr/tensor.hpp"

using namespace mfsr;
using namespace mfsr::ad;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t.data()[i] = scale * (2.0 * rng.uniform() - 1.0);
  return t;
}

void BM_Conv3dForward(benchmark::State& state) {
  Rng rng(1);
  const int c = static_cast<int>(state.range(0));
  Tensor x = random_tensor({c, 8, 8, 16}, rng);
  Tensor w = random_tensor({c, c, 3, 3, 3}, rng, 0.2);
  Tensor b = random_tensor({c}, rng, 0.1);
  for (auto _ : state) {
    Tensor y = conv3d(x, w, b);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_Conv3dForward)->Arg(8)->Arg(16);

void BM_Conv3dTrainStep(benchmark::State& state) {
  Rng rng(2);
  const int c = static_cast<int>(state.range(0));
  Tensor x = random_tensor({c, 8, 8, 16}, rng);
  Tensor w = random_tensor({c, c, 3, 3, 3}, rng, 0.2);
  Tensor b = random_tensor({c}, rng, 0.1);
  w.set_requires_grad();
  b.set_requires_grad();
  Tape tape;
  TapeScope scope(tape);
  for (auto _ : state) {
    w.zero_grad();
    b.zero_grad();
    Tensor loss = mean(unary(conv3d(x, w, b), Unary::Swish));
    tape.backward(loss);
    benchmark::DoNotOptimize(w.grad_data());
    tape.reset();
  }
}
BENCHMARK(BM_Conv3dTrainStep)->Arg(8)->Arg(16);

void BM_LinearForward(benchmark::State& state) {
  Rng rng(3);
  const int rows = static_cast<int>(state.range(0));
  Tensor x = random_tensor({rows, 64}, rng);
  Tensor w = random_tensor({64, 64}, rng, 0.2);
  Tensor b = random_tensor({64}, rng, 0.1);
  for (auto _ : state) {
    Tensor y = linear(x, w, b);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * rows);
}
BENCHMARK(BM_LinearForward)->Arg(512)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
