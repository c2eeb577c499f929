// Pipeline-level benchmarks: encoder pass, continuous queries with and
// without derivative jets, full-window training step, and the evaluation
// metrics on a desk-sized frame.
#include <benchmark/benchmark.h>

#include <array>

#include "mfsr/dataset.hpp"
#include "mfsr/decoder.hpp"
#include "mfsr/evaluate.hpp"
#include "mfsr/physics.hpp"
#include "mfsr/rng.hpp"
#include "mfsr/tensor.hpp"
#include "mfsr/train.hpp"
#include "mfsr/unet.hpp"

using namespace mfsr;

namespace {

Field4 random_field(int nt, int nz, int nx, std::uint64_t seed) {
  Field4 f = make_flow_field(nt, nz, nx, {0.25, 0.1, 0.1}, {0.0, 0.0, 0.0});
  Rng rng(seed);
  for (int i = 0; i < f.data.size(); ++i) {
    f.data.data()[i] = rng.uniform(-1.0, 1.0);
  }
  return f;
}

UNetConfig bench_unet() {
  return UNetConfig{.in_channels = 4, .n_c = 32, .depth = 2, .base_width = 16};
}

void BM_EncoderForward(benchmark::State& state) {
  Field4 window = random_field(4, 4, 8, 11);
  ContextGenerator gen(bench_unet(), 1);
  ad::NoTapeScope quiet;
  for (auto _ : state) {
    LatentContextGrid grid = gen.encode(window);
    benchmark::DoNotOptimize(grid.data.data());
  }
}
BENCHMARK(BM_EncoderForward);

void BM_QueryValues(benchmark::State& state) {
  const int pts = static_cast<int>(state.range(0));
  Field4 window = random_field(4, 4, 8, 12);
  ContextGenerator gen(bench_unet(), 1);
  ContinuousDecoder dec(MLPConfig{}, 2);
  ad::NoTapeScope quiet;
  LatentContextGrid grid = gen.encode(window);
  QueryBatch batch;
  Rng rng(3);
  for (int i = 0; i < pts; ++i) {
    batch.points.push_back({rng.uniform(0.0, 0.7), rng.uniform(0.0, 0.25),
                            rng.uniform(0.0, 0.6)});
  }
  const bool derivs = state.range(1) != 0;
  for (auto _ : state) {
    DecodedSample out = query(grid, dec, batch, derivs);
    benchmark::DoNotOptimize(out.y.data());
  }
  state.SetItemsProcessed(state.iterations() * pts);
}
BENCHMARK(BM_QueryValues)->Args({128, 0})->Args({128, 1})->Args({512, 0})->Args({512, 1});

void BM_TrainStep(benchmark::State& state) {
  Dataset ds;
  ds.hr = random_field(16, 16, 32, 21);
  ds.lr = downsample(ds.hr, 4, 4);
  ds.hr.normalized = ds.lr.normalized = true;
  ds.stats.assign(4, ChannelStats{0.0, 1.0});
  ds.d_t = ds.d_s = 4;

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.samples_per_epoch = 4;
  cfg.batch_windows = 4;
  cfg.points_per_window = 64;
  cfg.lr_window = {4, 4, 8};
  cfg.upscale = {4, 4, 4};
  cfg.unet = bench_unet();
  cfg.mlp = MLPConfig{};
  LossConfig lcfg;
  for (auto _ : state) {
    TrainedModel m = train(cfg, lcfg, ds);
    benchmark::DoNotOptimize(m.meta.history.data());
  }
  state.SetItemsProcessed(state.iterations() * cfg.samples_per_epoch *
                          cfg.points_per_window);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_FrameMetrics(benchmark::State& state) {
  Field4 f = random_field(1, 32, 128, 31);
  PhysicsParams params(1e5, 1.0);
  for (auto _ : state) {
    FrameMetrics m = frame_metrics(f, 0, params);
    benchmark::DoNotOptimize(m.e_tot);
  }
}
BENCHMARK(BM_FrameMetrics);

void BM_EnergySpectrum(benchmark::State& state) {
  Field4 f = random_field(1, 32, 128, 32);
  for (auto _ : state) {
    std::vector<double> spec = energy_spectrum(f, 0);
    benchmark::DoNotOptimize(spec.data());
  }
}
BENCHMARK(BM_EnergySpectrum);

}  // namespace
