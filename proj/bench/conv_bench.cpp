#include <benchmark/benchmark.h>

#include <omp.h>

#include "moments/conv.hpp"
#include "moments/harness.hpp"
#include "moments/propagation.hpp"

using namespace moments;

namespace {

struct Fixture {
  BatchedField input;
  ConvParams params;

  Fixture(int M, int n, int C) : input(FieldShape{M, n, 2, C}) {
    Engine eng(1);
    fill_normal(eng, input.values());
    params = he_init_conv(3, 2, C, C, eng);
  }
};

void set_counters(benchmark::State& state, const Fixture& f) {
  const double flops = 2.0 * static_cast<double>(f.input.rows()) * f.params.receptive_size() * f.params.out_channels;
  state.counters["GFLOP/s"] =
      benchmark::Counter(flops * static_cast<double>(state.iterations()) / 1e9, benchmark::Counter::kIsRate);
}

void BM_ConvReference(benchmark::State& state) {
  const Fixture f(static_cast<int>(state.range(0)), 8, static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(conv_periodic_reference(f.input, f.params));
  set_counters(state, f);
}

void BM_ConvParallel(benchmark::State& state) {
  const Fixture f(static_cast<int>(state.range(0)), 8, static_cast<int>(state.range(1)));
  omp_set_num_threads(static_cast<int>(state.range(2)));
  for (auto _ : state) benchmark::DoNotOptimize(conv_periodic(f.input, f.params));
  omp_set_num_threads(1);
  set_counters(state, f);
}

void BM_ConvReceptiveField(benchmark::State& state) {
  const Fixture f(static_cast<int>(state.range(0)), 8, static_cast<int>(state.range(1)));
  for (auto _ : state) {
    const RFMatrix rf = receptive_field(f.input, 3);
    benchmark::DoNotOptimize(conv_via_receptive_field(rf, f.params));
  }
  set_counters(state, f);
}

void BM_Realization(benchmark::State& state) {
  ExperimentConfig c;
  c.arch.family = static_cast<Family>(state.range(0));
  c.arch.depth = 16;
  c.realizations = 1;
  const BatchedField data = experiment_input(c, 0);
  int r = 0;
  for (auto _ : state) benchmark::DoNotOptimize(run_realization(c, data, r++));
}

void BM_Experiment(benchmark::State& state) {
  ExperimentConfig c;
  c.arch.family = Family::Vanilla;
  c.arch.depth = 8;
  c.realizations = 8;
  c.threads = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(run_experiment(c));
}

}  // namespace

BENCHMARK(BM_ConvReference)->Args({32, 64})->Args({8, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvParallel)
    ->Args({32, 64, 1})
    ->Args({32, 64, 4})
    ->Args({8, 16, 1})
    ->UseRealTime()
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvReceptiveField)->Args({32, 64})->Args({8, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Realization)
    ->Arg(static_cast<int>(Family::Vanilla))
    ->Arg(static_cast<int>(Family::BNFeedforward))
    ->Arg(static_cast<int>(Family::BNResnet))
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Experiment)->Arg(1)->Arg(4)->UseRealTime()->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
