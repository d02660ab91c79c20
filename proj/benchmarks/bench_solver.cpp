#include <benchmark/benchmark.h>

#include "ptyfed/partition.hpp"
#include "ptyfed/phantoms.hpp"
#include "ptyfed/ptycho.hpp"

using namespace ptyfed;
using namespace ptyfed::ptycho;

namespace {

ScanDataset view(std::size_t object, std::size_t probe, std::size_t step) {
  phantoms::PhantomSpec spec;
  spec.object_shape = {object, object};
  spec.probe_shape = {probe, probe};
  spec.step = step;
  return phantoms::make_view(spec, 1);
}

void BM_Forward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto probe = phantoms::make_probe({n, n}, 1);
  const auto patch = phantoms::make_object(phantoms::Kind::coin, {n, n}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(forward(probe, patch));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Forward)->Arg(16)->Arg(32)->Arg(64)->Arg(128);

void BM_GradientStep(benchmark::State& state) {
  const auto d = view(static_cast<std::size_t>(state.range(0)), 16, 8);
  const auto object = default_initial_object(d.object_shape);
  const auto steps = normalized_steps(d, object, *d.probe, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(gradient_step(d, object, *d.probe, steps, false));
  state.counters["positions"] = static_cast<double>(d.count());
}
BENCHMARK(BM_GradientStep)->Arg(64)->Arg(128);

void BM_PartitionedReconstruct(benchmark::State& state) {
  const auto d = view(128, 32, 8);
  const auto object = default_initial_object(d.object_shape);
  ReconConfig config;
  config.iterations = 5;
  config.partitions = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(reconstruct(d, object, *d.probe, config));
}
BENCHMARK(BM_PartitionedReconstruct)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
