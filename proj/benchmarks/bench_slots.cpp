#include <benchmark/benchmark.h>

#include <filesystem>

#include <unistd.h>

#include "ptyfed/slot_file.hpp"

using namespace ptyfed::compute;

namespace {

void BM_SlotAcquireRelease(benchmark::State& state) {
  const auto dir = std::filesystem::temp_directory_path() / ("ptyfed-bench-" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  SlotFile slots(dir / "slots.json");
  slots.initialize();
  slots.add_node("node-1", static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(slots.try_acquire("bench", 1));
    slots.release("bench");
  }
  std::filesystem::remove_all(dir);
}
BENCHMARK(BM_SlotAcquireRelease)->Arg(8)->Arg(64)->Unit(benchmark::kMicrosecond);

}  // namespace
