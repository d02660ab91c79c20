// Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero if any fails.

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "ptyfed/checksum.hpp"
#include "ptyfed/clock.hpp"
#include "ptyfed/compute_endpoint.hpp"
#include "ptyfed/dataset_io.hpp"
#include "ptyfed/flow_definition.hpp"
#include "ptyfed/log.hpp"
#include "ptyfed/partition.hpp"
#include "ptyfed/phantoms.hpp"
#include "ptyfed/pipeline.hpp"
#include "ptyfed/ptycho.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;
using namespace ptyfed;
using namespace ptyfed::ptycho;
using nlohmann::json;
using testing_support::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double peak_relative_difference(const ComplexField2D& a, const ComplexField2D& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a.data()[i] - b.data()[i]));
    den = std::max(den, std::abs(b.data()[i]));
  }
  return den > 0.0 ? num / den : num;
}

// Convergence phantom: noiseless 64x64 star, 16x16 probe, step 8, default seed.
ScanDataset star_dataset(std::uint64_t seed = 0) {
  phantoms::PhantomSpec spec;
  spec.kind = phantoms::Kind::siemens_star;
  spec.object_shape = {64, 64};
  spec.probe_shape = {16, 16};
  spec.step = 8;
  spec.noise = NoiseModel::none;
  spec.seed = seed;
  return phantoms::make_view(spec, 1);
}

// ---------------------------------------------------------------------------------------

Outcome forward_oracle() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto probe = oracle::random_field(16, 16, rng);
    const auto patch = oracle::random_field(16, 16, rng);
    ComplexField2D exit(16, 16);
    for (std::size_t i = 0; i < exit.size(); ++i) exit.data()[i] = probe.data()[i] * patch.data()[i];
    worst = std::max(worst, oracle::relative_l2(forward(probe, patch), oracle::naive_dft(exit)));
  }

  // Parseval on every frame of generated noiseless views, against a loop-built exit wave.
  double parseval = 0.0;
  std::size_t frames = 0;
  for (auto kind : {phantoms::Kind::siemens_star, phantoms::Kind::coin, phantoms::Kind::catalyst}) {
    phantoms::PhantomSpec spec;
    spec.kind = kind;
    spec.object_shape = {64, 64};
    spec.probe_shape = {16, 16};
    spec.step = 8;
    const auto view = phantoms::make_view(spec, 1);
    const auto& probe = *view.probe;
    const auto& object = *view.truth_object;
    const double n = static_cast<double>(probe.size());
    for (std::size_t j = 0; j < view.count(); ++j) {
      const auto patch = oracle::loop_patch(object, view.positions[j].y, view.positions[j].x, 16, 16);
      double energy = 0.0;
      for (std::size_t i = 0; i < patch.size(); ++i) energy += std::norm(probe.data()[i] * patch.data()[i]);
      const auto frame = view.frame(j);
      const double sum = std::accumulate(frame.begin(), frame.end(), 0.0);
      parseval = std::max(parseval, std::abs(sum - n * energy) / (n * energy));
      ++frames;
    }
  }
  return {worst < 1e-10 && parseval < 1e-9,
          "max DFT rel err " + fmt("%.2e", worst) + " (< 1e-10), Parseval rel err " + fmt("%.2e", parseval) +
              " over " + std::to_string(frames) + " frames (< 1e-9)"};
}

Outcome gradient_check() {
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    std::mt19937_64 rng(500 + trial);
    const auto truth = oracle::random_field(8, 8, rng);
    const auto probe = oracle::random_field(4, 4, rng);
    const auto object = oracle::random_field(8, 8, rng);
    ScanPositions positions{oracle::counted_raster(8, 8, 4, 4, 2)};
    if (positions.count() != 9) return {false, "raster does not have 9 positions"};
    const auto data = simulate_diffraction(truth, probe, positions, 1.0, NoiseModel::none, 0);
    const auto g = residual_gradient(data, object, probe);
    const auto fd_o = oracle::finite_difference(
        object, [&](const ComplexField2D& o) { return oracle::naive_residual(data, o, probe); }, 1e-6);
    const auto fd_p = oracle::finite_difference(
        probe, [&](const ComplexField2D& p) { return oracle::naive_residual(data, object, p); }, 1e-6);
    worst = std::max({worst, oracle::relative_l2(g.object, fd_o), oracle::relative_l2(g.probe, fd_p)});
  }
  return {worst < 1e-5, "max rel err " + fmt("%.2e", worst) + " over 20 trials (< 1e-5)"};
}

struct ConvergenceRun {
  double initial = 0.0;
  double final = 0.0;
  double correlation = 0.0;
};

ConvergenceRun converge(std::uint64_t seed) {
  const auto data = star_dataset(seed);
  ReconConfig config;
  config.iterations = 200;
  config.step_size = 0.5;
  const auto result = reconstruct(data, default_initial_object(data.object_shape), *data.probe, config);

  // Covered region: pixels with non-zero illumination.
  const auto illum = illumination(data.positions, data.object_shape, *data.probe);
  std::unique_ptr<bool[]> covered(new bool[illum.size()]);
  for (std::size_t i = 0; i < illum.size(); ++i) covered[i] = illum[i] > 0.0;
  const double corr =
      magnitude_correlation(result.object, *data.truth_object, std::span<const bool>(covered.get(), illum.size()));
  return {result.residual_history.front(), result.final_residual, corr};
}

Outcome convergence() {
  const auto run = converge(0);
  const double ratio = run.final / run.initial;

  // Informational: the same check over other phantom seeds.
  std::size_t sweep_pass = 0;
  double sweep_min = 1.0;
  for (std::uint64_t seed = 1; seed < 12; ++seed) {
    const auto r = converge(seed);
    sweep_pass += r.final <= r.initial / 100 && r.correlation >= 0.95;
    sweep_min = std::min(sweep_min, r.correlation);
  }
  return {ratio <= 1e-2 && run.correlation >= 0.95,
          "residual " + fmt("%.4g", run.initial) + " -> " + fmt("%.4g", run.final) + " (ratio " + fmt("%.2e", ratio) +
              " <= 1e-2), magnitude correlation " + fmt("%.4f", run.correlation) +
              " (>= 0.95); phantom seeds 1..11: " + std::to_string(sweep_pass) + "/11 also pass, min correlation " +
              fmt("%.4f", sweep_min)};
}

Outcome partition_equivalence() {
  const auto data = star_dataset();
  const auto obj0 = default_initial_object(data.object_shape);
  double worst = 0.0;
  for (std::size_t it = 1; it <= 10; ++it) {
    ReconConfig config;
    config.iterations = it;
    const auto mono = reconstruct(data, obj0, *data.probe, config);
    for (std::size_t n : {1, 2, 4}) {
      config.partitions = n;
      const auto part = partitioned_reconstruct(data, obj0, *data.probe, config);
      worst = std::max(worst, peak_relative_difference(part.object, mono.object));
      const double r = std::abs(part.final_residual - mono.final_residual) / mono.final_residual;
      worst = std::max(worst, r);
    }
  }
  return {worst < 1e-6, "max rel diff vs monolithic " + fmt("%.2e", worst) + " over iterations 1..10 (< 1e-6)"};
}

// Shared between the forked workers.
struct SharedCounters {
  std::atomic<int> busy;
  std::atomic<int> peak;
  std::atomic<int> cycles;
  std::atomic<int> double_holders;
  std::atomic<int> failures;
};

Outcome slot_lock_safety() {
  TempDir tmp("ptyfed-c5");
  compute::SlotFile slots(tmp / "slots.json");
  slots.initialize();
  slots.add_node("node-1", 8);
  fs::create_directories(tmp / "held");

  void* mem = ::mmap(nullptr, sizeof(SharedCounters), PROT_READ | PROT_WRITE, MAP_SHARED | MAP_ANONYMOUS, -1, 0);
  if (mem == MAP_FAILED) return {false, "mmap failed"};
  auto* shared = new (mem) SharedCounters{};

  constexpr int kProcesses = 16;
  constexpr int kThreadsPerProcess = 4;
  constexpr int kCyclesPerTask = 16;

  std::vector<pid_t> children;
  for (int p = 0; p < kProcesses; ++p) {
    const pid_t pid = ::fork();
    if (pid < 0) return {false, "fork failed"};
    if (pid == 0) {
      {
        std::vector<std::jthread> threads;
        for (int t = 0; t < kThreadsPerProcess; ++t) {
          threads.emplace_back([&, p, t] {
            const compute::SlotFile sf(tmp / "slots.json");
            for (int c = 0; c < kCyclesPerTask; ++c) {
              const auto task = "p" + std::to_string(p) + "t" + std::to_string(t) + "c" + std::to_string(c);
              const auto got = sf.acquire(task, 1);
              if (!got || got->size() != 1) {
                ++shared->failures;
                continue;
              }
              const auto marker = tmp / "held" / std::to_string(got->front().slot_id);
              const int fd = ::open(marker.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
              if (fd < 0) {
                ++shared->double_holders;
              } else {
                ::close(fd);
              }
              const int now = ++shared->busy;
              int seen = shared->peak.load();
              while (now > seen && !shared->peak.compare_exchange_weak(seen, now)) {
              }
              std::this_thread::sleep_for(std::chrono::microseconds(500));
              --shared->busy;
              if (fd >= 0) ::unlink(marker.c_str());
              if (sf.release(task) != 1) ++shared->failures;
              ++shared->cycles;
            }
          });
        }
      }
      ::_exit(0);
    }
    children.push_back(pid);
  }

  // Sample the table from outside the workers while they run.
  std::size_t sampled_max = 0, samples = 0;
  std::atomic<bool> done{false};
  std::jthread sampler([&] {
    while (!done) {
      const auto table = slots.read();
      std::size_t busy = 0;
      std::set<std::string> holders;
      for (const auto& e : table) {
        if (e.state == compute::SlotState::busy) {
          ++busy;
          if (e.holder && !holders.insert(*e.holder).second) ++shared->double_holders;
        }
      }
      sampled_max = std::max(sampled_max, busy);
      ++samples;
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  });

  int exited_ok = 0;
  for (pid_t pid : children) {
    int status = 0;
    ::waitpid(pid, &status, 0);
    exited_ok += WIFEXITED(status) && WEXITSTATUS(status) == 0;
  }
  done = true;
  sampler.join();

  std::size_t free_after = 0;
  for (const auto& e : slots.read()) free_after += e.state == compute::SlotState::free;
  const int cycles = shared->cycles, peak = shared->peak, dbl = shared->double_holders, fail = shared->failures;
  ::munmap(mem, sizeof(SharedCounters));

  const bool ok = exited_ok == kProcesses && cycles >= 1000 && cycles == kProcesses * kThreadsPerProcess * kCyclesPerTask &&
                  peak <= 8 && sampled_max <= 8 && dbl == 0 && fail == 0 && free_after == 8;
  return {ok, std::to_string(kProcesses) + " processes x " + std::to_string(kThreadsPerProcess) + " tasks, " +
                  std::to_string(cycles) + " cycles, peak busy " + std::to_string(peak) + " (sampled " +
                  std::to_string(sampled_max) + " over " + std::to_string(samples) + " reads), double holders " +
                  std::to_string(dbl) + ", failures " + std::to_string(fail)};
}

facility::Deployment local_deployment(const TempDir& tmp, double bandwidth) {
  const json dep = {{"endpoints",
                     {{{"id", "aps-beamline"}, {"root", (tmp / "beamline").string()}, {"role", "beamline"}},
                      {{"id", "alcf-compute"}, {"root", (tmp / "compute").string()}, {"role", "compute"}}}},
                    {"links",
                     {{{"src", "aps-beamline"}, {"dst", "alcf-compute"}, {"bandwidth_bps", bandwidth}, {"latency_s", 0.0}},
                      {{"src", "alcf-compute"}, {"dst", "aps-beamline"}, {"bandwidth_bps", bandwidth}, {"latency_s", 0.0}}}},
                    {"token", "acceptance"}};
  return facility::Deployment::from_json(dep);
}

flow::FlowDefinition shipped_flow() {
  return flow::load_definition(fs::path(PTYFED_SOURCE_DIR) / "flows/ptycho_flow.json");
}

std::vector<std::vector<std::string>> read_csv(const fs::path& file) {
  std::ifstream in(file);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

Outcome end_to_end() {
  TempDir tmp("ptyfed-c6");
  phantoms::PhantomSpec spec;
  spec.kind = phantoms::Kind::siemens_star;
  spec.object_shape = {64, 64};
  spec.probe_shape = {16, 16};
  spec.step = 8;
  spec.views = 3;
  spec.seed = 6;
  phantoms::generate_experiment(spec, tmp / "data");

  pipeline::ExperimentConfig cfg;
  cfg.deployment = local_deployment(tmp, 10e6);
  cfg.flow = shipped_flow();
  cfg.dataset_dir = tmp / "data";
  cfg.interval = 0.5;
  cfg.iterations = 100;
  cfg.out_dir = tmp / "out";
  const auto result = pipeline::run_experiment(cfg);
  if (result.batches.size() != 1) return {false, "expected one batch"};
  const auto& batch = result.batches[0];

  std::size_t ok_runs = 0, verified = 0, naming_ok = 0;
  for (const auto& r : batch.runs) {
    ok_runs += r.status == flow::RunStatus::succeeded;
    const auto beam_recon = tmp / "beamline/recon" / r.scan_id;
    const auto comp_recon = tmp / "compute/recon" / r.scan_id;
    // Independent verification of the returned outputs.
    if (fs::exists(beam_recon / "object.bin") &&
        checksum::tree_sha256(beam_recon).hex == checksum::tree_sha256(comp_recon).hex) {
      ++verified;
    }
    const bool named = r.scan_name == "scan" + r.scan_id && fs::exists(tmp / "beamline/scans" / r.scan_name) &&
                       fs::exists(tmp / "compute/input" / r.scan_id / "meta.json") &&
                       fs::exists(comp_recon / "object.bin");
    naming_ok += named;
  }

  // Identity check straight from the CSV on disk.
  const auto rows = read_csv(cfg.out_dir / "breakdown.csv");
  double worst = 0.0;
  std::size_t per_run_rows = 0;
  bool header_ok = !rows.empty() && rows[0] == std::vector<std::string>{"run_id", "incoming_s", "compute_s",
                                                                      "outgoing_s", "others_s", "total_s"};
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 6) {
      header_ok = false;
      continue;
    }
    if (rows[i][0] == "batch") continue;
    ++per_run_rows;
    const double sum = std::stod(rows[i][1]) + std::stod(rows[i][2]) + std::stod(rows[i][3]) + std::stod(rows[i][4]);
    worst = std::max(worst, std::abs(sum - std::stod(rows[i][5])));
  }
  const bool ok = batch.runs.size() == 3 && ok_runs == 3 && verified == 3 && naming_ok == 3 && header_ok &&
                  per_run_rows == 3 && worst <= 0.1;
  return {ok, std::to_string(ok_runs) + "/3 runs succeeded, " + std::to_string(verified) + "/3 checksum-verified, " +
                  std::to_string(naming_ok) + "/3 correctly named, max |sum - total| " + fmt("%.2e", worst) +
                  " s (<= 0.1)"};
}

Outcome concurrency_structure() {
  TempDir tmp("ptyfed-c7");
  phantoms::PhantomSpec spec;
  spec.kind = phantoms::Kind::catalyst;
  spec.object_shape = {32, 32};
  spec.probe_shape = {16, 16};
  spec.step = 8;
  spec.views = 168;
  spec.seed = 7;
  phantoms::generate_experiment(spec, tmp / "data");

  pipeline::ExperimentConfig cfg;
  cfg.deployment = local_deployment(tmp, 1e9);
  cfg.flow = shipped_flow();
  cfg.dataset_dir = tmp / "data";
  cfg.nodes = {1, 2, 4, 8};
  cfg.slots_per_node = 8;
  cfg.slots_per_task = 1;
  cfg.max_concurrent_runs = 64;
  cfg.iterations = 5;
  cfg.device_time = 1.0;
  cfg.out_dir = tmp / "out";
  const auto result = pipeline::run_experiment(cfg);
  if (result.batches.size() != 4 || !result.scaling) return {false, "expected four batches and a scaling report"};
  bool all_ok = true;
  for (const auto& b : result.batches) all_ok = all_ok && b.ok() && b.runs.size() == 168;

  const auto& report = *result.scaling;
  bool monotone = true, bounded = true;
  std::string series;
  for (std::size_t i = 0; i < report.points.size(); ++i) {
    const auto& p = report.points[i];
    if (i > 0 && p.speedup < report.points[i - 1].speedup) monotone = false;
    if (p.speedup > static_cast<double>(p.n) * (1.0 + report.noise_band)) bounded = false;
    series += (i ? ", " : "") + std::to_string(p.n) + ":" + fmt("%.2f", p.speedup) + fmt(" (%.2f s)", p.time);
  }
  const double s8 = report.points.back().speedup;
  const bool ok = all_ok && monotone && bounded && s8 >= 3.0;
  return {ok, std::string(all_ok ? "all 4x168 runs verified" : "some runs failed") + ", speedups {" + series + "}" +
                  (monotone ? " monotone" : " NOT monotone") + (bounded ? ", <= n within 10%" : ", exceeds n") +
                  ", 8-node " + fmt("%.2f", s8) + "x (>= 3)"};
}

Outcome node_granularity() {
  TempDir tmp("ptyfed-c8");
  auto registry = std::make_shared<compute::FunctionRegistry>();
  std::mutex m;
  std::condition_variable_any cv;
  bool open = false;
  const auto fid = registry->register_function("block", "v1", [&](const json&, const compute::TaskContext& ctx) -> json {
    std::unique_lock lock(m);
    cv.wait(lock, ctx.stop, [&] { return open; });
    return nullptr;
  });
  compute::EndpointConfig cfg;
  cfg.slots_per_node = 8;
  cfg.max_nodes = 8;
  cfg.slot_file = tmp / "slots.json";
  cfg.work_root = tmp.path();
  compute::ComputeEndpoint endpoint(cfg, registry);

  std::vector<std::string> ids;
  std::size_t after_eight = 0;
  for (int i = 0; i < 9; ++i) {
    ids.push_back(endpoint.invoke(fid, json::object()));
    if (i == 7) after_eight = endpoint.allocations().size();
  }
  const auto allocs = endpoint.allocations();
  {
    std::lock_guard lock(m);
    open = true;
  }
  cv.notify_all();
  std::size_t done = 0;
  for (const auto& id : ids) {
    const auto t = endpoint.wait(id, 10.0);
    done += t && t->state == compute::TaskState::done;
  }
  const bool ok = allocs.size() == 2 && after_eight == 1 && allocs[1].demand_at_request == 9 &&
                  allocs[1].capacity_at_request == 8 && done == 9;
  return {ok, std::to_string(allocs.size()) + " allocations (1 after 8 tasks: " + std::to_string(after_eight) +
                  "), second at demand " + std::to_string(allocs.size() > 1 ? allocs[1].demand_at_request : 0) +
                  " / capacity " + std::to_string(allocs.size() > 1 ? allocs[1].capacity_at_request : 0) + ", " +
                  std::to_string(done) + "/9 tasks done"};
}

struct Criterion {
  const char* name;
  double budget_s;
  std::function<Outcome()> check;
};

}  // namespace

// Optional arguments select criteria by id prefix, e.g. `ptyfed_acceptance C5 C7`.
int main(int argc, char** argv) {
  log::set_verbosity(0);
  const std::vector<std::string> only(argv + 1, argv + argc);
  const std::vector<Criterion> criteria = {
      {"C1 forward-model oracle", 10, forward_oracle},
      {"C2 gradient correctness", 30, gradient_check},
      {"C3 convergence", 120, convergence},
      {"C4 partition equivalence", 120, partition_equivalence},
      {"C5 slot-lock safety", 60, slot_lock_safety},
      {"C6 end-to-end integrity", 180, end_to_end},
      {"C7 concurrency structure", 600, concurrency_structure},
      {"C8 node-granularity policy", 10, node_granularity},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const std::string name = c.name;
    if (!only.empty() && std::none_of(only.begin(), only.end(), [&](const std::string& id) {
          return name.rfind(id + " ", 0) == 0;
        })) {
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = elapsed < c.budget_s;
    const bool pass = outcome.pass && in_time;
    failed += !pass;
    std::printf("%s %s: %s; %.2f s (budget %.0f s)\n", pass ? "PASS" : "FAIL", c.name, outcome.detail.c_str(), elapsed,
                c.budget_s);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
