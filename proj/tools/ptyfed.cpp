// ptyfed: command-line entry point.
//
// Exit codes: 0 success, 1 runtime or workflow failure, 2 usage or configuration error.
// Human-readable output goes to standard error; artifacts are written to files only.

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ptyfed/clock.hpp"
#include "ptyfed/dataset_io.hpp"
#include "ptyfed/errors.hpp"
#include "ptyfed/flow_definition.hpp"
#include "ptyfed/log.hpp"
#include "ptyfed/metrics.hpp"
#include "ptyfed/phantoms.hpp"
#include "ptyfed/pipeline.hpp"
#include "ptyfed/recon_function.hpp"
#include "ptyfed/slot_file.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ptyfed;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

// Thrown for bad arguments discovered after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

volatile std::sig_atomic_t g_interrupted = 0;

extern "C" void on_sigint(int) { g_interrupted = 1; }

// Turns SIGINT into a stop request for the lifetime of the object.
class InterruptGuard {
 public:
  InterruptGuard() {
    std::signal(SIGINT, on_sigint);
    watcher_ = std::jthread([this](std::stop_token stop) {
      while (!stop.stop_requested()) {
        if (g_interrupted) {
          std::fprintf(stderr, "interrupted; cancelling outstanding work\n");
          source_.request_stop();
          return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
      }
    });
  }
  ~InterruptGuard() { std::signal(SIGINT, SIG_DFL); }

  std::stop_token token() const { return source_.get_token(); }

 private:
  std::stop_source source_;
  std::jthread watcher_;
};

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw UsageError(what + " " + p.string() + " does not exist");
}

void write_file(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
}

// "64" or "64x48" (height x width).
Shape parse_shape(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) {
      const auto n = std::stoul(text);
      return {n, n};
    }
    return {std::stoul(text.substr(0, x)), std::stoul(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw UsageError("bad shape '" + text + "', expected N or HxW");
  }
}

// ---------------------------------------------------------------------------------------

struct GenerateArgs {
  fs::path spec_file;
  std::string kind = "siemens-star";
  std::size_t views = 1;
  std::string object_size = "64";
  std::string probe_size = "16";
  std::size_t step = 8;
  double photon_scale = 1.0;
  std::string noise = "none";
  std::uint64_t seed = 0;
  fs::path out;
};

int cmd_generate(const GenerateArgs& a, const CLI::App& cmd) {
  phantoms::PhantomSpec spec;
  if (!a.spec_file.empty()) {
    require_exists(a.spec_file, "phantom spec");
    std::ifstream in(a.spec_file);
    try {
      spec = phantoms::PhantomSpec::from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw UsageError(a.spec_file.string() + ": " + e.what());
    }
  }
  // Flags given on the command line override the spec file.
  const bool from_file = !a.spec_file.empty();
  auto given = [&](const char* name) { return !from_file || cmd.count(name) > 0; };
  if (given("--kind")) spec.kind = phantoms::kind_from_string(a.kind);
  if (given("--views")) spec.views = a.views;
  if (given("--object-size")) spec.object_shape = parse_shape(a.object_size);
  if (given("--probe-size")) spec.probe_shape = parse_shape(a.probe_size);
  if (given("--step")) spec.step = a.step;
  if (given("--photon-scale")) spec.photon_scale = a.photon_scale;
  if (given("--noise")) spec.noise = ptycho::noise_from_string(a.noise);
  if (given("--seed")) spec.seed = a.seed;
  spec.validate();

  const auto dirs = phantoms::generate_experiment(spec, a.out);
  write_file(a.out / "phantom_spec.json", spec.to_json().dump(2) + "\n");
  for (const auto& d : dirs) {
    const auto ds = io::read_dataset(d);
    std::fprintf(stderr, "%s: %s, object %zux%zu, probe %zux%zu, %zu positions\n", d.filename().c_str(),
                 ds.kind.c_str(), ds.object_shape.height, ds.object_shape.width, ds.probe_shape.height,
                 ds.probe_shape.width, ds.positions.count());
  }
  std::fprintf(stderr, "wrote %zu view(s) to %s\n", dirs.size(), a.out.c_str());
  return kOk;
}

// ---------------------------------------------------------------------------------------

struct ReconstructArgs {
  fs::path dataset;
  std::size_t iterations = 100;
  std::size_t partitions = 1;
  std::string solver = "gradient-descent";
  double step_size = 0.5;
  bool recover_probe = false;
  std::uint64_t seed = 0;
  fs::path out;
};

int cmd_reconstruct(const ReconstructArgs& a, std::stop_token stop) {
  require_exists(a.dataset / "meta.json", "dataset");
  compute::ReconJobOptions options;
  options.iterations = a.iterations;
  options.partitions = a.partitions;
  options.solver = ptycho::solver_from_string(a.solver);
  options.step_size = a.step_size;
  options.recover_probe = a.recover_probe;
  options.seed = a.seed;
  options.stop = stop;
  const auto result = compute::run_reconstruction_job(a.dataset, a.out, options);
  const double first = result.residual_history.empty() ? result.final_residual : result.residual_history.front();
  std::fprintf(stderr, "%zu iteration(s), residual %.6g -> %.6g, written to %s\n", result.iterations_run, first,
               result.final_residual, a.out.c_str());
  return kOk;
}

// ---------------------------------------------------------------------------------------

struct ExperimentArgs {
  fs::path deployment;
  fs::path flow;
  fs::path dataset;
  double interval = 0.0;
  std::size_t views = 0;
  std::vector<std::size_t> nodes{1};
  std::size_t slots_per_node = 8;
  std::size_t partitions = 1;
  std::size_t iterations = 100;
  std::string solver = "gradient-descent";
  double step_size = 0.5;
  bool recover_probe = false;
  std::uint64_t seed = 0;
  std::string queue_delay = "constant:0";
  double device_time = 0.0;
  std::size_t max_concurrent_runs = 64;
  std::vector<std::string> corrupt;
  fs::path out;
};

int cmd_run_experiment(const ExperimentArgs& a, std::stop_token stop) {
  require_exists(a.deployment, "deployment config");
  require_exists(a.flow, "flow definition");
  require_exists(a.dataset, "dataset directory");

  pipeline::ExperimentConfig config;
  config.deployment = facility::Deployment::load(a.deployment);
  config.flow = flow::load_definition(a.flow);
  config.dataset_dir = a.dataset;
  config.interval = a.interval;
  config.views = a.views;
  config.nodes = a.nodes;
  config.slots_per_node = a.slots_per_node;
  config.slots_per_task = a.partitions;
  config.queue_delay = compute::QueueDelayModel::parse(a.queue_delay);
  config.queue_delay.seed = a.seed;
  config.max_concurrent_runs = a.max_concurrent_runs;
  config.iterations = a.iterations;
  config.solver = ptycho::solver_from_string(a.solver);
  config.step_size = a.step_size;
  config.recover_probe = a.recover_probe;
  config.seed = a.seed;
  config.device_time = a.device_time;
  config.corrupt_ids.insert(a.corrupt.begin(), a.corrupt.end());
  config.out_dir = a.out;
  config.stop = stop;

  const auto result = pipeline::run_experiment(config);
  for (const auto& b : result.batches) {
    std::size_t good = 0;
    for (const auto& r : b.runs) good += r.status == flow::RunStatus::succeeded && r.verified;
    std::fprintf(stderr, "nodes=%zu: %zu/%zu runs succeeded and verified, %zu node allocation(s)", b.nodes, good,
                 b.runs.size(), b.allocations.size());
    if (b.batch) std::fprintf(stderr, ", compute span %.3f s, total %.3f s", b.batch->compute, b.batch->total);
    std::fprintf(stderr, "\n");
    for (const auto& r : b.runs) {
      if (r.status != flow::RunStatus::succeeded || !r.verified) {
        std::fprintf(stderr, "  FAILED %s (%s): %s\n", r.run_id.c_str(), r.scan_name.c_str(), r.error.c_str());
      }
    }
  }
  if (result.scaling) std::fputs(metrics::scaling_text(*result.scaling).c_str(), stderr);
  if (stop.stop_requested()) return kFailure;
  return result.ok() ? kOk : kFailure;
}

// ---------------------------------------------------------------------------------------

struct ReportArgs {
  std::vector<fs::path> journals;
  fs::path scaling;
  std::size_t base = 0;
  bool batch = false;
  fs::path out;
};

int cmd_report(const ReportArgs& a) {
  if (a.journals.empty() && a.scaling.empty()) throw UsageError("nothing to report: give --journal or --scaling");
  for (const auto& j : a.journals) require_exists(j, "journal");
  if (!a.scaling.empty()) require_exists(a.scaling, "scaling series");

  if (!a.journals.empty()) {
    const auto table = metrics::ingest_events(a.journals);
    if (table.empty()) throw UsageError("the given journals hold no events");
    std::vector<metrics::TimingBreakdown> rows;
    std::vector<std::string> complete;
    for (const auto& id : table.run_ids()) {
      const auto run = std::find_if(table.runs.begin(), table.runs.end(),
                                    [&](const metrics::RunEvent& r) { return r.run_id == id; });
      if (run != table.runs.end() && run->status == "failed") {
        std::fprintf(stderr, "skipping failed run %s\n", id.c_str());
        continue;
      }
      rows.push_back(metrics::breakdown(table, id));
      complete.push_back(id);
    }
    if (a.batch && !complete.empty()) rows.push_back(metrics::batch_breakdown(table, complete));
    std::fprintf(stderr, "%-24s %10s %10s %10s %10s %10s\n", "run_id", "incoming", "compute", "outgoing", "others",
                 "total");
    for (const auto& r : rows) {
      std::fprintf(stderr, "%-24s %10.3f %10.3f %10.3f %10.3f %10.3f\n", r.id.c_str(), r.incoming, r.compute,
                   r.outgoing, r.others, r.total);
    }
    if (!a.out.empty()) write_file(a.out / "breakdown.csv", metrics::breakdown_csv(rows));
  }

  if (!a.scaling.empty()) {
    const auto series = metrics::read_scaling_series(a.scaling);
    if (series.empty()) throw UsageError(a.scaling.string() + " holds no measurements");
    const auto report =
        metrics::scaling_report(series, a.base > 0 ? std::optional<std::size_t>(a.base) : std::nullopt);
    std::fputs(metrics::scaling_text(report).c_str(), stderr);
    if (!a.out.empty()) {
      write_file(a.out / "scaling.csv", metrics::scaling_csv(report));
      write_file(a.out / "scaling.svg", metrics::scaling_svg(report));
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------------------

struct SlotsArgs {
  fs::path file;
  std::string node;
  std::size_t count = 1;
  std::string task;
  std::string holder;
  long wait_ms = 0;
};

void print_slots(const compute::SlotFile& slots) {
  std::size_t busy = 0;
  const auto table = slots.read();
  for (const auto& e : table) {
    busy += e.state == compute::SlotState::busy;
    std::fprintf(stderr, "%4d  %-12s %-5s %s\n", e.slot_id, e.node_id.c_str(), compute::to_string(e.state).c_str(),
                 e.holder.value_or("-").c_str());
  }
  std::fprintf(stderr, "%zu slot(s), %zu busy\n", table.size(), busy);
}

int cmd_slots(const std::string& action, const SlotsArgs& a, std::stop_token stop) {
  compute::SlotFile slots(a.file);
  if (action == "init") {
    slots.initialize();
    if (!a.node.empty()) slots.add_node(a.node, a.count);
    print_slots(slots);
    return kOk;
  }
  require_exists(a.file, "slot file");
  if (action == "status") {
    print_slots(slots);
  } else if (action == "acquire") {
    if (a.task.empty()) throw UsageError("acquire needs --task");
    compute::AcquireOptions options{a.node, stop, std::chrono::milliseconds(a.wait_ms)};
    auto got = a.wait_ms > 0 ? slots.acquire(a.task, a.count, options) : slots.try_acquire(a.task, a.count, a.node);
    if (!got) {
      std::fprintf(stderr, "no node has %zu free slot(s)\n", a.count);
      return kFailure;
    }
    for (const auto& e : *got) std::fprintf(stderr, "acquired slot %d on %s\n", e.slot_id, e.node_id.c_str());
  } else if (action == "release") {
    if (a.task.empty()) throw UsageError("release needs --task");
    std::fprintf(stderr, "released %zu slot(s)\n", slots.release(a.task));
  } else if (action == "repair") {
    const auto n = slots.repair(a.holder.empty() ? std::nullopt : std::optional<std::string>(a.holder));
    std::fprintf(stderr, "freed %zu stale slot(s)\n", n);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ptychographic reconstruction over a simulated edge-to-HPC federation"};
  app.require_subcommand(1);
  int verbosity = 0;
  app.add_flag("-v,--verbose", verbosity, "More diagnostics on stderr (repeatable)");

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Generate phantom views as scan<k> directories");
  generate->add_option("--spec", gen.spec_file, "Phantom spec JSON; flags override its fields");
  generate->add_option("--kind", gen.kind, "siemens-star | coin | flat | catalyst")->capture_default_str();
  generate->add_option("--views", gen.views, "Number of views")->capture_default_str();
  generate->add_option("--object-size", gen.object_size, "N or HxW")->capture_default_str();
  generate->add_option("--probe-size", gen.probe_size, "N or HxW")->capture_default_str();
  generate->add_option("--step", gen.step, "Raster step in pixels")->capture_default_str();
  generate->add_option("--photon-scale", gen.photon_scale, "Intensity scale before noise")->capture_default_str();
  generate->add_option("--noise", gen.noise, "none | poisson")->capture_default_str();
  generate->add_option("--seed", gen.seed)->capture_default_str();
  generate->add_option("--out", gen.out, "Output directory")->required();

  ReconstructArgs rec;
  auto* reconstruct = app.add_subcommand("reconstruct", "Reconstruct one dataset without the federation");
  reconstruct->add_option("--dataset", rec.dataset, "Dataset directory")->required();
  reconstruct->add_option("--iterations", rec.iterations)->capture_default_str();
  reconstruct->add_option("--partitions", rec.partitions, "Object grid cells solved concurrently")
      ->capture_default_str();
  reconstruct->add_option("--solver", rec.solver, "gradient-descent | epie")->capture_default_str();
  reconstruct->add_option("--step-size", rec.step_size, "Relative step length")->capture_default_str();
  reconstruct->add_flag("--recover-probe", rec.recover_probe, "Refine the probe jointly");
  reconstruct->add_option("--seed", rec.seed)->capture_default_str();
  reconstruct->add_option("--out", rec.out, "Output directory")->required();

  ExperimentArgs exp;
  auto* experiment = app.add_subcommand("run-experiment", "Replay scans through the flow and report timings");
  experiment->add_option("--deployment", exp.deployment, "Deployment config JSON")->required();
  experiment->add_option("--flow", exp.flow, "Flow definition JSON")->required();
  experiment->add_option("--dataset", exp.dataset, "Directory of scan<k> views")->required();
  experiment->add_option("--interval", exp.interval, "Seconds between replayed scans")->capture_default_str();
  experiment->add_option("--views", exp.views, "Replay only the first N views (0 = all)")->capture_default_str();
  experiment->add_option("--nodes", exp.nodes, "Node cap; a list (1,2,4,8) runs one batch per value")
      ->delimiter(',')
      ->capture_default_str();
  experiment->add_option("--slots-per-node", exp.slots_per_node)->capture_default_str();
  experiment->add_option("--partitions", exp.partitions, "Slots (and solver partitions) per reconstruction")
      ->capture_default_str();
  experiment->add_option("--iterations", exp.iterations)->capture_default_str();
  experiment->add_option("--solver", exp.solver)->capture_default_str();
  experiment->add_option("--step-size", exp.step_size)->capture_default_str();
  experiment->add_flag("--recover-probe", exp.recover_probe);
  experiment->add_option("--seed", exp.seed)->capture_default_str();
  experiment->add_option("--queue-delay", exp.queue_delay, "constant:<s> | exponential:<mean s>")
      ->capture_default_str();
  experiment->add_option("--device-time", exp.device_time, "Minimum seconds a reconstruction holds its slots")
      ->capture_default_str();
  experiment->add_option("--max-concurrent-runs", exp.max_concurrent_runs)->capture_default_str();
  experiment->add_option("--inject-corruption", exp.corrupt, "Scan ids whose incoming transfer is corrupted")
      ->delimiter(',');
  experiment->add_option("--out", exp.out, "Output directory")->required();

  ReportArgs rep;
  auto* report = app.add_subcommand("report", "Breakdown and scaling tables from journals");
  report->add_option("--journal", rep.journals, "Journal file or directory (repeatable)");
  report->add_option("--scaling", rep.scaling, "CSV of n,time_s measurements");
  report->add_option("--base", rep.base, "Base worker count for speedups (default: smallest)");
  report->add_flag("--batch", rep.batch, "Add a batch row spanning all runs");
  report->add_option("--out", rep.out, "Directory for CSV/SVG output");

  SlotsArgs sl;
  auto* slots = app.add_subcommand("slots", "Inspect or edit a slot file");
  slots->require_subcommand(1);
  std::string slot_action;
  for (const char* name : {"init", "status", "acquire", "release", "repair"}) {
    auto* sub = slots->add_subcommand(name);
    sub->add_option("--file", sl.file, "Slot file path")->required();
    if (std::string(name) == "init") {
      sub->add_option("--node", sl.node, "Add a node with --count slots");
      sub->add_option("--count", sl.count)->capture_default_str();
    } else if (std::string(name) == "acquire") {
      sub->add_option("--task", sl.task)->required();
      sub->add_option("--count", sl.count)->capture_default_str();
      sub->add_option("--node", sl.node);
      sub->add_option("--wait-ms", sl.wait_ms, "Retry with backoff up to this long")->capture_default_str();
    } else if (std::string(name) == "release") {
      sub->add_option("--task", sl.task)->required();
    } else if (std::string(name) == "repair") {
      sub->add_option("--holder", sl.holder, "Only free slots held by this task");
    }
    sub->callback([&slot_action, name] { slot_action = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  log::set_verbosity(verbosity);

  try {
    InterruptGuard guard;
    if (*generate) return cmd_generate(gen, *generate);
    if (*reconstruct) return cmd_reconstruct(rec, guard.token());
    if (*experiment) return cmd_run_experiment(exp, guard.token());
    if (*report) return cmd_report(rep);
    if (*slots) return cmd_slots(slot_action, sl, guard.token());
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const BoundsError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kUsage;
}
