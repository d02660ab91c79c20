#include "ptyfed/pipeline.hpp"

#include <fstream>
#include <map>
#include <mutex>

#include "ptyfed/checksum.hpp"
#include "ptyfed/event_log.hpp"
#include "ptyfed/log.hpp"
#include "ptyfed/providers.hpp"
#include "ptyfed/recon_function.hpp"

namespace ptyfed::pipeline {
namespace fs = std::filesystem;
using json = nlohmann::json;

bool BatchResult::ok() const { return !cancelled && !runs.empty() && failed_runs().empty(); }

std::vector<std::string> BatchResult::failed_runs() const {
  std::vector<std::string> out;
  for (const auto& r : runs) {
    if (r.status != flow::RunStatus::succeeded || !r.verified) out.push_back(r.run_id);
  }
  return out;
}

bool ExperimentResult::ok() const {
  if (batches.empty()) return false;
  for (const auto& b : batches) {
    if (!b.ok()) return false;
  }
  return true;
}

namespace {

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
}

// Flips the first byte of meta.json (or of the first regular file found).
void corrupt_tree(const fs::path& root) {
  fs::path victim = root / "meta.json";
  if (!fs::is_regular_file(victim)) {
    victim.clear();
    if (fs::is_regular_file(root)) {
      victim = root;
    } else if (fs::is_directory(root)) {
      for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) {
          victim = e.path();
          break;
        }
      }
    }
  }
  if (victim.empty()) return;
  std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
  char c = 0;
  if (!f.get(c)) return;
  f.seekp(0);
  f.put(static_cast<char>(c ^ 0x5a));
}

}  // namespace

BatchResult run_batch(const ExperimentConfig& config, std::size_t nodes, const facility::Deployment& deployment,
                      const fs::path& out_dir) {
  BatchResult result;
  result.nodes = nodes;
  result.out_dir = out_dir;
  fs::create_directories(out_dir);
  const auto journal_dir = out_dir / "journal";
  const auto tasks_journal = out_dir / "tasks.jsonl";
  const auto slot_path = out_dir / "slots.json";
  // Journals are appended to; start each batch from clean files.
  fs::remove_all(journal_dir);
  fs::remove(tasks_journal);
  fs::remove(out_dir / "events.jsonl");
  fs::remove(slot_path);

  deployment.materialize();
  const auto& beamline = deployment.endpoint(facility::EndpointRole::beamline);
  const auto& compute_ep = deployment.endpoint(facility::EndpointRole::compute);
  auto shared_deployment = std::make_shared<const facility::Deployment>(deployment);
  EventLog events(out_dir / "events.jsonl");

  auto registry = std::make_shared<compute::FunctionRegistry>();
  const auto function_id = compute::register_recon_function(*registry);

  compute::EndpointConfig ep_config;
  ep_config.slots_per_node = config.slots_per_node;
  ep_config.max_nodes = nodes;
  ep_config.queue_delay = config.queue_delay;
  ep_config.slot_file = slot_path;
  ep_config.work_root = compute_ep.root;
  ep_config.journal = tasks_journal;
  compute::ComputeEndpoint endpoint(ep_config, registry);

  flow::FlowEngine engine({config.max_concurrent_runs, journal_dir});
  auto transfers = std::make_shared<flow::TransferProvider>(shared_deployment, deployment.token(), &events);
  if (!config.corrupt_ids.empty()) {
    const auto corrupt = config.corrupt_ids;
    transfers->set_fault_hook([corrupt](const flow::InvokeContext&, const json& params, const fs::path& dst) {
      for (const auto& id : corrupt) {
        if (params.value("destination_path", std::string{}) == (fs::path("input") / id).generic_string()) {
          corrupt_tree(dst);
        }
      }
    });
  }
  engine.register_provider(flow::ActionType::transfer, transfers);
  engine.register_provider(flow::ActionType::compute, std::make_shared<flow::ComputeProvider>(endpoint));

  std::mutex runs_mutex;
  facility::ReplayOptions replay;
  replay.interval = config.interval;
  replay.views = config.views;
  replay.log = &events;
  replay.stop = config.stop;
  const auto replay_dir = replay.subdir;

  facility::replay_acquisition(config.dataset_dir, beamline, replay, [&](const facility::ReplayEvent& ev) {
    RunSummary summary;
    summary.scan_name = ev.name;
    summary.scan_id = facility::extract_scan_id(ev.name);
    const auto dirs = facility::prepare_remote_dirs(compute_ep, summary.scan_id);
    const auto input_rel = fs::relative(dirs.input_dir, compute_ep.root).generic_string();
    const auto recon_rel = fs::relative(dirs.recon_dir, compute_ep.root).generic_string();
    json input = {{"beamline_endpoint", beamline.id},
                  {"compute_endpoint", compute_ep.id},
                  {"scan_dir", (replay_dir / ev.name).generic_string()},
                  {"scan_id", summary.scan_id},
                  {"input_dir", input_rel},
                  {"recon_dir", recon_rel},
                  {"return_dir", (fs::path("recon") / summary.scan_id).generic_string()},
                  {"function_id", function_id},
                  {"slots", config.slots_per_task},
                  {"iterations", config.iterations},
                  {"solver", ptycho::to_string(config.solver)},
                  {"step_size", config.step_size},
                  {"recover_probe", config.recover_probe},
                  {"seed", config.seed},
                  {"device_time_s", config.device_time}};
    summary.run_id = engine.start_run(config.flow, std::move(input));
    log::info(ev.name + " -> " + summary.run_id);
    std::lock_guard lock(runs_mutex);
    result.runs.push_back(std::move(summary));
  });

  for (auto& r : result.runs) {
    for (;;) {
      if (auto run = engine.await_run(r.run_id, 0.1)) {
        r.status = run->status;
        r.error = run->error;
        break;
      }
      if (config.stop.stop_requested()) {
        result.cancelled = true;
        engine.cancel_all();
      }
    }
  }
  if (config.stop.stop_requested()) result.cancelled = true;
  endpoint.shutdown();
  result.allocations = endpoint.allocations();

  for (auto& r : result.runs) {
    if (r.status != flow::RunStatus::succeeded) continue;
    const auto returned = beamline.root / "recon" / r.scan_id;
    const auto original = compute_ep.root / "recon" / r.scan_id;
    try {
      r.verified = fs::exists(returned / "object.bin") &&
                   checksum::tree_sha256(returned).hex == checksum::tree_sha256(original).hex;
    } catch (const std::exception& e) {
      log::warn(r.run_id + ": verification failed: " + e.what());
    }
    if (!r.verified) {
      r.error = "recon/" + r.scan_id + " does not verify at the beamline endpoint";
      log::warn(r.run_id + ": " + r.error);
    }
  }

  std::vector<std::string> succeeded;
  for (const auto& r : result.runs) {
    if (r.status == flow::RunStatus::succeeded) succeeded.push_back(r.run_id);
  }
  const auto table = metrics::ingest_events({journal_dir, tasks_journal});
  for (const auto& id : succeeded) result.breakdown.push_back(metrics::breakdown(table, id));
  auto rows = result.breakdown;
  if (!succeeded.empty()) {
    result.batch = metrics::batch_breakdown(table, succeeded);
    rows.push_back(*result.batch);
  }
  write_text(out_dir / "breakdown.csv", metrics::breakdown_csv(rows));

  json summary = {{"nodes", nodes},
                  {"slots_per_node", config.slots_per_node},
                  {"node_allocations", result.allocations.size()},
                  {"cancelled", result.cancelled},
                  {"runs", json::array()}};
  for (const auto& r : result.runs) {
    summary["runs"].push_back({{"scan", r.scan_name},
                               {"scan_id", r.scan_id},
                               {"run_id", r.run_id},
                               {"status", flow::to_string(r.status)},
                               {"verified", r.verified},
                               {"error", r.error}});
  }
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  if (config.nodes.empty()) throw ConfigError("no node counts given");
  for (auto n : config.nodes) {
    if (n == 0) throw ConfigError("node counts must be >= 1");
  }
  if (config.slots_per_task == 0 || config.slots_per_task > config.slots_per_node) {
    throw ConfigError("slots per task must be between 1 and slots per node");
  }
  if (config.out_dir.empty()) throw ConfigError("run-experiment needs an output directory");

  ExperimentResult result;
  const bool sweep = config.nodes.size() > 1;
  for (auto n : config.nodes) {
    if (config.stop.stop_requested()) break;
    const auto tag = "n" + std::to_string(n);
    const auto deployment = sweep ? config.deployment.with_root_suffix(tag) : config.deployment;
    const auto out = sweep ? config.out_dir / tag : config.out_dir;
    log::info("batch with " + std::to_string(n) + " node(s)");
    result.batches.push_back(run_batch(config, n, deployment, out));
  }

  if (sweep && result.ok()) {
    std::vector<std::pair<std::size_t, double>> series;
    for (const auto& b : result.batches) series.emplace_back(b.nodes, b.batch->compute);
    result.scaling = metrics::scaling_report(series);
    write_text(config.out_dir / "scaling.csv", metrics::scaling_csv(*result.scaling));
    write_text(config.out_dir / "scaling.svg", metrics::scaling_svg(*result.scaling));
  }
  return result;
}

}  // namespace ptyfed::pipeline
