#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <stop_token>
#include <string>
#include <vector>

#include "ptyfed/compute_endpoint.hpp"
#include "ptyfed/facility.hpp"
#include "ptyfed/flow_engine.hpp"
#include "ptyfed/metrics.hpp"
#include "ptyfed/ptycho.hpp"

namespace ptyfed::pipeline {

struct ExperimentConfig {
  facility::Deployment deployment;
  flow::FlowDefinition flow;
  std::filesystem::path dataset_dir;  // holds scan<k> views
  double interval = 0.0;              // seconds between replayed scans
  std::size_t views = 0;              // 0 = every view found
  std::vector<std::size_t> nodes{1};  // one batch per entry
  std::size_t slots_per_node = 8;
  std::size_t slots_per_task = 1;     // partitions of each reconstruction
  compute::QueueDelayModel queue_delay;
  std::size_t max_concurrent_runs = 64;

  std::size_t iterations = 100;
  ptycho::Solver solver = ptycho::Solver::gradient_descent;
  double step_size = 0.5;
  bool recover_probe = false;
  std::uint64_t seed = 0;
  double device_time = 0.0;  // minimum seconds each reconstruction holds its slots

  std::filesystem::path out_dir;
  // Scan ids whose incoming transfer gets corrupted after the copy (fault injection).
  std::set<std::string> corrupt_ids;
  std::stop_token stop;
};

struct RunSummary {
  std::string scan_name;  // scan<k>
  std::string scan_id;    // k
  std::string run_id;
  flow::RunStatus status = flow::RunStatus::running;
  std::string error;
  bool verified = false;  // recon/<k> at the beamline matches the compute copy
};

struct BatchResult {
  std::size_t nodes = 0;
  std::filesystem::path out_dir;
  std::vector<RunSummary> runs;
  std::vector<metrics::TimingBreakdown> breakdown;  // one row per succeeded run
  std::optional<metrics::TimingBreakdown> batch;
  std::vector<compute::NodeAllocation> allocations;
  bool cancelled = false;

  bool ok() const;
  std::vector<std::string> failed_runs() const;  // failed or unverified
};

struct ExperimentResult {
  std::vector<BatchResult> batches;
  std::optional<metrics::ScalingReport> scaling;  // when more than one node count ran

  bool ok() const;
};

// Output layout per batch (out_dir itself for a single node count, out_dir/n<k> otherwise):
//   journal/<run_id>.jsonl   flow-run journals
//   tasks.jsonl              compute-endpoint task and allocation records
//   events.jsonl             replay and transfer events
//   slots.json               slot file
//   breakdown.csv            one row per succeeded run plus a "batch" row
//   summary.json             run statuses and verification results
// With several node counts, scaling.csv and scaling.svg compare the batch compute spans.
ExperimentResult run_experiment(const ExperimentConfig& config);

BatchResult run_batch(const ExperimentConfig& config, std::size_t nodes, const facility::Deployment& deployment,
                      const std::filesystem::path& out_dir);

}  // namespace ptyfed::pipeline
