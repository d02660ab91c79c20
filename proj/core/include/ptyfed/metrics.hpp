#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ptyfed::metrics {

struct StateEvent {
  std::string run_id;
  std::string flow_id;
  std::string state;
  std::string action_type;  // transfer | compute
  std::size_t attempt = 1;
  std::string attempt_id;
  double started = 0.0;
  double finished = 0.0;
  std::string outcome;

  bool operator==(const StateEvent&) const = default;
};

struct RunEvent {
  std::string run_id;
  std::string flow_id;
  std::string status;
  double started = 0.0;
  double finished = 0.0;

  bool operator==(const RunEvent&) const = default;
};

struct TaskEvent {
  std::string task_id;
  std::string function_id;
  std::string tag;  // attempt id of the dispatching flow state, if any
  std::string state;
  double queued_at = 0.0;
  double started = 0.0;
  double finished = 0.0;

  bool operator==(const TaskEvent&) const = default;
};

// Records from flow-run and compute-endpoint journals. Lines of other types are skipped.
struct EventTable {
  std::vector<StateEvent> states;  // in journal order
  std::vector<RunEvent> runs;
  std::vector<TaskEvent> tasks;

  std::size_t size() const noexcept { return states.size() + runs.size() + tasks.size(); }
  bool empty() const noexcept { return size() == 0; }
  std::vector<std::string> run_ids() const;  // sorted
};

// Reads JSON-lines journals; directories contribute their *.jsonl files in name order.
// Repeated identical records are kept once; a repeated key (attempt id, run id or task id)
// with different content is an error, as is any malformed line (reported with file and
// line number).
EventTable ingest_events(const std::vector<std::filesystem::path>& journals);
void ingest_stream(EventTable& table, std::istream& in, const std::string& source);

struct TimingBreakdown {
  std::string id;
  double incoming = 0.0;
  double compute = 0.0;
  double outgoing = 0.0;
  double others = 0.0;
  double total = 0.0;
};

// One sequential run: transfer attempts before the first compute state count as incoming,
// those after it as outgoing, the running intervals of the tasks dispatched by the compute
// attempts as compute, and the rest of the run's wall time as others.
TimingBreakdown breakdown(const EventTable& table, const std::string& run_id);

// Concurrent batch: compute spans the first task start to the last task end, total spans
// the first run start to the last run end, others = total - compute. Transfers overlap
// the computation and are not broken out (incoming = outgoing = 0).
TimingBreakdown batch_breakdown(const EventTable& table, const std::vector<std::string>& run_ids,
                                const std::string& id = "batch");

// Header run_id,incoming_s,compute_s,outgoing_s,others_s,total_s; values with 6 decimals.
std::string breakdown_csv(const std::vector<TimingBreakdown>& rows);

struct ScalingPoint {
  std::size_t n = 0;
  double time = 0.0;
  double speedup = 0.0;
  double efficiency = 0.0;
};

struct ScalingReport {
  std::size_t base_n = 0;
  // Measurements may exceed ideal scaling by up to this fraction.
  double noise_band = 0.10;
  std::vector<ScalingPoint> points;  // ascending n
};

// speedup_n = T_base / T_n, efficiency_n = speedup_n / (n / base). The base defaults to
// the smallest n; a base absent from the series is an error.
ScalingReport scaling_report(std::vector<std::pair<std::size_t, double>> series,
                             std::optional<std::size_t> base_n = std::nullopt);

// Header n,time_s,speedup,efficiency; values with 6 decimals.
std::string scaling_csv(const ScalingReport& report);
std::string scaling_text(const ScalingReport& report);
// Speedup against n with the ideal line, as a standalone SVG document.
std::string scaling_svg(const ScalingReport& report);

// Reads n,time_s pairs from a CSV with a header row (extra columns ignored).
std::vector<std::pair<std::size_t, double>> read_scaling_series(const std::filesystem::path& csv);

struct WeakPoint {
  double problem_size = 0.0;
  std::size_t workers = 0;
  double time = 0.0;
};

// T_base / T_scaled; requires problem size and worker count to grow by the same factor.
double weak_efficiency(const WeakPoint& base, const WeakPoint& scaled);

}  // namespace ptyfed::metrics
