#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptyfed/flow_definition.hpp"

namespace ptyfed::flow {

enum class Outcome { success, retryable_failure, fatal };
std::string to_string(Outcome outcome);

struct ActionResult {
  Outcome outcome = Outcome::success;
  nlohmann::json output = nlohmann::json::object();
  std::string message;
};

struct InvokeContext {
  std::string run_id;
  std::string state;
  std::size_t attempt = 1;  // 1-based
  std::string attempt_id;   // unique per dispatch: <run_id>/<state>/<attempt>
  std::chrono::steady_clock::time_point deadline;
  std::stop_token stop;     // set when the run is cancelled

  double seconds_left() const;
};

// A provider must be safe to invoke concurrently from different runs.
class ActionProvider {
 public:
  virtual ~ActionProvider() = default;
  virtual ActionResult invoke(const nlohmann::json& parameters, const InvokeContext& ctx) = 0;
};

enum class RunStatus { running, succeeded, failed };
std::string to_string(RunStatus status);

struct StateRecord {
  std::string state;
  ActionType action_type = ActionType::transfer;
  std::size_t attempt = 1;
  std::string attempt_id;
  double started = 0.0;   // epoch seconds
  double finished = 0.0;  // epoch seconds
  Outcome outcome = Outcome::success;
  std::string message;
  nlohmann::json output;
  std::string next;  // set on success

  nlohmann::json to_json(const std::string& run_id, const std::string& flow_id) const;
};

struct FlowRun {
  std::string run_id;
  std::string flow_id;
  nlohmann::json input;
  RunStatus status = RunStatus::running;
  std::vector<StateRecord> state_log;
  double started = 0.0;
  double finished = 0.0;
  std::string error;

  bool terminal() const noexcept { return status != RunStatus::running; }
  nlohmann::json to_json() const;  // the run's closing journal record
};

struct EngineConfig {
  std::size_t max_concurrent_runs = 64;
  // One <run_id>.jsonl journal per run; empty disables journaling.
  std::filesystem::path journal_dir;
};

// Executes flow runs on up to max_concurrent_runs threads; states within a run are
// sequential. Runs beyond the limit wait in FIFO order.
class FlowEngine {
 public:
  explicit FlowEngine(EngineConfig config = {});
  ~FlowEngine();

  FlowEngine(const FlowEngine&) = delete;
  FlowEngine& operator=(const FlowEngine&) = delete;

  void register_provider(ActionType type, std::shared_ptr<ActionProvider> provider);

  // Returns the new run id at once. An input lacking a referenced key yields a run that
  // is already failed.
  std::string start_run(const FlowDefinition& definition, nlohmann::json input);

  FlowRun run(const std::string& run_id) const;  // snapshot
  std::vector<FlowRun> runs() const;

  // Blocks until the run is terminal.
  FlowRun await_run(const std::string& run_id) const;
  // Gives up after timeout_seconds.
  std::optional<FlowRun> await_run(const std::string& run_id, double timeout_seconds) const;

  // Cancels every unfinished run; pending ones fail at once, running ones at their next
  // cancellation point.
  void cancel_all();

 private:
  struct Pending {
    std::string run_id;
    std::shared_ptr<const FlowDefinition> definition;
  };

  void executor_loop(std::stop_token stop);
  void execute(const Pending& pending);
  void append_journal(const std::string& run_id, const nlohmann::json& record);
  void finish_run(const std::string& run_id, RunStatus status, std::string error);

  EngineConfig config_;
  std::map<ActionType, std::shared_ptr<ActionProvider>> providers_;

  mutable std::mutex mutex_;
  mutable std::condition_variable_any changed_;  // run finished
  std::condition_variable_any queued_;           // pending_ gained work
  std::map<std::string, FlowRun> runs_;
  std::deque<Pending> pending_;
  std::map<std::string, std::uint64_t> next_seq_;
  std::size_t idle_ = 0;
  std::mutex journal_mutex_;

  std::stop_source cancel_;
  std::vector<std::jthread> executors_;
};

}  // namespace ptyfed::flow
