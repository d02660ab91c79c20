#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptyfed/errors.hpp"
#include "ptyfed/event_log.hpp"
#include "ptyfed/slot_file.hpp"

namespace ptyfed::compute {

class UnknownFunctionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct TaskContext {
  std::string task_id;
  std::string tag;  // caller-supplied correlation id, e.g. a flow attempt id
  std::string node_id;
  std::vector<SlotEntry> slots;
  std::filesystem::path work_root;
  std::stop_token stop;

  std::size_t partitions() const noexcept { return slots.size(); }
};

using FunctionBody = std::function<nlohmann::json(const nlohmann::json& args, const TaskContext& ctx)>;

struct FunctionRecord {
  std::string function_id;
  std::string name;
  std::string code_ref;  // identifies the body; same name + code_ref => same id
  double registered_at = 0.0;
};

class FunctionRegistry {
 public:
  // Returns sha256(name NUL code_ref) in hex. Re-registering an existing id keeps the
  // first body.
  std::string register_function(const std::string& name, const std::string& code_ref, FunctionBody body);

  bool contains(const std::string& function_id) const;
  FunctionRecord record(const std::string& function_id) const;  // throws UnknownFunctionError
  FunctionBody body(const std::string& function_id) const;       // throws UnknownFunctionError
  std::vector<FunctionRecord> records() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::pair<FunctionRecord, FunctionBody>> functions_;
};

// Scheduler queue delay. Spelled "constant:<s>" or "exponential:<mean s>".
struct QueueDelayModel {
  enum class Kind { constant, exponential };
  Kind kind = Kind::constant;
  double seconds = 0.0;  // constant value or mean
  std::uint64_t seed = 0;

  static QueueDelayModel parse(const std::string& text);
  std::string to_string() const;
  double sample(std::mt19937_64& rng) const;
};

struct EndpointConfig {
  std::size_t slots_per_node = 8;
  std::size_t max_nodes = 1;
  QueueDelayModel queue_delay;
  std::filesystem::path slot_file;
  std::filesystem::path work_root;  // TaskContext::work_root
  std::filesystem::path journal;    // task/allocation JSON lines; empty disables
  std::string node_prefix = "node";

  void validate() const;
};

enum class TaskState { queued, running, done, failed };
std::string to_string(TaskState state);

struct TaskRecord {
  std::string task_id;
  std::string function_id;
  std::string tag;
  nlohmann::json args;
  std::size_t slots_required = 1;
  TaskState state = TaskState::queued;
  std::string node_id;
  std::vector<int> slots;  // slot ids held while running
  double queued_at = 0.0;
  double started = 0.0;
  double finished = 0.0;
  nlohmann::json result;
  std::string error;

  bool terminal() const noexcept { return state == TaskState::done || state == TaskState::failed; }
  nlohmann::json to_json() const;
};

enum class AllocationState { queued, active, released };
std::string to_string(AllocationState state);

struct NodeAllocation {
  std::string node_id;
  std::size_t slots = 0;
  AllocationState state = AllocationState::queued;
  double queue_delay = 0.0;
  double requested_at = 0.0;
  double activated_at = 0.0;
  double released_at = 0.0;
  // Slots demanded by unfinished tasks and slots provisioned (active + queued nodes),
  // both taken when this allocation was requested.
  std::size_t demand_at_request = 0;
  std::size_t capacity_at_request = 0;

  nlohmann::json to_json() const;
};

// Function-as-a-service endpoint over a simulated batch scheduler.
//
// Tasks wait in one FIFO queue. Whenever the slots demanded by unfinished tasks exceed
// the slots of active plus queued nodes, one more node is requested (up to max_nodes).
// After its queue delay the node's slots are appended to the slot file and
// slots_per_node workers start; each worker dequeues a task, acquires its slots on its own
// node through the slot file, runs the body and releases the slots.
class ComputeEndpoint {
 public:
  ComputeEndpoint(EndpointConfig config, std::shared_ptr<FunctionRegistry> registry);
  ~ComputeEndpoint();

  ComputeEndpoint(const ComputeEndpoint&) = delete;
  ComputeEndpoint& operator=(const ComputeEndpoint&) = delete;

  FunctionRegistry& registry() noexcept { return *registry_; }
  const EndpointConfig& config() const noexcept { return config_; }

  // Enqueues a task and returns its id immediately. A non-empty tag already seen returns
  // the task created for it, so one attempt never runs twice.
  std::string invoke(const std::string& function_id, nlohmann::json args, std::size_t slots_required = 1,
                     const std::string& tag = {});

  // Blocks until the task is terminal. Returns nothing on timeout (seconds < 0 waits forever)
  // or when stop is requested.
  std::optional<TaskRecord> wait(const std::string& task_id, double timeout_seconds = -1.0,
                                 std::stop_token stop = {}) const;

  TaskRecord task(const std::string& task_id) const;
  std::vector<TaskRecord> tasks() const;
  std::vector<NodeAllocation> allocations() const;
  std::size_t denied_allocations() const;

  // Stops workers (running bodies see their stop token), fails queued tasks, waits for
  // running ones to release their slots and removes every node from the slot file.
  void shutdown();

 private:
  void maybe_allocate_locked();
  void activate(std::size_t index, std::stop_token stop);
  void worker_loop(std::string node_id, std::stop_token stop);
  void finish_task(const std::string& task_id, TaskState state, nlohmann::json result, std::string error);
  void journal(nlohmann::json event);

  EndpointConfig config_;
  std::shared_ptr<FunctionRegistry> registry_;
  SlotFile slot_file_;
  std::unique_ptr<EventLog> journal_;

  mutable std::mutex mutex_;
  mutable std::condition_variable_any changed_;  // task finished
  std::condition_variable_any queued_;           // queue_ gained work
  std::deque<std::string> queue_;
  std::map<std::string, TaskRecord> tasks_;
  std::map<std::string, std::string> by_tag_;
  std::vector<NodeAllocation> allocations_;
  std::size_t denied_ = 0;
  std::uint64_t next_task_ = 1;
  std::mt19937_64 delay_rng_;
  bool shut_down_ = false;

  std::stop_source stop_source_;
  std::vector<std::jthread> threads_;
};

}  // namespace ptyfed::compute
