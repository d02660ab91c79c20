#include "ptyfed/compute_endpoint.hpp"

#include <cstdio>
#include <numeric>

#include "ptyfed/checksum.hpp"
#include "ptyfed/clock.hpp"
#include "ptyfed/log.hpp"

namespace ptyfed::compute {
using json = nlohmann::json;

std::string FunctionRegistry::register_function(const std::string& name, const std::string& code_ref,
                                                FunctionBody body) {
  if (name.empty()) throw ConfigError("function name must not be empty");
  if (!body) throw ConfigError("function '" + name + "' has no body");
  std::string key = name;
  key.push_back('\0');
  key += code_ref;
  auto id = checksum::sha256_hex(std::string_view(key));
  std::lock_guard lock(mutex_);
  if (!functions_.contains(id)) {
    functions_.emplace(id, std::make_pair(FunctionRecord{id, name, code_ref, wall_seconds()}, std::move(body)));
  }
  return id;
}

bool FunctionRegistry::contains(const std::string& function_id) const {
  std::lock_guard lock(mutex_);
  return functions_.contains(function_id);
}

FunctionRecord FunctionRegistry::record(const std::string& function_id) const {
  std::lock_guard lock(mutex_);
  auto it = functions_.find(function_id);
  if (it == functions_.end()) throw UnknownFunctionError("unknown function id '" + function_id + "'");
  return it->second.first;
}

FunctionBody FunctionRegistry::body(const std::string& function_id) const {
  std::lock_guard lock(mutex_);
  auto it = functions_.find(function_id);
  if (it == functions_.end()) throw UnknownFunctionError("unknown function id '" + function_id + "'");
  return it->second.second;
}

std::vector<FunctionRecord> FunctionRegistry::records() const {
  std::lock_guard lock(mutex_);
  std::vector<FunctionRecord> out;
  for (const auto& [id, entry] : functions_) out.push_back(entry.first);
  return out;
}

QueueDelayModel QueueDelayModel::parse(const std::string& text) {
  QueueDelayModel model;
  const auto colon = text.find(':');
  const auto kind = text.substr(0, colon);
  if (kind == "constant") {
    model.kind = Kind::constant;
  } else if (kind == "exponential") {
    model.kind = Kind::exponential;
  } else {
    throw ConfigError("queue delay model must be constant:<s> or exponential:<mean>, got '" + text + "'");
  }
  if (colon != std::string::npos) {
    try {
      std::size_t used = 0;
      const auto value = text.substr(colon + 1);
      model.seconds = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ConfigError("bad queue delay value in '" + text + "'");
    }
  }
  if (!(model.seconds >= 0.0)) throw ConfigError("queue delay must be >= 0");
  return model;
}

std::string QueueDelayModel::to_string() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s:%g", kind == Kind::constant ? "constant" : "exponential", seconds);
  return buf;
}

double QueueDelayModel::sample(std::mt19937_64& rng) const {
  if (kind == Kind::constant || seconds <= 0.0) return seconds;
  return std::exponential_distribution<double>(1.0 / seconds)(rng);
}

void EndpointConfig::validate() const {
  if (slots_per_node == 0) throw ConfigError("slots_per_node must be >= 1");
  if (max_nodes == 0) throw ConfigError("max_nodes must be >= 1");
  if (slot_file.empty()) throw ConfigError("endpoint needs a slot file path");
  if (node_prefix.empty()) throw ConfigError("node_prefix must not be empty");
}

std::string to_string(TaskState state) {
  switch (state) {
    case TaskState::queued: return "queued";
    case TaskState::running: return "running";
    case TaskState::done: return "done";
    case TaskState::failed: return "failed";
  }
  return "unknown";
}

std::string to_string(AllocationState state) {
  switch (state) {
    case AllocationState::queued: return "queued";
    case AllocationState::active: return "active";
    case AllocationState::released: return "released";
  }
  return "unknown";
}

json TaskRecord::to_json() const {
  return {{"type", "task"},
          {"task_id", task_id},
          {"function_id", function_id},
          {"tag", tag},
          {"slots_required", slots_required},
          {"state", to_string(state)},
          {"node_id", node_id},
          {"slots", slots},
          {"queued_at", queued_at},
          {"started", started},
          {"finished", finished},
          {"error", error}};
}

json NodeAllocation::to_json() const {
  return {{"type", "allocation"},
          {"node_id", node_id},
          {"slots", slots},
          {"state", to_string(state)},
          {"queue_delay", queue_delay},
          {"requested_at", requested_at},
          {"activated_at", activated_at},
          {"released_at", released_at},
          {"demand_at_request", demand_at_request},
          {"capacity_at_request", capacity_at_request}};
}

ComputeEndpoint::ComputeEndpoint(EndpointConfig config, std::shared_ptr<FunctionRegistry> registry)
    : config_(std::move(config)),
      registry_(std::move(registry)),
      slot_file_(config_.slot_file),
      delay_rng_(config_.queue_delay.seed) {
  config_.validate();
  if (!registry_) throw ConfigError("endpoint needs a function registry");
  slot_file_.initialize();
  if (!config_.journal.empty()) journal_ = std::make_unique<EventLog>(config_.journal);
}

ComputeEndpoint::~ComputeEndpoint() {
  try {
    shutdown();
  } catch (const std::exception& e) {
    log::error(std::string("endpoint shutdown: ") + e.what());
  }
}

void ComputeEndpoint::journal(json event) {
  if (journal_) journal_->append(std::move(event));
}

std::string ComputeEndpoint::invoke(const std::string& function_id, json args, std::size_t slots_required,
                                    const std::string& tag) {
  if (!registry_->contains(function_id)) throw UnknownFunctionError("unknown function id '" + function_id + "'");
  if (slots_required == 0) throw ConfigError("a task needs at least one slot");
  // Slots are placed on a single node, so a larger request could never run.
  if (slots_required > config_.slots_per_node) {
    throw ConfigError("task requests " + std::to_string(slots_required) + " slots but nodes have " +
                      std::to_string(config_.slots_per_node));
  }

  std::lock_guard lock(mutex_);
  if (shut_down_) throw Error("compute endpoint is shut down");
  if (!tag.empty()) {
    if (auto it = by_tag_.find(tag); it != by_tag_.end()) return it->second;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "task-%06llu", static_cast<unsigned long long>(next_task_++));
  TaskRecord record;
  record.task_id = buf;
  record.function_id = function_id;
  record.tag = tag;
  record.args = std::move(args);
  record.slots_required = slots_required;
  record.queued_at = wall_seconds();
  tasks_.emplace(record.task_id, record);
  if (!tag.empty()) by_tag_.emplace(tag, record.task_id);
  queue_.push_back(record.task_id);
  maybe_allocate_locked();
  queued_.notify_one();
  return record.task_id;
}

void ComputeEndpoint::maybe_allocate_locked() {
  if (shut_down_) return;
  std::size_t demand = 0;
  for (const auto& [id, t] : tasks_) {
    if (!t.terminal()) demand += t.slots_required;
  }
  std::size_t provisioned = 0;
  for (const auto& a : allocations_) {
    if (a.state != AllocationState::released) ++provisioned;
  }
  while (demand > provisioned * config_.slots_per_node) {
    if (provisioned >= config_.max_nodes) {
      if (denied_++ == 0) log::info("node cap reached; tasks stay queued until slots free up");
      journal({{"type", "allocation_denied"},
               {"demand", demand},
               {"capacity", provisioned * config_.slots_per_node},
               {"max_nodes", config_.max_nodes}});
      return;
    }
    NodeAllocation a;
    a.node_id = config_.node_prefix + "-" + std::to_string(allocations_.size() + 1);
    a.slots = config_.slots_per_node;
    a.queue_delay = config_.queue_delay.sample(delay_rng_);
    a.requested_at = wall_seconds();
    a.demand_at_request = demand;
    a.capacity_at_request = provisioned * config_.slots_per_node;
    log::debug("requesting " + a.node_id + " (queue delay " + std::to_string(a.queue_delay) + " s)");
    journal(a.to_json());
    allocations_.push_back(a);
    const auto index = allocations_.size() - 1;
    threads_.emplace_back([this, index, stop = stop_source_.get_token()] { activate(index, stop); });
    ++provisioned;
  }
}

void ComputeEndpoint::activate(std::size_t index, std::stop_token stop) {
  std::string node_id;
  double delay = 0.0;
  {
    std::lock_guard lock(mutex_);
    node_id = allocations_[index].node_id;
    delay = allocations_[index].queue_delay;
  }
  if (!sleep_for(delay, stop)) return;
  try {
    // A node id left behind by an earlier process is replaced, not merged.
    slot_file_.remove_node(node_id);
    slot_file_.add_node(node_id, config_.slots_per_node);
  } catch (const std::exception& e) {
    log::error("activating " + node_id + ": " + e.what());
    std::lock_guard lock(mutex_);
    allocations_[index].state = AllocationState::released;
    allocations_[index].released_at = wall_seconds();
    return;
  }
  std::lock_guard lock(mutex_);
  if (shut_down_) return;
  auto& a = allocations_[index];
  a.state = AllocationState::active;
  a.activated_at = wall_seconds();
  journal({{"type", "node_active"}, {"node_id", a.node_id}, {"activated_at", a.activated_at}});
  log::debug(node_id + " active");
  for (std::size_t w = 0; w < config_.slots_per_node; ++w) {
    threads_.emplace_back([this, node_id, stop] { worker_loop(node_id, stop); });
  }
}

void ComputeEndpoint::worker_loop(std::string node_id, std::stop_token stop) {
  for (;;) {
    TaskRecord task;
    {
      std::unique_lock lock(mutex_);
      queued_.wait(lock, stop, [&] { return !queue_.empty(); });
      if (stop.stop_requested()) return;
      task = tasks_.at(queue_.front());
      queue_.pop_front();
    }

    FunctionBody body;
    try {
      body = registry_->body(task.function_id);
    } catch (const std::exception& e) {
      finish_task(task.task_id, TaskState::failed, nullptr, e.what());
      continue;
    }

    std::optional<std::vector<SlotEntry>> slots;
    try {
      slots = slot_file_.acquire(task.task_id, task.slots_required, {node_id, stop, {}});
    } catch (const std::exception& e) {
      finish_task(task.task_id, TaskState::failed, nullptr, std::string("slot acquisition: ") + e.what());
      continue;
    }
    if (!slots) {
      finish_task(task.task_id, TaskState::failed, nullptr, "cancelled before slots were acquired");
      return;
    }

    TaskContext ctx{task.task_id, task.tag, node_id, *slots, config_.work_root, stop};
    {
      std::lock_guard lock(mutex_);
      auto& t = tasks_.at(task.task_id);
      t.state = TaskState::running;
      t.node_id = node_id;
      t.started = wall_seconds();
      for (const auto& s : *slots) t.slots.push_back(s.slot_id);
    }

    json result;
    std::string error;
    bool ok = false;
    try {
      result = body(task.args, ctx);
      ok = true;
    } catch (const std::exception& e) {
      error = e.what();
    } catch (...) {
      error = "unknown exception";
    }
    try {
      slot_file_.release(task.task_id);
    } catch (const std::exception& e) {
      log::error("releasing slots of " + task.task_id + ": " + e.what());
    }
    if (!ok) log::warn(task.task_id + " failed: " + error);
    finish_task(task.task_id, ok ? TaskState::done : TaskState::failed, std::move(result), std::move(error));
  }
}

void ComputeEndpoint::finish_task(const std::string& task_id, TaskState state, json result, std::string error) {
  std::lock_guard lock(mutex_);
  auto& t = tasks_.at(task_id);
  t.state = state;
  t.finished = wall_seconds();
  if (t.started == 0.0) t.started = t.finished;
  t.result = std::move(result);
  t.error = std::move(error);
  journal(t.to_json());
  changed_.notify_all();
}

std::optional<TaskRecord> ComputeEndpoint::wait(const std::string& task_id, double timeout_seconds,
                                                std::stop_token stop) const {
  std::unique_lock lock(mutex_);
  if (!tasks_.contains(task_id)) throw ConfigError("unknown task id '" + task_id + "'");
  auto done = [&] { return tasks_.at(task_id).terminal(); };
  if (timeout_seconds < 0.0) {
    changed_.wait(lock, stop, done);
  } else {
    changed_.wait_for(lock, stop, std::chrono::duration<double>(timeout_seconds), done);
  }
  if (!done()) return std::nullopt;
  return tasks_.at(task_id);
}

TaskRecord ComputeEndpoint::task(const std::string& task_id) const {
  std::lock_guard lock(mutex_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) throw ConfigError("unknown task id '" + task_id + "'");
  return it->second;
}

std::vector<TaskRecord> ComputeEndpoint::tasks() const {
  std::lock_guard lock(mutex_);
  std::vector<TaskRecord> out;
  for (const auto& [id, t] : tasks_) out.push_back(t);
  return out;
}

std::vector<NodeAllocation> ComputeEndpoint::allocations() const {
  std::lock_guard lock(mutex_);
  return allocations_;
}

std::size_t ComputeEndpoint::denied_allocations() const {
  std::lock_guard lock(mutex_);
  return denied_;
}

void ComputeEndpoint::shutdown() {
  {
    std::lock_guard lock(mutex_);
    if (shut_down_) return;
    shut_down_ = true;
  }
  stop_source_.request_stop();
  queued_.notify_all();
  changed_.notify_all();
  for (;;) {
    std::vector<std::jthread> threads;
    {
      std::lock_guard lock(mutex_);
      threads.swap(threads_);
    }
    if (threads.empty()) break;
    for (auto& t : threads) t.join();
  }

  std::lock_guard lock(mutex_);
  for (const auto& id : queue_) {
    auto& t = tasks_.at(id);
    t.state = TaskState::failed;
    t.finished = wall_seconds();
    t.error = "endpoint shut down before the task ran";
    journal(t.to_json());
  }
  queue_.clear();
  for (auto& a : allocations_) {
    if (a.state == AllocationState::released) continue;
    if (a.state == AllocationState::active) {
      try {
        slot_file_.remove_node(a.node_id);
      } catch (const std::exception& e) {
        log::error("removing " + a.node_id + " from slot file: " + e.what());
      }
    }
    a.state = AllocationState::released;
    a.released_at = wall_seconds();
    journal({{"type", "node_released"}, {"node_id", a.node_id}, {"released_at", a.released_at}});
  }
  changed_.notify_all();
}

}  // namespace ptyfed::compute
