#include "ptyfed/flow_engine.hpp"

#include <cstdio>
#include <fstream>

#include "ptyfed/clock.hpp"
#include "ptyfed/errors.hpp"
#include "ptyfed/log.hpp"

namespace ptyfed::flow {
using json = nlohmann::json;

std::string to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::success: return "success";
    case Outcome::retryable_failure: return "retryable_failure";
    case Outcome::fatal: return "fatal";
  }
  return "unknown";
}

std::string to_string(RunStatus status) {
  switch (status) {
    case RunStatus::running: return "running";
    case RunStatus::succeeded: return "succeeded";
    case RunStatus::failed: return "failed";
  }
  return "unknown";
}

double InvokeContext::seconds_left() const {
  return std::chrono::duration<double>(deadline - std::chrono::steady_clock::now()).count();
}

json StateRecord::to_json(const std::string& run_id, const std::string& flow_id) const {
  return {{"type", "state"},
          {"run_id", run_id},
          {"flow_id", flow_id},
          {"state", state},
          {"action_type", to_string(action_type)},
          {"attempt", attempt},
          {"attempt_id", attempt_id},
          {"started", started},
          {"finished", finished},
          {"outcome", to_string(outcome)},
          {"message", message},
          {"output", output.is_null() ? json::object() : output},
          {"next", next}};
}

json FlowRun::to_json() const {
  return {{"type", "run"},   {"run_id", run_id},     {"flow_id", flow_id}, {"status", to_string(status)},
          {"input", input},  {"started", started},   {"finished", finished}, {"error", error}};
}

FlowEngine::FlowEngine(EngineConfig config) : config_(std::move(config)) {
  if (config_.max_concurrent_runs == 0) throw ConfigError("max_concurrent_runs must be >= 1");
  if (!config_.journal_dir.empty()) std::filesystem::create_directories(config_.journal_dir);
}

FlowEngine::~FlowEngine() {
  cancel_all();
  std::vector<std::jthread> executors;
  {
    std::lock_guard lock(mutex_);
    executors.swap(executors_);
  }
  for (auto& t : executors) t.request_stop();
  queued_.notify_all();
  executors.clear();  // joins
}

void FlowEngine::register_provider(ActionType type, std::shared_ptr<ActionProvider> provider) {
  if (!provider) throw ConfigError("null action provider");
  std::lock_guard lock(mutex_);
  providers_[type] = std::move(provider);
}

void FlowEngine::append_journal(const std::string& run_id, const json& record) {
  if (config_.journal_dir.empty()) return;
  std::lock_guard lock(journal_mutex_);
  std::ofstream out(config_.journal_dir / (run_id + ".jsonl"), std::ios::app);
  if (!out) {
    log::error("cannot append to journal of " + run_id);
    return;
  }
  out << record.dump() << '\n';
}

std::string FlowEngine::start_run(const FlowDefinition& definition, json input) {
  if (!input.is_object()) throw ConfigError("flow input must be a JSON object");
  auto def = std::make_shared<const FlowDefinition>(definition);

  std::string missing;
  for (const auto& key : def->referenced_inputs()) {
    if (!input.contains(key)) {
      missing = key;
      break;
    }
  }

  std::unique_lock lock(mutex_);
  char seq[16];
  std::snprintf(seq, sizeof seq, "%06llu", static_cast<unsigned long long>(++next_seq_[def->id]));
  FlowRun run;
  run.run_id = def->id + "-" + seq;
  run.flow_id = def->id;
  run.input = std::move(input);
  run.started = wall_seconds();
  const auto run_id = run.run_id;
  runs_.emplace(run_id, std::move(run));

  if (!missing.empty()) {
    lock.unlock();
    finish_run(run_id, RunStatus::failed, "input is missing key '" + missing + "'");
    return run_id;
  }
  if (cancel_.stop_requested()) {
    lock.unlock();
    finish_run(run_id, RunStatus::failed, "cancelled");
    return run_id;
  }
  pending_.push_back({run_id, std::move(def)});
  if (pending_.size() > idle_ && executors_.size() < config_.max_concurrent_runs) {
    executors_.emplace_back([this](std::stop_token stop) { executor_loop(stop); });
  }
  queued_.notify_one();
  return run_id;
}

void FlowEngine::executor_loop(std::stop_token stop) {
  for (;;) {
    Pending next;
    {
      std::unique_lock lock(mutex_);
      ++idle_;
      queued_.wait(lock, stop, [&] { return !pending_.empty(); });
      --idle_;
      if (pending_.empty()) return;  // stopped
      next = std::move(pending_.front());
      pending_.pop_front();
    }
    execute(next);
  }
}

void FlowEngine::finish_run(const std::string& run_id, RunStatus status, std::string error) {
  json record;
  {
    std::lock_guard lock(mutex_);
    auto& run = runs_.at(run_id);
    run.status = status;
    run.finished = wall_seconds();
    run.error = std::move(error);
    record = run.to_json();
    if (status == RunStatus::failed) log::warn(run_id + " failed: " + run.error);
  }
  append_journal(run_id, record);
  changed_.notify_all();
}

void FlowEngine::execute(const Pending& pending) {
  const auto& def = *pending.definition;
  const auto& run_id = pending.run_id;
  const auto stop = cancel_.get_token();
  json input;
  {
    std::lock_guard lock(mutex_);
    input = runs_.at(run_id).input;
  }
  json outputs = json::object();

  std::string current = def.start_state;
  while (current != kEnd) {
    const auto& st = def.state(current);
    std::shared_ptr<ActionProvider> provider;
    {
      std::lock_guard lock(mutex_);
      if (auto it = providers_.find(st.action_type); it != providers_.end()) provider = it->second;
    }

    bool advanced = false;
    std::string last_message;
    for (std::size_t attempt = 1; attempt <= st.retries + 1; ++attempt) {
      if (stop.stop_requested()) {
        finish_run(run_id, RunStatus::failed, "cancelled");
        return;
      }
      StateRecord rec;
      rec.state = current;
      rec.action_type = st.action_type;
      rec.attempt = attempt;
      rec.attempt_id = run_id + "/" + current + "/" + std::to_string(attempt);
      rec.started = wall_seconds();

      InvokeContext ctx;
      ctx.run_id = run_id;
      ctx.state = current;
      ctx.attempt = attempt;
      ctx.attempt_id = rec.attempt_id;
      ctx.deadline = std::chrono::steady_clock::now() +
                     std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                         std::chrono::duration<double>(st.timeout));
      ctx.stop = stop;

      ActionResult result;
      if (!provider) {
        result = {Outcome::fatal, json::object(), "no provider for action_type " + to_string(st.action_type)};
      } else {
        try {
          const auto params = render_parameters(st.parameters, input, outputs);
          try {
            result = provider->invoke(params, ctx);
          } catch (const std::exception& e) {
            result = {Outcome::retryable_failure, json::object(), e.what()};
          }
        } catch (const std::exception& e) {
          result = {Outcome::fatal, json::object(), e.what()};
        }
      }
      if (result.outcome != Outcome::fatal && std::chrono::steady_clock::now() > ctx.deadline) {
        result.outcome = Outcome::retryable_failure;
        result.message = "timed out after " + std::to_string(st.timeout) + " s" +
                         (result.message.empty() ? "" : ": " + result.message);
      }
      if (stop.stop_requested() && result.outcome != Outcome::success) result.outcome = Outcome::fatal;

      rec.finished = wall_seconds();
      rec.outcome = result.outcome;
      rec.message = result.message;
      rec.output = result.output.is_null() ? json::object() : result.output;
      if (result.outcome == Outcome::success) rec.next = st.next;
      last_message = result.message;
      {
        std::lock_guard lock(mutex_);
        runs_.at(run_id).state_log.push_back(rec);
      }
      append_journal(run_id, rec.to_json(run_id, def.id));

      if (result.outcome == Outcome::success) {
        outputs[current] = rec.output;
        current = st.next;
        advanced = true;
        break;
      }
      if (result.outcome == Outcome::fatal) {
        finish_run(run_id, RunStatus::failed, "state '" + rec.state + "' failed: " + result.message);
        return;
      }
      log::info(rec.attempt_id + " failed, retryable: " + result.message);
    }
    if (!advanced) {
      finish_run(run_id, RunStatus::failed,
                 "state '" + current + "' exhausted " + std::to_string(st.retries) + " retries: " + last_message);
      return;
    }
  }
  finish_run(run_id, RunStatus::succeeded, {});
}

FlowRun FlowEngine::run(const std::string& run_id) const {
  std::lock_guard lock(mutex_);
  auto it = runs_.find(run_id);
  if (it == runs_.end()) throw ConfigError("unknown run id '" + run_id + "'");
  return it->second;
}

std::vector<FlowRun> FlowEngine::runs() const {
  std::lock_guard lock(mutex_);
  std::vector<FlowRun> out;
  for (const auto& [id, r] : runs_) out.push_back(r);
  return out;
}

FlowRun FlowEngine::await_run(const std::string& run_id) const {
  std::unique_lock lock(mutex_);
  if (!runs_.contains(run_id)) throw ConfigError("unknown run id '" + run_id + "'");
  changed_.wait(lock, [&] { return runs_.at(run_id).terminal(); });
  return runs_.at(run_id);
}

std::optional<FlowRun> FlowEngine::await_run(const std::string& run_id, double timeout_seconds) const {
  std::unique_lock lock(mutex_);
  if (!runs_.contains(run_id)) throw ConfigError("unknown run id '" + run_id + "'");
  const bool done = changed_.wait_for(lock, std::chrono::duration<double>(std::max(timeout_seconds, 0.0)),
                                      [&] { return runs_.at(run_id).terminal(); });
  if (!done) return std::nullopt;
  return runs_.at(run_id);
}

void FlowEngine::cancel_all() {
  cancel_.request_stop();
  std::deque<Pending> dropped;
  {
    std::lock_guard lock(mutex_);
    dropped.swap(pending_);
  }
  for (const auto& p : dropped) finish_run(p.run_id, RunStatus::failed, "cancelled");
  changed_.notify_all();
}

}  // namespace ptyfed::flow
