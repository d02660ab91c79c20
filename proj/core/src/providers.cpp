#include "ptyfed/providers.hpp"

namespace ptyfed::flow {
using json = nlohmann::json;

TransferProvider::TransferProvider(std::shared_ptr<const facility::Deployment> deployment, std::string token,
                                   EventLog* log)
    : deployment_(std::move(deployment)), token_(std::move(token)), log_(log) {
  if (!deployment_) throw ConfigError("transfer provider needs a deployment");
}

ActionResult TransferProvider::invoke(const json& parameters, const InvokeContext& ctx) {
  try {
    deployment_->authorize(token_);
  } catch (const facility::AuthError& e) {
    return {Outcome::fatal, json::object(), e.what()};
  }

  std::string src_id, src_path, dst_id, dst_path;
  try {
    src_id = parameters.at("source_endpoint").get<std::string>();
    src_path = parameters.at("source_path").get<std::string>();
    dst_id = parameters.at("destination_endpoint").get<std::string>();
    dst_path = parameters.at("destination_path").get<std::string>();
  } catch (const json::exception& e) {
    return {Outcome::fatal, json::object(), std::string("bad transfer parameters: ") + e.what()};
  }

  const facility::Endpoint* src = nullptr;
  const facility::Endpoint* dst = nullptr;
  try {
    src = &deployment_->endpoint(src_id);
    dst = &deployment_->endpoint(dst_id);
  } catch (const std::exception& e) {
    return {Outcome::fatal, json::object(), e.what()};
  }

  facility::TransferOptions options;
  options.log = log_;
  options.stop = ctx.stop;
  if (hook_) {
    options.after_copy = [this, &ctx, &parameters](const std::filesystem::path& p) { hook_(ctx, parameters, p); };
  }
  const auto task = facility::transfer(*src, src_path, *dst, dst_path, deployment_->link(src_id, dst_id), options);

  json output = {{"bytes", task.bytes},
                 {"files", task.files},
                 {"checksum", task.dst_checksum},
                 {"algorithm", task.algorithm},
                 {"duration", task.duration()},
                 {"destination_path", dst_path}};
  if (task.state == facility::TransferState::succeeded) return {Outcome::success, output, {}};
  return {Outcome::retryable_failure, output, task.error};
}

ActionResult ComputeProvider::invoke(const json& parameters, const InvokeContext& ctx) {
  std::string function_id;
  json args;
  std::size_t slots = 1;
  try {
    function_id = parameters.at("function_id").get<std::string>();
    args = parameters.value("args", json::object());
    slots = parameters.value("slots", std::size_t{1});
  } catch (const json::exception& e) {
    return {Outcome::fatal, json::object(), std::string("bad compute parameters: ") + e.what()};
  }

  std::string task_id;
  try {
    task_id = endpoint_.invoke(function_id, args, slots, ctx.attempt_id);
  } catch (const ConfigError& e) {
    return {Outcome::fatal, json::object(), e.what()};
  }

  const auto record = endpoint_.wait(task_id, std::max(ctx.seconds_left(), 0.0), ctx.stop);
  if (!record) {
    if (ctx.stop.stop_requested()) return {Outcome::fatal, {{"task_id", task_id}}, "cancelled"};
    return {Outcome::retryable_failure, {{"task_id", task_id}}, "task " + task_id + " did not finish in time"};
  }
  json output = {{"task_id", task_id}, {"result", record->result}};
  if (record->state == compute::TaskState::done) return {Outcome::success, output, {}};
  return {Outcome::retryable_failure, output, task_id + ": " + record->error};
}

}  // namespace ptyfed::flow
