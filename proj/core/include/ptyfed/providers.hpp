#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "ptyfed/compute_endpoint.hpp"
#include "ptyfed/event_log.hpp"
#include "ptyfed/facility.hpp"
#include "ptyfed/flow_engine.hpp"

namespace ptyfed::flow {

// Parameters: source_endpoint, source_path, destination_endpoint, destination_path.
// Every transfer failure, checksum mismatch included, is retryable since a repeated
// transfer overwrites its destination; a rejected token is fatal.
class TransferProvider : public ActionProvider {
 public:
  // Runs after the copy and before verification; may alter the destination.
  using FaultHook = std::function<void(const InvokeContext&, const nlohmann::json& parameters,
                                       const std::filesystem::path& destination)>;

  TransferProvider(std::shared_ptr<const facility::Deployment> deployment, std::string token,
                   EventLog* log = nullptr);

  void set_fault_hook(FaultHook hook) { hook_ = std::move(hook); }

  ActionResult invoke(const nlohmann::json& parameters, const InvokeContext& ctx) override;

 private:
  std::shared_ptr<const facility::Deployment> deployment_;
  std::string token_;
  EventLog* log_;
  FaultHook hook_;
};

// Parameters: function_id, args, slots (default 1). The attempt id tags the task, so a
// repeated dispatch of one attempt reuses its task. Failed tasks and timeouts are
// retryable; unknown functions and impossible slot requests are fatal.
class ComputeProvider : public ActionProvider {
 public:
  explicit ComputeProvider(compute::ComputeEndpoint& endpoint) : endpoint_(endpoint) {}

  ActionResult invoke(const nlohmann::json& parameters, const InvokeContext& ctx) override;

 private:
  compute::ComputeEndpoint& endpoint_;
};

}  // namespace ptyfed::flow
