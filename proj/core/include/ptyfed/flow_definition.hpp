#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptyfed/errors.hpp"

namespace ptyfed::flow {

inline constexpr const char* kEnd = "END";

enum class ActionType { transfer, compute };

std::string to_string(ActionType type);
ActionType action_type_from_string(const std::string& name);

struct StateDefinition {
  std::string name;
  ActionType action_type = ActionType::transfer;
  // Template: any string value of the exact form "$.input.<key>" or
  // "$.states.<state>.output.<key>" is replaced by the referenced value.
  nlohmann::json parameters = nlohmann::json::object();
  std::string next = kEnd;
  std::size_t retries = 2;
  double timeout = 300.0;  // seconds per attempt
};

struct FlowDefinition {
  std::string id;
  std::string start_state;
  std::vector<std::string> inputs;  // declared input keys
  std::map<std::string, StateDefinition> states;

  const StateDefinition& state(const std::string& name) const;
  // States visited from start_state to END, in order.
  std::vector<std::string> path() const;
  // Input keys referenced by any parameter template.
  std::vector<std::string> referenced_inputs() const;
  nlohmann::json to_json() const;
};

// Lists every violated rule, each naming the offending state or key.
class FlowValidationError : public ConfigError {
 public:
  explicit FlowValidationError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  std::vector<std::string> violations_;
};

FlowDefinition parse_definition(std::string_view json_text);
FlowDefinition definition_from_json(const nlohmann::json& document);
FlowDefinition load_definition(const std::filesystem::path& file);

// Substitutes templates. `outputs` maps state name to that state's output object.
// Throws ConfigError naming the first reference that cannot be resolved.
nlohmann::json render_parameters(const nlohmann::json& parameters, const nlohmann::json& input,
                                 const nlohmann::json& outputs);

}  // namespace ptyfed::flow
