#include "ptyfed/flow_definition.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

namespace ptyfed::flow {
using json = nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += "; ";
    out += s;
  }
  return out;
}

struct Reference {
  enum class Kind { input, state_output } kind = Kind::input;
  std::string state;
  std::string key;
};

bool is_template(const json& value) {
  return value.is_string() && value.get_ref<const std::string&>().starts_with("$.");
}

// "$.input.<key>" or "$.states.<state>.output.<key>"; keys are single path segments.
std::optional<Reference> parse_reference(const std::string& text) {
  constexpr std::string_view input_prefix = "$.input.";
  constexpr std::string_view states_prefix = "$.states.";
  constexpr std::string_view output_marker = ".output.";
  if (text.starts_with(input_prefix)) {
    auto key = text.substr(input_prefix.size());
    if (key.empty() || key.find('.') != std::string::npos) return std::nullopt;
    return Reference{Reference::Kind::input, {}, key};
  }
  if (text.starts_with(states_prefix)) {
    auto rest = text.substr(states_prefix.size());
    auto pos = rest.find(output_marker);
    if (pos == std::string::npos || pos == 0) return std::nullopt;
    auto state = rest.substr(0, pos);
    auto key = rest.substr(pos + output_marker.size());
    if (state.find('.') != std::string::npos || key.empty() || key.find('.') != std::string::npos) {
      return std::nullopt;
    }
    return Reference{Reference::Kind::state_output, state, key};
  }
  return std::nullopt;
}

template <typename F>
void for_each_template(const json& value, F&& visit) {
  if (is_template(value)) {
    visit(value.get<std::string>());
  } else if (value.is_object() || value.is_array()) {
    for (const auto& child : value) for_each_template(child, visit);
  }
}

}  // namespace

std::string to_string(ActionType type) { return type == ActionType::transfer ? "transfer" : "compute"; }

ActionType action_type_from_string(const std::string& name) {
  if (name == "transfer") return ActionType::transfer;
  if (name == "compute") return ActionType::compute;
  throw ConfigError("unknown action_type '" + name + "'");
}

FlowValidationError::FlowValidationError(std::vector<std::string> violations)
    : ConfigError("invalid flow definition: " + join(violations)), violations_(std::move(violations)) {}

const StateDefinition& FlowDefinition::state(const std::string& name) const {
  auto it = states.find(name);
  if (it == states.end()) throw ConfigError("flow '" + id + "' has no state '" + name + "'");
  return it->second;
}

std::vector<std::string> FlowDefinition::path() const {
  std::vector<std::string> order;
  std::set<std::string> seen;
  std::string current = start_state;
  while (current != kEnd) {
    auto it = states.find(current);
    if (it == states.end() || !seen.insert(current).second) break;
    order.push_back(current);
    current = it->second.next;
  }
  return order;
}

std::vector<std::string> FlowDefinition::referenced_inputs() const {
  std::set<std::string> keys;
  for (const auto& [name, st] : states) {
    for_each_template(st.parameters, [&](const std::string& text) {
      if (auto ref = parse_reference(text); ref && ref->kind == Reference::Kind::input) keys.insert(ref->key);
    });
  }
  return {keys.begin(), keys.end()};
}

json FlowDefinition::to_json() const {
  json j = {{"id", id}, {"start_state", start_state}, {"inputs", inputs}, {"states", json::object()}};
  for (const auto& [name, st] : states) {
    j["states"][name] = {{"action_type", to_string(st.action_type)},
                         {"parameters", st.parameters},
                         {"next", st.next},
                         {"retries", st.retries},
                         {"timeout", st.timeout}};
  }
  return j;
}

FlowDefinition parse_definition(std::string_view json_text) {
  json document;
  try {
    document = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("flow definition is not valid JSON: ") + e.what());
  }
  return definition_from_json(document);
}

FlowDefinition definition_from_json(const json& document) {
  std::vector<std::string> errors;
  FlowDefinition def;
  if (!document.is_object()) throw FlowValidationError({"flow definition must be a JSON object"});

  if (document.contains("id") && document["id"].is_string() && !document["id"].get<std::string>().empty()) {
    def.id = document["id"].get<std::string>();
  } else {
    errors.push_back("missing or empty \"id\"");
  }

  if (document.contains("inputs")) {
    if (!document["inputs"].is_array()) {
      errors.push_back("\"inputs\" must be an array of key names");
    } else {
      for (const auto& k : document["inputs"]) {
        if (k.is_string()) {
          def.inputs.push_back(k.get<std::string>());
        } else {
          errors.push_back("\"inputs\" entries must be strings");
        }
      }
    }
  }
  const std::set<std::string> declared(def.inputs.begin(), def.inputs.end());

  if (!document.contains("states") || !document["states"].is_object()) {
    errors.push_back("missing \"states\" object");
  } else if (document["states"].empty()) {
    errors.push_back("\"states\" is empty");
  }

  if (document.contains("states") && document["states"].is_object()) {
    for (const auto& [name, body] : document["states"].items()) {
      StateDefinition st;
      st.name = name;
      if (name == kEnd) errors.push_back("state name 'END' is reserved");
      if (!body.is_object()) {
        errors.push_back("state '" + name + "': must be an object");
        continue;
      }
      if (!body.contains("action_type") || !body["action_type"].is_string()) {
        errors.push_back("state '" + name + "': missing action_type");
      } else {
        const auto type = body["action_type"].get<std::string>();
        if (type == "transfer" || type == "compute") {
          st.action_type = action_type_from_string(type);
        } else {
          errors.push_back("state '" + name + "': unknown action_type '" + type + "'");
        }
      }
      if (body.contains("parameters")) {
        if (body["parameters"].is_object()) {
          st.parameters = body["parameters"];
        } else {
          errors.push_back("state '" + name + "': parameters must be an object");
        }
      }
      if (!body.contains("next") || !body["next"].is_string()) {
        errors.push_back("state '" + name + "': missing next");
      } else {
        st.next = body["next"].get<std::string>();
      }
      if (body.contains("retries")) {
        if (body["retries"].is_number_integer() && body["retries"].get<std::int64_t>() >= 0) {
          st.retries = body["retries"].get<std::size_t>();
        } else {
          errors.push_back("state '" + name + "': retries must be an integer >= 0");
        }
      }
      if (body.contains("timeout")) {
        if (body["timeout"].is_number() && body["timeout"].get<double>() > 0.0) {
          st.timeout = body["timeout"].get<double>();
        } else {
          errors.push_back("state '" + name + "': timeout must be a positive number of seconds");
        }
      }
      def.states.emplace(name, std::move(st));
    }
  }

  for (const auto& [name, st] : def.states) {
    if (st.next != kEnd && !def.states.contains(st.next)) {
      errors.push_back("state '" + name + "': next '" + st.next + "' is not a state");
    }
    for_each_template(st.parameters, [&](const std::string& text) {
      auto ref = parse_reference(text);
      if (!ref) {
        errors.push_back("state '" + name + "': bad template '" + text + "'");
      } else if (ref->kind == Reference::Kind::input && !declared.contains(ref->key)) {
        errors.push_back("state '" + name + "': template '" + text + "' uses undeclared input '" + ref->key + "'");
      } else if (ref->kind == Reference::Kind::state_output && !def.states.contains(ref->state)) {
        errors.push_back("state '" + name + "': template '" + text + "' references unknown state '" + ref->state + "'");
      }
    });
  }

  if (document.contains("start_state") && document["start_state"].is_string()) {
    def.start_state = document["start_state"].get<std::string>();
    if (!def.states.empty() && !def.states.contains(def.start_state)) {
      errors.push_back("start_state '" + def.start_state + "' is not a state");
    }
  } else {
    errors.push_back("missing \"start_state\"");
  }

  // Each state has a single successor, so the run path is a chain: it either reaches END
  // or revisits a state.
  if (def.states.contains(def.start_state)) {
    std::set<std::string> seen;
    std::string current = def.start_state;
    while (current != kEnd) {
      auto it = def.states.find(current);
      if (it == def.states.end()) break;  // already reported as a bad next
      if (!seen.insert(current).second) {
        errors.push_back("state '" + current + "': cycle from start_state never reaches END");
        break;
      }
      // A state may only read outputs of states that ran before it.
      for_each_template(it->second.parameters, [&](const std::string& text) {
        auto ref = parse_reference(text);
        if (ref && ref->kind == Reference::Kind::state_output && def.states.contains(ref->state) &&
            (!seen.contains(ref->state) || ref->state == current)) {
          errors.push_back("state '" + current + "': template '" + text + "' reads state '" + ref->state +
                           "' which has not run yet");
        }
      });
      current = it->second.next;
    }
  }

  if (!errors.empty()) throw FlowValidationError(std::move(errors));
  return def;
}

FlowDefinition load_definition(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read flow definition " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_definition(buf.str());
}

json render_parameters(const json& parameters, const json& input, const json& outputs) {
  if (is_template(parameters)) {
    const auto text = parameters.get<std::string>();
    auto ref = parse_reference(text);
    if (!ref) throw ConfigError("bad template '" + text + "'");
    if (ref->kind == Reference::Kind::input) {
      if (!input.is_object() || !input.contains(ref->key)) throw ConfigError("input is missing key '" + ref->key + "'");
      return input.at(ref->key);
    }
    if (!outputs.is_object() || !outputs.contains(ref->state) || !outputs.at(ref->state).is_object() ||
        !outputs.at(ref->state).contains(ref->key)) {
      throw ConfigError("output of state '" + ref->state + "' has no key '" + ref->key + "'");
    }
    return outputs.at(ref->state).at(ref->key);
  }
  if (parameters.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : parameters.items()) out[k] = render_parameters(v, input, outputs);
    return out;
  }
  if (parameters.is_array()) {
    json out = json::array();
    for (const auto& v : parameters) out.push_back(render_parameters(v, input, outputs));
    return out;
  }
  return parameters;
}

}  // namespace ptyfed::flow
