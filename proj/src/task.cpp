#include "navhop/task.hpp"

namespace navhop {

Bytes serialize_task_payload(const TaskState& state) {
  ValueMap payload;
  payload.emplace("app_name", Value(state.app_name));
  payload.emplace("vars", Value(ValueMap(state.vars)));
  return serialize_value_map(payload);
}

void apply_task_payload(TaskState& state, const Bytes& payload) {
  ValueMap decoded = deserialize_value_map(payload);
  auto app = decoded.find("app_name");
  auto vars = decoded.find("vars");
  if (app == decoded.end() || vars == decoded.end()) {
    raise(Errc::kMalformedMessage, "checkpoint payload missing app_name or vars");
  }
  state.app_name = app->second.as_str();
  state.vars = vars->second.as_map();
}

void AppRegistry::add(StageMachine machine) {
  auto name = machine.app_name;
  apps_.insert_or_assign(name, std::move(machine));
}

bool AppRegistry::has(const std::string& app_name) const { return apps_.count(app_name) > 0; }

const StageMachine& AppRegistry::find(const std::string& app_name) const {
  auto it = apps_.find(app_name);
  if (it == apps_.end()) raise(Errc::kUnknownApp, "no app registered as '" + app_name + "'");
  return it->second;
}

std::vector<std::string> AppRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(apps_.size());
  for (const auto& [name, _] : apps_) out.push_back(name);
  return out;
}

}  // namespace navhop
