#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "navhop/errors.hpp"
#include "navhop/net.hpp"
#include "navhop/value.hpp"

namespace navhop {

struct NodeDescriptor {
  std::string node_id;
  HostPort addr;

  bool operator==(const NodeDescriptor&) const = default;
};

// Resumable task position. vars travels between nodes only as checkpoint
// payload bytes, so everything in it must round-trip bit-exactly.
struct TaskState {
  std::string job_id;
  std::string app_name;
  std::uint32_t next_stage = 0;
  std::uint64_t ckpt_sequence = 0;  // last checkpoint written, 0 if none
  ValueMap vars;
};

// Checkpoint payload carries the app name and variables; job id, stage and
// sequence live in the image header.
Bytes serialize_task_payload(const TaskState& state);
void apply_task_payload(TaskState& state, const Bytes& payload);

class StageContext;

using StageFn = std::function<void(StageContext&)>;

struct Stage {
  std::string label;
  StageFn run;
};

struct StageMachine {
  std::string app_name;
  std::vector<Stage> stages;
};

enum class OutcomeKind { kCompleted, kMigrated, kFailed };

struct TaskOutcome {
  OutcomeKind kind = OutcomeKind::kCompleted;
  std::string dest_node_id;  // set when kind == kMigrated
  Errc code = Errc::kOk;     // set when kind == kFailed
  std::string message;

  static TaskOutcome completed() { return {}; }
  static TaskOutcome migrated(std::string dest) {
    return TaskOutcome{OutcomeKind::kMigrated, std::move(dest), Errc::kOk, {}};
  }
  static TaskOutcome failed(Errc code, std::string msg) {
    return TaskOutcome{OutcomeKind::kFailed, {}, code, std::move(msg)};
  }
};

class AppRegistry {
 public:
  void add(StageMachine machine);
  bool has(const std::string& app_name) const;
  // Throws UnknownApp when absent.
  const StageMachine& find(const std::string& app_name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, StageMachine> apps_;
};

}  // namespace navhop
