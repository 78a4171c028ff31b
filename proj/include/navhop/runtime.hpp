#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "navhop/blob_store.hpp"
#include "navhop/clock.hpp"
#include "navhop/cmi.hpp"
#include "navhop/events.hpp"
#include "navhop/net.hpp"
#include "navhop/task.hpp"

namespace navhop {

// Store layout for one job, all under the job's namespace:
//   cmi/<seq>.cmi     checkpoint images, one per sequence
//   current.manifest  commit pointer to the authoritative image
//   input/<name>      staged inputs
//   product/<name>    published products
std::string job_namespace(const std::string& job_id);
BlobKey cmi_key(const std::string& job_id, std::uint64_t sequence);
BlobKey manifest_key(const std::string& job_id);
BlobKey input_key(const std::string& job_id, const std::string& name);
BlobKey product_key(const std::string& job_id, const std::string& name);

// Parses the sequence out of a "cmi/<seq>.cmi" blob name; returns 0 when the
// name is not a checkpoint image.
std::uint64_t sequence_of_cmi_name(const std::string& name);

bool retryable(Errc code);

struct RetryPolicy {
  int retries = 3;  // attempts beyond the first
  int backoff_base_ms = 100;

  int delay_ms(int failure_index) const { return backoff_base_ms << failure_index; }
};

// Runs fn, retrying transient failures per policy with exponential backoff.
template <typename Fn>
auto with_retry(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const Error& e) {
      if (!retryable(e.code()) || attempt >= policy.retries) throw;
      sleep_ms(policy.delay_ms(attempt));
    }
  }
}

// Everything a task needs from the node hosting it.
struct NodeEnv {
  NodeDescriptor self;
  std::vector<NodeDescriptor> nodes;  // cluster config, self included
  HostPort scheduler;
  BlobStore* store = nullptr;
  std::shared_ptr<EventSink> events = std::make_shared<NullSink>();
  const AppRegistry* apps = nullptr;
  Clock clock = system_clock_seconds();
  RetryPolicy retry;
  // Identity used for scheduler claims. Replacement processes keep the slot's
  // claim identity while carrying a fresh node_id, e.g. node "A.2" claiming
  // as "A". Empty means self.node_id.
  std::string claim_id;

  const std::string& claim_name() const { return claim_id.empty() ? self.node_id : claim_id; }
  const NodeDescriptor* find_node(const std::string& node_id) const;
  // The lowest-id cluster node that is not this one.
  NodeDescriptor other_node() const;
  void emit(const std::string& type, const std::string& job_id,
            std::map<std::string, std::string> attrs = {}) const;
};

// Sends one request to the scheduler, retrying transport failures. Transport
// errors surface as SchedulerUnreachable; application errors come back in the
// response and are raised by ensure_ok here.
Message scheduler_call(NodeEnv& env, const Message& request);

// Writes CMI then manifest then tells the scheduler, in that order. The
// manifest is the commit point: a crash before it leaves the previous
// checkpoint authoritative, a crash after it leaves the new one. claim_node
// names who holds the job afterwards (the hop destination, or self).
// Returns the new sequence.
std::uint64_t checkpoint_and_register(TaskState& state, NodeEnv& env,
                                      const std::string& claim_node);

// Checkpoint, transfer the claim to dest, request a restart there, and wait
// for the acknowledgement. Throws on any failure; on success the caller must
// stop executing stages locally.
void hop(TaskState& state, const NodeDescriptor& dest, NodeEnv& env);

// status "ckpt": checkpoint and continue locally. status "finished": verify
// the product named by vars["product_key"] exists, then notify the scheduler.
void publish(TaskState& state, const std::string& status, NodeEnv& env);

class StageContext {
 public:
  StageContext(const StageMachine& machine, TaskState& state, NodeEnv& env)
      : machine_(machine), state_(state), env_(env) {}

  TaskState& state() { return state_; }
  ValueMap& vars() { return state_.vars; }
  NodeEnv& env() { return env_; }
  BlobStore& store() { return *env_.store; }
  const std::string& job_id() const { return state_.job_id; }
  std::uint32_t current_stage() const { return current_stage_; }

  const NodeDescriptor& self() const { return env_.self; }
  NodeDescriptor other_node() const { return env_.other_node(); }

  void hop(const NodeDescriptor& dest);
  void publish_ckpt();
  void publish_finished();

  // Midpoint breadcrumb for long stages.
  void emit_mid();

  BlobKey input(const std::string& name) const { return input_key(state_.job_id, name); }
  BlobKey product(const std::string& name) const { return product_key(state_.job_id, name); }

  bool migrated() const { return migrated_; }

 private:
  friend TaskOutcome run_task(const StageMachine&, TaskState&, NodeEnv&);

  const StageMachine& machine_;
  TaskState& state_;
  NodeEnv& env_;
  std::uint32_t current_stage_ = 0;
  bool migrated_ = false;
  std::string dest_node_id_;
};

// Drives stages from state.next_stage. A stage that hops ends the local run
// with Migrated; an exception ends it with Failed; otherwise Completed.
TaskOutcome run_task(const StageMachine& machine, TaskState& state, NodeEnv& env);

// Reads the committed manifest and its image, checking that the two agree and
// that the image verifies. Used for restart and for pre-acceptance checks.
struct LoadedCheckpoint {
  RestartManifest manifest;
  CheckpointImage image;
};
LoadedCheckpoint load_checkpoint(const std::string& job_id, NodeEnv& env);

// Resumes a job from its committed checkpoint.
TaskOutcome restart(const std::string& job_id, NodeEnv& env);

}  // namespace navhop
