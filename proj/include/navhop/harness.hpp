#pragma once

#include <sys/types.h>

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "navhop/events.hpp"
#include "navhop/net.hpp"

namespace navhop {

// ---- run configuration -----------------------------------------------------

struct TopologyNode {
  std::string node_id;
  std::vector<std::string> apps;
};

struct Topology {
  std::vector<TopologyNode> nodes;
  int capacity = 2;
  int grace_ms = 500;
  int lease_secs = 10;
};

// One planned preemption. Either an event trigger (type plus filters) or a
// timer (after_ms). Target "emitter" kills whichever process produced the
// matching event.
struct KillTrigger {
  std::string event_type;
  std::string job_id;
  std::string source;
  std::map<std::string, std::string> attr_eq;
  int nth = 1;
  int after_ms = -1;

  std::string target = "emitter";
  std::string mode = "immediate";  // or "notice"
  bool replace = true;             // spawn a replacement agent afterwards
};

struct JobSpec {
  std::string job_id;
  std::string app;
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 7;
  std::uint32_t n_fine = 100;
  std::uint32_t n_coarse = 20;
  double radius = 0.05;
  int timeout_ms = 60000;
  std::vector<JobSpec> jobs;
  std::vector<KillTrigger> kills;
};

// Small config dialect shared by topology and scenario files: `key = value`
// lines, `[section arg]` headers, `#` comments. See PROTOCOL.md.
struct ConfigSection {
  std::string name;  // "" for the preamble
  std::string arg;
  std::map<std::string, std::string> kv;
};
std::vector<ConfigSection> parse_config(std::string_view text);

Topology parse_topology(std::string_view text);
Scenario parse_scenario(std::string_view text);

// ---- processes -------------------------------------------------------------

class ChildProcess {
 public:
  ChildProcess() = default;
  ChildProcess(ChildProcess&&) noexcept;
  ChildProcess& operator=(ChildProcess&&) noexcept;
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;
  ~ChildProcess();

  static ChildProcess spawn(const std::string& name, const std::vector<std::string>& argv,
                            const std::string& stdout_path, const std::string& stderr_path);

  pid_t pid() const { return pid_; }
  const std::string& name() const { return name_; }
  bool running();        // reaps on exit
  void sigkill();
  // Waits for exit, reaping; returns false on timeout.
  bool wait_exit(int timeout_ms);
  // Exit code once reaped: WEXITSTATUS, 128+signal for kills, -1 if unknown.
  int exit_code() const { return exit_code_; }

 private:
  pid_t pid_ = -1;
  std::string name_;
  bool reaped_ = false;
  int exit_code_ = -1;
};

std::uint16_t pick_free_port();

// Polls a health request until the server answers; throws on timeout.
void wait_healthy(const HostPort& addr, int timeout_ms);

// ---- event collection ------------------------------------------------------

struct LoggedEvent {
  std::uint64_t index = 0;
  std::uint64_t at_ms = 0;  // since collector start
  Event ev;
};

// Receives the event stream from all processes. Each event is acked so the
// sender may proceed; when an armed trigger matches, the kill callback runs
// first and an "immediate" kill withholds the ack, leaving the sender frozen
// at the exact instant it reported.
class EventCollector {
 public:
  // Returns true if the event should still be acked (notice-mode kills).
  using KillFn =
      std::function<bool(const KillTrigger& trigger, const Event& cause)>;

  void start();
  void stop();
  const HostPort& address() const { return server_.address(); }

  void arm(std::vector<KillTrigger> triggers, KillFn on_kill);
  std::vector<LoggedEvent> events() const;
  // Harness-side annotations (kill_fired, process_down) share the log.
  void add_local(const Event& ev);

 private:
  std::optional<Message> handle(const Message& req);

  RpcServer server_;
  mutable std::mutex mu_;
  std::vector<LoggedEvent> log_;
  std::vector<KillTrigger> triggers_;
  std::vector<int> trigger_hits_;
  KillFn on_kill_;
  std::uint64_t t0_ms_ = 0;
};

// ---- reports and verification ----------------------------------------------

struct JobReport {
  std::string status;          // final scheduler status
  std::string app;
  std::vector<int> attempts;   // per stage, from stage_start events
  int cmis_emitted = 0;
  std::uint64_t bytes_checkpointed = 0;
  std::uint64_t wall_ms = 0;
  std::string product_key;
  Bytes product;
};

struct RunReport {
  std::string scenario_name;
  std::vector<LoggedEvent> events;
  std::map<std::string, JobReport> jobs;
  std::map<std::string, std::size_t> app_stages;
  double recompute_ratio = 0;
  bool deadline_exceeded = false;
  std::vector<std::string> notes;
};

// Checks the invariants a run must satisfy over its event log: every job
// finished, products match the baseline when one is given, no stage events
// after a hop from the departed process, contiguous per-incarnation stage
// segments, monotone checkpoint sequences, resumes anchored at the latest
// promoted manifest, claim holders matching executors, and exactly-once
// execution in kill-free runs. Returns human-readable violations; empty
// means the run verifies.
std::vector<std::string> replay_verify(const RunReport& report,
                                       const std::map<std::string, Bytes>& baseline_products);

std::string report_to_json(const RunReport& report, const std::vector<std::string>& violations);

// ---- scenario execution ----------------------------------------------------

struct HarnessPaths {
  std::string agent_bin;
  std::string scheduler_bin;
  std::string workdir;
};

RunReport run_scenario(const Topology& topology, const Scenario& scenario,
                       const HarnessPaths& paths);

}  // namespace navhop
