#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "navhop/blob_store.hpp"
#include "navhop/runtime.hpp"
#include "navhop/scheduler.hpp"

namespace navhop {

struct AgentConfig {
  std::string node_id;
  std::string claim_id;  // scheduler claim identity; empty means node_id
  HostPort listen{"127.0.0.1", 0};
  std::string store_root;
  HostPort scheduler;
  std::vector<std::string> apps;      // names to register, e.g. "colocation"
  std::vector<NodeDescriptor> peers;  // the rest of the cluster
  int max_concurrent_jobs = 2;
  int grace_ms = 500;        // notice-kill drain window
  int lease_secs = 30;       // claim renewal cadence derives from this
  std::string events_addr;   // harness collector, empty to run silent
};

// Sleep stages for timing scenarios: long enough that a notice-kill grace can
// expire mid-stage.
StageMachine build_slowloop_app(int stage_sleep_ms = 400);

// Per-node service: accepts hop handoffs and fresh starts, runs one worker
// per job, renews scheduler claims, and dies on request.
class Agent {
 public:
  explicit Agent(AgentConfig cfg);
  ~Agent();

  void start();
  void stop();
  const HostPort& address() const { return server_.address(); }
  const std::string& node_id() const { return cfg_.node_id; }

  // Exposed for in-process tests; the TCP server routes through this too.
  // Returns nullopt when no response must be sent (kill requests).
  std::optional<Message> handle(const Message& req);

  // True once every worker finished; false on timeout.
  bool wait_idle(int timeout_ms);

 private:
  struct WorkerInfo {
    std::string via;  // "start" or "hop"
    std::uint64_t resume_seq = 0;
    std::uint32_t resume_stage = 0;
  };

  NodeEnv make_env();
  Message handle_hop(const Message& req);
  Message handle_start(const Message& req);
  Message handle_health();
  void run_worker(const std::string& job_id, const std::string& app_name, WorkerInfo info);
  void renewal_loop();

  AgentConfig cfg_;
  DirStore store_;
  std::shared_ptr<EventSink> events_;
  AppRegistry apps_;
  RpcServer server_;
  std::chrono::steady_clock::time_point started_at_;

  std::mutex mu_;
  std::condition_variable idle_cv_;
  std::map<std::string, WorkerInfo> workers_;
  bool draining_ = false;
  std::atomic<bool> stopping_{false};
  std::thread renewal_thread_;
};

}  // namespace navhop
