#include "navhop/agent.hpp"

#include <unistd.h>

#include <algorithm>

#include "navhop/colocation.hpp"

namespace navhop {

StageMachine build_slowloop_app(int stage_sleep_ms) {
  auto sleepy = [stage_sleep_ms](StageContext& ctx) {
    sleep_ms(stage_sleep_ms / 2);
    ctx.emit_mid();
    sleep_ms(stage_sleep_ms - stage_sleep_ms / 2);
    std::int64_t done = 0;
    if (auto it = ctx.vars().find("laps"); it != ctx.vars().end()) done = it->second.as_int();
    ctx.vars()["laps"] = done + 1;
  };
  StageMachine m;
  m.app_name = "slowloop";
  m.stages = {
      {"lap", sleepy},
      {"ckpt_publish", [](StageContext& ctx) { ctx.publish_ckpt(); }},
      {"lap", sleepy},
      {"write_product",
       [](StageContext& ctx) {
         BlobKey key = ctx.product("laps.txt");
         ctx.store().put_atomic(key,
                                std::to_string(ctx.vars().at("laps").as_int()) + "\n");
         ctx.vars()["product_key"] = key.full();
         ctx.publish_finished();
       }},
  };
  return m;
}

Agent::Agent(AgentConfig cfg) : cfg_(std::move(cfg)), store_(cfg_.store_root) {
  events_ = make_event_sink(cfg_.events_addr);
  started_at_ = std::chrono::steady_clock::now();

  NodeDescriptor other;
  bool have_other = false;
  for (const auto& p : cfg_.peers) {
    if (p.node_id == cfg_.node_id) continue;
    if (!have_other || p.node_id < other.node_id) {
      other = p;
      have_other = true;
    }
  }

  for (const auto& name : cfg_.apps) {
    if (name == "colocation") {
      apps_.add(build_publish_variant());
    } else if (name == "colocation_hop") {
      // With no peer the machine hops to this very node; a self-hop is legal.
      apps_.add(build_hop_variant(have_other ? other
                                             : NodeDescriptor{cfg_.node_id, cfg_.listen}));
    } else if (name == "slowloop") {
      apps_.add(build_slowloop_app());
    } else {
      raise(Errc::kUnknownApp, "agent cannot provide app '" + name + "'");
    }
  }

  // Surface the moment a checkpoint image is half-written; the harness turns
  // it into a kill site for torn-write scenarios.
  store_.set_observer([this](std::string_view point, const BlobKey& key) {
    if (point != "write_mid") return;
    std::uint64_t seq = sequence_of_cmi_name(key.name);
    if (seq == 0) return;
    std::string job = key.ns.rfind("job-", 0) == 0 ? key.ns.substr(4) : key.ns;
    events_->emit(Event{cfg_.node_id,
                        "cmi_put_mid",
                        job,
                        {{"seq", std::to_string(seq)}, {"key", key.full()}}});
  });
}

Agent::~Agent() { stop(); }

void Agent::start() {
  server_.start(cfg_.listen, [this](const Message& req) { return handle(req); });
  renewal_thread_ = std::thread([this] { renewal_loop(); });
  events_->emit(Event{cfg_.node_id, "agent_up", "", {{"addr", server_.address().str()}}});
}

void Agent::stop() {
  if (stopping_.exchange(true)) return;
  idle_cv_.notify_all();
  if (renewal_thread_.joinable()) renewal_thread_.join();
  server_.stop();
  wait_idle(30000);
}

bool Agent::wait_idle(int timeout_ms) {
  std::unique_lock lk(mu_);
  return idle_cv_.wait_for(lk, std::chrono::milliseconds(timeout_ms),
                           [this] { return workers_.empty(); });
}

NodeEnv Agent::make_env() {
  NodeEnv env;
  env.self = NodeDescriptor{cfg_.node_id, server_.address()};
  env.nodes = cfg_.peers;
  env.nodes.push_back(env.self);
  env.scheduler = cfg_.scheduler;
  env.store = &store_;
  env.events = events_;
  env.apps = &apps_;
  env.claim_id = cfg_.claim_id;
  return env;
}

std::optional<Message> Agent::handle(const Message& req) {
  const std::string& service = req.get("service");
  if (service == "hop") return handle_hop(req);
  if (service == "start") return handle_start(req);
  if (service == "health") return handle_health();
  if (service == "kill") {
    const std::string& mode = req.get("mode");
    if (mode == "immediate") {
      ::_exit(1);
    }
    if (mode == "notice") {
      {
        std::lock_guard lk(mu_);
        draining_ = true;
      }
      std::thread([grace = cfg_.grace_ms] {
        sleep_ms(grace);
        ::_exit(0);
      }).detach();
      return std::nullopt;  // kill sends no response
    }
    raise(Errc::kInvalidArgument, "kill mode must be immediate or notice");
  }
  raise(Errc::kMalformedMessage, "unknown service '" + service + "'");
}

Message Agent::handle_hop(const Message& req) {
  const std::string& job_id = req.get("job_id");
  const std::string& manifest_key_given = req.get("manifest_key");
  (void)req.get("source_node");

  // Everything is validated before the ok goes out: the source only stops
  // once this node has proven it can resume the task.
  if (manifest_key_given != manifest_key(job_id).full()) {
    raise(Errc::kManifestMismatch,
          "hop names manifest " + manifest_key_given + ", expected " + manifest_key(job_id).full());
  }
  NodeEnv env = make_env();
  LoadedCheckpoint loaded = load_checkpoint(job_id, env);
  if (!apps_.has(loaded.manifest.app_name)) {
    raise(Errc::kUnknownApp, "no app registered as '" + loaded.manifest.app_name + "'");
  }

  WorkerInfo info{"hop", loaded.manifest.sequence, loaded.manifest.stage};
  std::string app_name = loaded.manifest.app_name;
  {
    std::lock_guard lk(mu_);
    if (draining_) raise(Errc::kBusy, "agent is draining");
    auto it = workers_.find(job_id);
    if (it != workers_.end()) {
      if (it->second.resume_seq >= info.resume_seq) {
        return ok_response();  // duplicate delivery of a handoff already taken
      }
      // Self-hop: the running worker is the source, blocked on this reply.
      // Accept now, restart once it lets go of the slot.
      std::thread([this, job_id, app_name, info] {
        {
          std::unique_lock lk(mu_);
          idle_cv_.wait(lk, [&] { return workers_.count(job_id) == 0 || stopping_; });
          if (stopping_) return;
          workers_[job_id] = info;
        }
        run_worker(job_id, app_name, info);
      }).detach();
      return ok_response();
    }
    if (static_cast<int>(workers_.size()) >= cfg_.max_concurrent_jobs) {
      raise(Errc::kBusy, "agent is at capacity");
    }
    workers_[job_id] = info;
  }
  std::thread([this, job_id, app_name, info] { run_worker(job_id, app_name, info); }).detach();
  return ok_response();
}

Message Agent::handle_start(const Message& req) {
  const std::string& job_id = req.get("job_id");
  const std::string& app_name = req.get("app_name");
  if (!apps_.has(app_name)) {
    raise(Errc::kUnknownApp, "no app registered as '" + app_name + "'");
  }

  NodeEnv env = make_env();
  Message ask;
  ask.set("service", "get_job").set("job_id", job_id);
  Message resp = scheduler_call(env, ask);
  if (resp.get("status") != "new") {
    raise(Errc::kInvalidTransition,
          "job " + job_id + " is " + resp.get("status") + ", only new jobs start fresh");
  }

  WorkerInfo info{"start", 0, 0};
  {
    std::lock_guard lk(mu_);
    if (draining_) raise(Errc::kBusy, "agent is draining");
    if (workers_.count(job_id) > 0) {
      raise(Errc::kBusy, "job " + job_id + " is already running here");
    }
    if (static_cast<int>(workers_.size()) >= cfg_.max_concurrent_jobs) {
      raise(Errc::kBusy, "agent is at capacity");
    }
    workers_[job_id] = info;
  }
  std::thread([this, job_id, app_name, info] { run_worker(job_id, app_name, info); }).detach();
  return ok_response();
}

Message Agent::handle_health() {
  Message resp = ok_response();
  resp.set("node_id", cfg_.node_id);
  auto uptime = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - started_at_)
                    .count();
  resp.set_u64("uptime_ms", static_cast<std::uint64_t>(uptime));
  resp.set_u64("capacity", static_cast<std::uint64_t>(cfg_.max_concurrent_jobs));
  std::lock_guard lk(mu_);
  resp.set(draining_ ? "draining" : "accepting", "1");
  std::size_t i = 0;
  for (const auto& [job_id, _] : workers_) {
    resp.set("running." + std::to_string(i++), job_id);
  }
  resp.set_u64("running_count", workers_.size());
  return resp;
}

void Agent::run_worker(const std::string& job_id, const std::string& app_name, WorkerInfo info) {
  NodeEnv env = make_env();
  env.emit("task_accepted", job_id,
           {{"via", info.via},
            {"seq", std::to_string(info.resume_seq)},
            {"stage", std::to_string(info.resume_stage)},
            {"app", app_name}});
  TaskOutcome outcome;
  try {
    if (info.via == "start") {
      TaskState state;
      state.job_id = job_id;
      state.app_name = app_name;
      outcome = run_task(apps_.find(app_name), state, env);
    } else {
      outcome = navhop::restart(job_id, env);
    }
  } catch (const Error& e) {
    outcome = TaskOutcome::failed(e.code(), e.what());
  } catch (const std::exception& e) {
    outcome = TaskOutcome::failed(Errc::kStageFailure, e.what());
  }

  switch (outcome.kind) {
    case OutcomeKind::kCompleted:
      env.emit("task_completed", job_id, {});
      break;
    case OutcomeKind::kMigrated:
      env.emit("task_migrated", job_id, {{"dest", outcome.dest_node_id}});
      break;
    case OutcomeKind::kFailed:
      env.emit("task_failed", job_id,
               {{"error", std::string(errc_name(outcome.code))}, {"message", outcome.message}});
      break;
  }
  {
    std::lock_guard lk(mu_);
    workers_.erase(job_id);
  }
  idle_cv_.notify_all();
}

void Agent::renewal_loop() {
  int interval_ms = std::max(1000, cfg_.lease_secs * 1000 / 6);
  while (!stopping_) {
    std::vector<std::string> jobs;
    {
      std::lock_guard lk(mu_);
      for (const auto& [job_id, _] : workers_) jobs.push_back(job_id);
    }
    const std::string& claim = cfg_.claim_id.empty() ? cfg_.node_id : cfg_.claim_id;
    for (const auto& job_id : jobs) {
      try {
        Message req;
        req.set("service", "renew").set("job_id", job_id).set("node", claim);
        Message resp = rpc(cfg_.scheduler, req, 2000);
        (void)resp;
      } catch (const std::exception&) {
        // Scheduler hiccups surface elsewhere; renewal just tries again.
      }
    }
    for (int waited = 0; waited < interval_ms && !stopping_; waited += 50) sleep_ms(50);
  }
}

}  // namespace navhop
