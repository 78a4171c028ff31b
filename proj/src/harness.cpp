#include "navhop/harness.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <set>

#include "json.hpp"
#include "navhop/agent.hpp"
#include "navhop/blob_store.hpp"
#include "navhop/cmi.hpp"
#include "navhop/colocation.hpp"
#include "navhop/runtime.hpp"
#include "navhop/scheduler.hpp"
#include "navhop/sha256.hpp"
#include "navhop/strings.hpp"

namespace navhop {

// ---- config parsing --------------------------------------------------------

std::vector<ConfigSection> parse_config(std::string_view text) {
  std::vector<ConfigSection> out;
  out.push_back(ConfigSection{});
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        raise(Errc::kMalformedMessage,
              "config line " + std::to_string(line_no) + ": unterminated section header");
      }
      std::string inner = trim(line.substr(1, line.size() - 2));
      auto sp = inner.find(' ');
      ConfigSection sec;
      if (sp == std::string::npos) {
        sec.name = inner;
      } else {
        sec.name = trim(inner.substr(0, sp));
        sec.arg = trim(inner.substr(sp + 1));
      }
      if (sec.name.empty()) {
        raise(Errc::kMalformedMessage,
              "config line " + std::to_string(line_no) + ": empty section name");
      }
      out.push_back(std::move(sec));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      raise(Errc::kMalformedMessage,
            "config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      raise(Errc::kMalformedMessage, "config line " + std::to_string(line_no) + ": empty key");
    }
    out.back().kv[key] = value;
  }
  return out;
}

namespace {

int to_int(const std::map<std::string, std::string>& kv, const std::string& key, int fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  auto v = parse_u64(it->second);
  if (!v) raise(Errc::kMalformedMessage, "config value " + key + " must be a number");
  return static_cast<int>(*v);
}

double to_double(const std::map<std::string, std::string>& kv, const std::string& key,
                 double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  auto v = parse_double(it->second);
  if (!v) raise(Errc::kMalformedMessage, "config value " + key + " must be a number");
  return *v;
}

std::uint64_t now_ms() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::steady_clock::now().time_since_epoch())
          .count());
}

}  // namespace

Topology parse_topology(std::string_view text) {
  Topology topo;
  for (const auto& sec : parse_config(text)) {
    if (sec.name.empty()) {
      topo.capacity = to_int(sec.kv, "capacity", topo.capacity);
      topo.grace_ms = to_int(sec.kv, "grace_ms", topo.grace_ms);
      topo.lease_secs = to_int(sec.kv, "lease_secs", topo.lease_secs);
      continue;
    }
    if (sec.name == "node") {
      if (sec.arg.empty()) raise(Errc::kMalformedMessage, "[node] needs a node id");
      TopologyNode node;
      node.node_id = sec.arg;
      auto it = sec.kv.find("apps");
      if (it != sec.kv.end()) {
        for (auto& a : split(it->second, ',')) {
          std::string app = trim(a);
          if (!app.empty()) node.apps.push_back(app);
        }
      }
      topo.nodes.push_back(std::move(node));
      continue;
    }
    raise(Errc::kMalformedMessage, "unknown topology section [" + sec.name + "]");
  }
  if (topo.nodes.empty()) raise(Errc::kMalformedMessage, "topology declares no nodes");
  return topo;
}

Scenario parse_scenario(std::string_view text) {
  Scenario sc;
  for (const auto& sec : parse_config(text)) {
    if (sec.name.empty()) {
      auto it = sec.kv.find("name");
      if (it != sec.kv.end()) sc.name = it->second;
      sc.seed = static_cast<std::uint64_t>(to_int(sec.kv, "seed", static_cast<int>(sc.seed)));
      sc.n_fine = static_cast<std::uint32_t>(to_int(sec.kv, "n_fine", static_cast<int>(sc.n_fine)));
      sc.n_coarse =
          static_cast<std::uint32_t>(to_int(sec.kv, "n_coarse", static_cast<int>(sc.n_coarse)));
      sc.radius = to_double(sec.kv, "radius", sc.radius);
      sc.timeout_ms = to_int(sec.kv, "timeout_ms", sc.timeout_ms);
      continue;
    }
    if (sec.name == "job") {
      if (sec.arg.empty()) raise(Errc::kMalformedMessage, "[job] needs a job id");
      auto it = sec.kv.find("app");
      if (it == sec.kv.end()) raise(Errc::kMalformedMessage, "[job " + sec.arg + "] needs app =");
      sc.jobs.push_back(JobSpec{sec.arg, it->second});
      continue;
    }
    if (sec.name == "kill") {
      KillTrigger k;
      auto opt = [&](const char* key) -> std::optional<std::string> {
        auto it = sec.kv.find(key);
        if (it == sec.kv.end()) return std::nullopt;
        return it->second;
      };
      if (auto v = opt("event")) k.event_type = *v;
      if (auto v = opt("job")) k.job_id = *v;
      if (auto v = opt("source")) k.source = *v;
      if (auto v = opt("stage")) k.attr_eq["stage"] = *v;
      if (auto v = opt("seq")) k.attr_eq["seq"] = *v;
      k.nth = to_int(sec.kv, "nth", 1);
      k.after_ms = to_int(sec.kv, "after_ms", -1);
      if (auto v = opt("target")) k.target = *v;
      if (auto v = opt("mode")) k.mode = *v;
      k.replace = to_int(sec.kv, "replace", 1) != 0;
      if (k.event_type.empty() && k.after_ms < 0) {
        raise(Errc::kMalformedMessage, "[kill] needs event = or after_ms =");
      }
      if (k.mode != "immediate" && k.mode != "notice") {
        raise(Errc::kMalformedMessage, "[kill] mode must be immediate or notice");
      }
      sc.kills.push_back(std::move(k));
      continue;
    }
    raise(Errc::kMalformedMessage, "unknown scenario section [" + sec.name + "]");
  }
  if (sc.jobs.empty()) raise(Errc::kMalformedMessage, "scenario declares no jobs");
  return sc;
}

// ---- processes -------------------------------------------------------------

ChildProcess::ChildProcess(ChildProcess&& o) noexcept
    : pid_(o.pid_), name_(std::move(o.name_)), reaped_(o.reaped_), exit_code_(o.exit_code_) {
  o.pid_ = -1;
  o.reaped_ = true;
}

ChildProcess& ChildProcess::operator=(ChildProcess&& o) noexcept {
  if (this != &o) {
    if (pid_ > 0 && !reaped_) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
    pid_ = o.pid_;
    name_ = std::move(o.name_);
    reaped_ = o.reaped_;
    exit_code_ = o.exit_code_;
    o.pid_ = -1;
    o.reaped_ = true;
  }
  return *this;
}

ChildProcess::~ChildProcess() {
  if (pid_ > 0 && !reaped_) {
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
  }
}

ChildProcess ChildProcess::spawn(const std::string& name, const std::vector<std::string>& argv,
                                 const std::string& stdout_path, const std::string& stderr_path) {
  std::vector<char*> args;
  args.reserve(argv.size() + 1);
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);

  pid_t pid = ::fork();
  if (pid < 0) raise(Errc::kIoError, "fork failed");
  if (pid == 0) {
    int out = ::open(stdout_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    int err = ::open(stderr_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (out >= 0) ::dup2(out, STDOUT_FILENO);
    if (err >= 0) ::dup2(err, STDERR_FILENO);
    ::execv(args[0], args.data());
    ::_exit(127);
  }
  ChildProcess p;
  p.pid_ = pid;
  p.name_ = name;
  return p;
}

namespace {

int decode_wait_status(int status) {
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return -1;
}

}  // namespace

bool ChildProcess::running() {
  if (pid_ <= 0 || reaped_) return false;
  int status = 0;
  pid_t r = ::waitpid(pid_, &status, WNOHANG);
  if (r == pid_) {
    reaped_ = true;
    exit_code_ = decode_wait_status(status);
    return false;
  }
  return r == 0;
}

void ChildProcess::sigkill() {
  if (pid_ > 0 && !reaped_) ::kill(pid_, SIGKILL);
}

bool ChildProcess::wait_exit(int timeout_ms) {
  if (pid_ <= 0 || reaped_) return true;
  std::uint64_t deadline = now_ms() + static_cast<std::uint64_t>(timeout_ms);
  while (now_ms() < deadline) {
    int status = 0;
    pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_) {
      reaped_ = true;
      exit_code_ = decode_wait_status(status);
      return true;
    }
    sleep_ms(10);
  }
  return false;
}

std::uint16_t pick_free_port() {
  RpcServer probe;
  probe.start(HostPort{"127.0.0.1", 0}, [](const Message&) { return ok_response(); });
  std::uint16_t port = probe.port();
  probe.stop();
  return port;
}

void wait_healthy(const HostPort& addr, int timeout_ms) {
  std::uint64_t deadline = now_ms() + static_cast<std::uint64_t>(timeout_ms);
  std::string last_error = "never tried";
  while (now_ms() < deadline) {
    try {
      Message req;
      req.set("service", "health");
      Message resp = rpc(addr, req, 1000);
      ensure_ok(resp);
      return;
    } catch (const std::exception& e) {
      last_error = e.what();
      sleep_ms(40);
    }
  }
  raise(Errc::kNodeUnreachable, "no healthy answer from " + addr.str() + ": " + last_error);
}

// ---- event collection ------------------------------------------------------

void EventCollector::start() {
  t0_ms_ = now_ms();
  server_.start(HostPort{"127.0.0.1", 0},
                [this](const Message& req) { return handle(req); });
}

void EventCollector::stop() { server_.stop(); }

void EventCollector::arm(std::vector<KillTrigger> triggers, KillFn on_kill) {
  std::lock_guard lk(mu_);
  triggers_ = std::move(triggers);
  trigger_hits_.assign(triggers_.size(), 0);
  on_kill_ = std::move(on_kill);
}

std::vector<LoggedEvent> EventCollector::events() const {
  std::lock_guard lk(mu_);
  return log_;
}

void EventCollector::add_local(const Event& ev) {
  std::lock_guard lk(mu_);
  log_.push_back(LoggedEvent{log_.size(), now_ms() - t0_ms_, ev});
}

std::optional<Message> EventCollector::handle(const Message& req) {
  if (req.get("service") != "event") {
    raise(Errc::kMalformedMessage, "collector only accepts events");
  }
  Event ev = event_from_message(req);

  std::optional<KillTrigger> fired;
  KillFn on_kill;
  {
    std::lock_guard lk(mu_);
    log_.push_back(LoggedEvent{log_.size(), now_ms() - t0_ms_, ev});
    for (std::size_t i = 0; i < triggers_.size(); ++i) {
      KillTrigger& t = triggers_[i];
      if (t.event_type.empty() || trigger_hits_[i] >= t.nth) continue;
      if (t.event_type != ev.type) continue;
      if (!t.job_id.empty() && t.job_id != ev.job_id) continue;
      if (!t.source.empty() && t.source != ev.source) continue;
      bool attrs_ok = true;
      for (const auto& [k, v] : t.attr_eq) {
        if (ev.attr(k) != v) {
          attrs_ok = false;
          break;
        }
      }
      if (!attrs_ok) continue;
      if (++trigger_hits_[i] < t.nth) continue;
      fired = t;
      on_kill = on_kill_;
      break;
    }
  }
  if (fired && on_kill) {
    bool ack = on_kill(*fired, ev);
    if (!ack) return std::nullopt;  // leave the sender frozen; it is being killed
  }
  return ok_response();
}

// ---- scenario execution ----------------------------------------------------

namespace {

struct AgentSlot {
  std::string base_id;
  std::string cur_id;
  std::uint16_t port = 0;
  std::vector<std::string> apps;
  int incarnation = 1;
  ChildProcess proc;
  bool down_handled = false;
  bool replace_on_death = true;
};

class ScenarioRunner {
 public:
  ScenarioRunner(const Topology& topo, const Scenario& sc, const HarnessPaths& paths)
      : topo_(topo), sc_(sc), paths_(paths), store_(paths.workdir + "/store") {}

  RunReport run();

 private:
  void stage_inputs();
  void spawn_scheduler();
  void spawn_agent(AgentSlot& slot);
  std::vector<std::string> agent_argv(const AgentSlot& slot) const;
  Message sched(const Message& req);
  void add_jobs();
  bool fire_kill(const KillTrigger& trigger, const Event& cause);
  void reap_and_replace();
  void fire_timer_kills(std::uint64_t started);
  bool dispatch_round();
  bool all_finished();
  void teardown();
  RunReport build_report(bool timed_out);
  AgentSlot* slot_for(const std::string& node_id);

  const Topology& topo_;
  const Scenario& sc_;
  HarnessPaths paths_;
  DirStore store_;
  EventCollector collector_;
  std::mutex slots_mu_;
  std::vector<AgentSlot> slots_;
  ChildProcess sched_proc_;
  HostPort sched_addr_;
  std::uint16_t sched_port_ = 0;
  std::vector<KillTrigger> timer_kills_;
  std::vector<bool> timer_fired_;
  std::vector<std::string> notes_;
};

Message ScenarioRunner::sched(const Message& req) {
  Message resp = rpc(sched_addr_, req, 8000);
  ensure_ok(resp);
  return resp;
}

void ScenarioRunner::stage_inputs() {
  for (const auto& job : sc_.jobs) {
    if (job.app == "slowloop") continue;
    auto [fine, coarse] = gen_granules(sc_.seed, sc_.n_fine, sc_.n_coarse);
    store_.put_atomic(input_key(job.job_id, "fine.txt"), encode_granule(fine));
    store_.put_atomic(input_key(job.job_id, "coarse.txt"), encode_granule(coarse));
    store_.put_atomic(input_key(job.job_id, "params.txt"),
                      "radius=" + format_double(sc_.radius) + "\n");
  }
}

void ScenarioRunner::spawn_scheduler() {
  std::vector<std::string> argv = {
      paths_.scheduler_bin,
      "--listen", "127.0.0.1:" + std::to_string(sched_port_),
      "--journal", paths_.workdir + "/journal.log",
      "--lease-secs", std::to_string(topo_.lease_secs),
      "--store-root", paths_.workdir + "/store",
      "--events", collector_.address().str(),
  };
  sched_proc_ = ChildProcess::spawn("scheduler", argv, paths_.workdir + "/logs/scheduler.out",
                                    paths_.workdir + "/logs/scheduler.err");
  wait_healthy(sched_addr_, 8000);
}

std::vector<std::string> ScenarioRunner::agent_argv(const AgentSlot& slot) const {
  std::string peers;
  for (const auto& other : slots_) {
    if (other.base_id == slot.base_id) continue;
    if (!peers.empty()) peers += ',';
    peers += other.base_id + "=127.0.0.1:" + std::to_string(other.port);
  }
  std::string apps;
  for (const auto& a : slot.apps) {
    if (!apps.empty()) apps += ',';
    apps += a;
  }
  std::vector<std::string> argv = {
      paths_.agent_bin,
      "--node-id", slot.cur_id,
      "--claim-id", slot.base_id,
      "--listen", "127.0.0.1:" + std::to_string(slot.port),
      "--store-root", paths_.workdir + "/store",
      "--scheduler", sched_addr_.str(),
      "--apps", apps,
      "--capacity", std::to_string(topo_.capacity),
      "--grace-ms", std::to_string(topo_.grace_ms),
      "--lease-secs", std::to_string(topo_.lease_secs),
      "--events", collector_.address().str(),
  };
  if (!peers.empty()) {
    argv.push_back("--peers");
    argv.push_back(peers);
  }
  return argv;
}

void ScenarioRunner::spawn_agent(AgentSlot& slot) {
  slot.proc = ChildProcess::spawn(slot.cur_id, agent_argv(slot),
                                  paths_.workdir + "/logs/" + slot.cur_id + ".out",
                                  paths_.workdir + "/logs/" + slot.cur_id + ".err");
  slot.down_handled = false;
  wait_healthy(HostPort{"127.0.0.1", slot.port}, 8000);
}

void ScenarioRunner::add_jobs() {
  for (const auto& job : sc_.jobs) {
    Message req;
    req.set("service", "add_job").set("job_id", job.job_id).set("app_name", job.app);
    if (job.app != "slowloop") {
      req.set("inputs.0", input_key(job.job_id, "fine.txt").full());
      req.set("inputs.1", input_key(job.job_id, "coarse.txt").full());
      req.set("inputs.2", input_key(job.job_id, "params.txt").full());
    }
    sched(req);
  }
}

AgentSlot* ScenarioRunner::slot_for(const std::string& node_id) {
  for (auto& slot : slots_) {
    if (slot.cur_id == node_id || slot.base_id == node_id) return &slot;
  }
  return nullptr;
}

// Runs on a collector thread while the reporting process sits frozen waiting
// for its ack.
bool ScenarioRunner::fire_kill(const KillTrigger& trigger, const Event& cause) {
  std::lock_guard lk(slots_mu_);
  std::string target = trigger.target == "emitter" ? cause.source : trigger.target;
  collector_.add_local(Event{"harness",
                             "kill_fired",
                             cause.job_id,
                             {{"target", target},
                              {"mode", trigger.mode},
                              {"cause", cause.type},
                              {"cause_source", cause.source}}});
  AgentSlot* slot = slot_for(target);
  if (slot == nullptr) {
    notes_.push_back("kill target " + target + " not found");
    return true;
  }
  slot->replace_on_death = trigger.replace;
  if (trigger.mode == "immediate") {
    slot->proc.sigkill();
    // Reap before the withheld ack's connection drops, so the victim can
    // never observe the close and move past its report.
    slot->proc.wait_exit(3000);
    return false;  // no ack: the sender died mid-wait
  }
  // Notice: deliver the preemption warning, let the agent drain.
  try {
    Message req;
    req.set("service", "kill").set("mode", "notice");
    fire_and_forget(HostPort{"127.0.0.1", slot->port}, req);
  } catch (const std::exception&) {
    slot->proc.sigkill();
  }
  return true;
}

void ScenarioRunner::reap_and_replace() {
  // Holding the lock across the scheduler calls is safe: the scheduler's own
  // event acks run on independent collector threads, so nothing here waits on
  // anything that waits on this lock.
  std::lock_guard lk(slots_mu_);
  for (auto& slot : slots_) {
    if (slot.down_handled || slot.proc.running()) continue;
    slot.down_handled = true;
    collector_.add_local(Event{"harness", "process_down", "", {{"node", slot.cur_id}}});
    // Release claims held under the replacement id and under the base id;
    // either may be the one on record depending on when the process died.
    for (const auto& id : {slot.cur_id, slot.base_id}) {
      try {
        Message req;
        req.set("service", "requeue_dead").set("node", id);
        sched(req);
      } catch (const std::exception& e) {
        notes_.push_back("requeue_dead " + id + " failed: " + e.what());
      }
      if (slot.cur_id == slot.base_id) break;
    }
    if (!slot.replace_on_death) continue;
    slot.incarnation += 1;
    slot.cur_id = slot.base_id + "." + std::to_string(slot.incarnation);
    try {
      spawn_agent(slot);
      notes_.push_back("replacement agent " + slot.cur_id + " on port " +
                       std::to_string(slot.port));
    } catch (const std::exception& e) {
      notes_.push_back("replacement " + slot.cur_id + " failed to start: " + e.what());
    }
  }
}

void ScenarioRunner::fire_timer_kills(std::uint64_t started) {
  std::uint64_t elapsed = now_ms() - started;
  for (std::size_t i = 0; i < timer_kills_.size(); ++i) {
    if (timer_fired_[i]) continue;
    const KillTrigger& t = timer_kills_[i];
    if (elapsed < static_cast<std::uint64_t>(t.after_ms)) continue;
    timer_fired_[i] = true;
    std::lock_guard lk(slots_mu_);
    std::string target = t.target;
    collector_.add_local(Event{"harness",
                               "kill_fired",
                               "",
                               {{"target", target}, {"mode", t.mode}, {"cause", "timer"}}});
    AgentSlot* slot = slot_for(target);
    if (slot == nullptr) {
      notes_.push_back("timer kill target " + target + " not found");
      continue;
    }
    slot->replace_on_death = t.replace;
    try {
      Message req;
      req.set("service", "kill").set("mode", t.mode);
      fire_and_forget(HostPort{"127.0.0.1", slot->port}, req);
    } catch (const std::exception&) {
      slot->proc.sigkill();
    }
    if (t.mode == "immediate") {
      // The service exits the process itself; make sure it cannot linger.
      if (!slot->proc.wait_exit(1000)) slot->proc.sigkill();
    }
  }
}

bool ScenarioRunner::all_finished() {
  Message req;
  req.set("service", "list_jobs");
  Message resp = sched(req);
  std::uint64_t count = resp.get_u64("count");
  if (count < sc_.jobs.size()) return false;
  for (std::uint64_t i = 0; i < count; ++i) {
    if (resp.get("jobs." + std::to_string(i) + ".status") != "finished") return false;
  }
  return true;
}

bool ScenarioRunner::dispatch_round() {
  bool dispatched = false;
  for (std::size_t si = 0; si < slots_.size(); ++si) {
    std::string cur_id, base_id;
    std::uint16_t port = 0;
    {
      std::lock_guard lk(slots_mu_);
      AgentSlot& slot = slots_[si];
      if (slot.down_handled || !slot.proc.running()) continue;
      cur_id = slot.cur_id;
      base_id = slot.base_id;
      port = slot.port;
    }
    HostPort addr{"127.0.0.1", port};

    int free_slots = 0;
    try {
      Message req;
      req.set("service", "health");
      Message health = rpc(addr, req, 2000);
      ensure_ok(health);
      if (health.has("draining")) continue;
      free_slots = static_cast<int>(health.get_u64("capacity")) -
                   static_cast<int>(health.get_u64("running_count"));
    } catch (const std::exception&) {
      continue;  // likely mid-kill; the reaper deals with it
    }

    for (; free_slots > 0; --free_slots) {
      JobRecord rec;
      try {
        Message req;
        req.set("service", "get_job").set("node", base_id);
        Message resp = sched(req);
        if (resp.get("found") != "1") break;
        rec = record_from_message(resp);
      } catch (const std::exception& e) {
        notes_.push_back("claim for " + base_id + " failed: " + e.what());
        break;
      }

      try {
        // A manifest newer than the scheduler's record means a crash landed
        // between manifest promotion and the status publish; finish that
        // publish before resuming so the claim and sequence line up.
        BlobKey mkey = manifest_key(rec.job_id);
        if (store_.exists(mkey)) {
          RestartManifest manifest = decode_manifest(store_.get(mkey));
          if (manifest.sequence > rec.ckpt_sequence) {
            Message pub;
            pub.set("service", "publish_job")
                .set("job_id", rec.job_id)
                .set("status", "ckpt")
                .set_u64("sequence", manifest.sequence)
                .set("node", base_id)
                .set("keys.0", mkey.full());
            sched(pub);
            rec.status = JobStatus::kCkpt;
            collector_.add_local(Event{"harness",
                                       "orphan_ckpt_adopted",
                                       rec.job_id,
                                       {{"seq", std::to_string(manifest.sequence)},
                                        {"node", base_id}}});
          }
        }

        Message req;
        if (rec.status == JobStatus::kNew) {
          req.set("service", "start").set("job_id", rec.job_id).set("app_name", rec.app_name);
        } else {
          req.set("service", "hop")
              .set("job_id", rec.job_id)
              .set("manifest_key", manifest_key(rec.job_id).full())
              .set("source_node", "harness");
        }
        Message resp = rpc(addr, req, 10000);
        ensure_ok(resp);
        dispatched = true;
      } catch (const std::exception& e) {
        notes_.push_back("dispatch of job " + rec.job_id + " to " + cur_id +
                         " failed: " + e.what());
        break;
      }
    }
  }
  return dispatched;
}

void ScenarioRunner::teardown() {
  std::lock_guard lk(slots_mu_);
  for (auto& slot : slots_) slot.proc.sigkill();
  sched_proc_.sigkill();
  for (auto& slot : slots_) slot.proc.wait_exit(3000);
  sched_proc_.wait_exit(3000);
}

RunReport ScenarioRunner::build_report(bool timed_out) {
  RunReport report;
  report.scenario_name = sc_.name;
  report.deadline_exceeded = timed_out;
  report.events = collector_.events();
  report.notes = notes_;
  report.app_stages["colocation"] = build_publish_variant().stages.size();
  report.app_stages["colocation_hop"] =
      build_hop_variant(NodeDescriptor{"none", {}}).stages.size();
  report.app_stages["slowloop"] = build_slowloop_app().stages.size();

  std::map<std::string, JobRecord> finals;
  try {
    for (const auto& job : sc_.jobs) {
      Message req;
      req.set("service", "get_job").set("job_id", job.job_id);
      finals[job.job_id] = record_from_message(sched(req));
    }
  } catch (const std::exception& e) {
    notes_.push_back(std::string("final status poll failed: ") + e.what());
    report.notes = notes_;
  }

  for (const auto& job : sc_.jobs) {
    JobReport jr;
    jr.app = job.app;
    jr.attempts.assign(report.app_stages.count(job.app) ? report.app_stages[job.app] : 0, 0);
    auto fin = finals.find(job.job_id);
    if (fin != finals.end()) {
      jr.status = job_status_name(fin->second.status);
      if (!fin->second.product_keys.empty()) {
        jr.product_key = fin->second.product_keys[0];
        try {
          jr.product = store_.get(BlobKey::parse(jr.product_key));
        } catch (const std::exception&) {
        }
      }
    }
    std::uint64_t first_ms = 0, last_ms = 0;
    bool seen = false;
    for (const auto& le : report.events) {
      if (le.ev.job_id != job.job_id) continue;
      if (!seen) first_ms = le.at_ms;
      last_ms = le.at_ms;
      seen = true;
      if (le.ev.type == "stage_start") {
        auto stage = parse_u64(le.ev.attr("stage"));
        if (stage && *stage < jr.attempts.size()) jr.attempts[*stage] += 1;
      } else if (le.ev.type == "cmi_promoted") {
        jr.cmis_emitted += 1;
        if (auto b = parse_u64(le.ev.attr("bytes"))) jr.bytes_checkpointed += *b;
      }
    }
    jr.wall_ms = seen ? last_ms - first_ms : 0;
    report.jobs[job.job_id] = std::move(jr);
  }

  int total_stages = 0;
  int reexecuted = 0;
  for (const auto& [_, jr] : report.jobs) {
    for (int a : jr.attempts) {
      total_stages += 1;
      if (a > 1) reexecuted += a - 1;
    }
  }
  report.recompute_ratio = total_stages == 0 ? 0.0 : double(reexecuted) / double(total_stages);
  return report;
}

RunReport ScenarioRunner::run() {
  std::error_code ec;
  std::filesystem::create_directories(paths_.workdir + "/logs", ec);
  if (ec) raise(Errc::kIoError, "cannot create workdir " + paths_.workdir);

  collector_.start();
  stage_inputs();

  sched_port_ = pick_free_port();
  sched_addr_ = HostPort{"127.0.0.1", sched_port_};

  for (const auto& node : topo_.nodes) {
    AgentSlot slot;
    slot.base_id = node.node_id;
    slot.cur_id = node.node_id;
    slot.port = pick_free_port();
    slot.apps = node.apps;
    slots_.push_back(std::move(slot));
  }

  std::vector<KillTrigger> event_kills;
  for (const auto& k : sc_.kills) {
    if (k.after_ms >= 0) {
      timer_kills_.push_back(k);
    } else {
      event_kills.push_back(k);
    }
  }
  timer_fired_.assign(timer_kills_.size(), false);
  collector_.arm(event_kills,
                 [this](const KillTrigger& t, const Event& cause) { return fire_kill(t, cause); });

  bool timed_out = false;
  try {
    spawn_scheduler();
    add_jobs();
    for (auto& slot : slots_) spawn_agent(slot);

    std::uint64_t started = now_ms();
    std::uint64_t deadline = started + static_cast<std::uint64_t>(sc_.timeout_ms);
    while (true) {
      if (now_ms() > deadline) {
        timed_out = true;
        break;
      }
      reap_and_replace();
      fire_timer_kills(started);
      if (all_finished()) break;
      dispatch_round();
      sleep_ms(40);
    }
  } catch (const std::exception& e) {
    notes_.push_back(std::string("scenario aborted: ") + e.what());
    timed_out = true;
  }

  RunReport report = build_report(timed_out);
  teardown();
  collector_.stop();
  return report;
}

}  // namespace

RunReport run_scenario(const Topology& topology, const Scenario& scenario,
                       const HarnessPaths& paths) {
  ScenarioRunner runner(topology, scenario, paths);
  return runner.run();
}

// ---- verification ----------------------------------------------------------

namespace {

bool is_stage_event(const std::string& type) {
  static const std::set<std::string> kinds = {
      "stage_start", "stage_mid",         "stage_end",        "ckpt_begin",
      "cmi_promoted", "manifest_promoted", "ckpt_published",  "hop_request",
      "hop_acked",    "finished_published", "cmi_put_mid",
  };
  return kinds.count(type) > 0;
}

// "A.2" executes claims held as "A".
bool same_claim_identity(const std::string& executor, const std::string& claimant) {
  if (executor == claimant) return true;
  return executor.size() > claimant.size() + 1 && executor.rfind(claimant + ".", 0) == 0;
}

}  // namespace

std::vector<std::string> replay_verify(const RunReport& report,
                                       const std::map<std::string, Bytes>& baseline_products) {
  std::vector<std::string> v;
  auto fail = [&v](std::string msg) { v.push_back(std::move(msg)); };

  if (report.deadline_exceeded) fail("scenario hit its deadline before all jobs finished");

  bool any_kill = false;
  for (const auto& le : report.events) {
    if (le.ev.type == "kill_fired") any_kill = true;
  }

  for (const auto& [job_id, jr] : report.jobs) {
    if (jr.status != "finished") {
      fail("job " + job_id + " ended as '" + jr.status + "', not finished");
    }
    for (std::size_t i = 0; i < jr.attempts.size(); ++i) {
      if (jr.status == "finished" && jr.attempts[i] < 1) {
        fail("job " + job_id + " stage " + std::to_string(i) + " never executed");
      }
      if (!any_kill && jr.attempts[i] > 1) {
        fail("kill-free run re-executed job " + job_id + " stage " + std::to_string(i));
      }
    }
  }

  for (const auto& [job_id, baseline] : baseline_products) {
    auto it = report.jobs.find(job_id);
    if (it == report.jobs.end()) {
      fail("baseline names job " + job_id + " absent from the run");
      continue;
    }
    if (it->second.product != baseline) {
      fail("job " + job_id + " product differs from baseline (" +
           std::to_string(it->second.product.size()) + " vs " +
           std::to_string(baseline.size()) + " bytes)");
    }
  }

  // Per-job scan over the merged log. Two roles can be live at once during a
  // hop handoff: the arriving executor (task_accepted at the destination
  // happens inside the hop service, before the source hears the ack) and the
  // departing one, which may only still report hop_acked, task_migrated, or a
  // failure if the handoff collapsed under it.
  struct JobScan {
    std::string executor;   // authoritative incarnation, "" if none
    std::string departing;  // previous executor draining a handoff
    std::string hop_dest;   // dest named by the executor's last hop_request
    std::uint32_t next_stage = 0;
    std::uint64_t last_cmi_seq = 0;
    std::uint64_t last_manifest_seq = 0;
    std::uint32_t last_manifest_stage = 0;
    bool have_manifest = false;
    std::uint64_t sched_seq = 0;   // scheduler's recorded ckpt sequence
    std::uint64_t worker_seq = 0;  // worker's view of the same stream
    std::string claimant;
    std::string claim_from;  // previous holder while a hop claim is in transit
  };
  std::map<std::string, JobScan> scans;

  for (const auto& le : report.events) {
    const Event& ev = le.ev;
    const std::string& job = ev.job_id;
    std::string at = " (event " + std::to_string(le.index) + ")";

    if (ev.source == "harness" && ev.type == "process_down") {
      const std::string& node = ev.attr("node");
      for (auto& [j, scan] : scans) {
        if (scan.executor == node) scan.executor.clear();
        if (scan.departing == node) scan.departing.clear();
      }
      continue;
    }
    if (job.empty() || ev.source == "harness") continue;
    JobScan& scan = scans[job];

    if (ev.source == "scheduler") {
      if (ev.type == "job_claimed") {
        scan.claimant = ev.attr("node");
        scan.claim_from.clear();
      } else if (ev.type == "ckpt_recorded") {
        std::uint64_t seq = parse_u64(ev.attr("seq")).value_or(0);
        if (seq <= scan.sched_seq) {
          fail("job " + job + ": scheduler recorded non-increasing ckpt seq " +
               std::to_string(seq) + at);
        }
        scan.sched_seq = seq;
        scan.claimant = ev.attr("node");
        scan.claim_from = ev.attr("from");
      } else if (ev.type == "claim_released" || ev.type == "finished_recorded") {
        scan.claimant.clear();
        scan.claim_from.clear();
      }
      continue;
    }

    // A dead claimant's events pass through same_claim_identity against
    // either the current holder or, during a hop, the holder it came from.
    auto claim_allows = [&scan](const std::string& source) {
      if (scan.claimant.empty()) return true;
      if (same_claim_identity(source, scan.claimant)) return true;
      return !scan.claim_from.empty() && same_claim_identity(source, scan.claim_from);
    };

    if (ev.type == "task_accepted") {
      std::uint64_t seq = parse_u64(ev.attr("seq")).value_or(0);
      std::uint32_t stage = static_cast<std::uint32_t>(parse_u64(ev.attr("stage")).value_or(0));
      if (!scan.departing.empty()) {
        fail("job " + job + ": task_accepted from " + ev.source + " while " + scan.departing +
             " is still mid-handoff" + at);
      }
      if (ev.attr("via") == "hop") {
        if (!scan.executor.empty()) {
          // Legitimate only as the receiving side of the executor's hop.
          if (scan.hop_dest.empty() || !same_claim_identity(ev.source, scan.hop_dest)) {
            fail("job " + job + ": task_accepted from " + ev.source + " while " + scan.executor +
                 " still runs it" + at);
          }
          scan.departing = scan.executor;
        }
        if (!scan.have_manifest || scan.last_manifest_seq != seq ||
            scan.last_manifest_stage != stage) {
          fail("job " + job + ": resume at stage " + std::to_string(stage) + " seq " +
               std::to_string(seq) + " does not match the latest promoted manifest (stage " +
               std::to_string(scan.last_manifest_stage) + " seq " +
               std::to_string(scan.last_manifest_seq) + ")" + at);
        }
      } else {
        if (!scan.executor.empty()) {
          fail("job " + job + ": task_accepted from " + ev.source + " while " + scan.executor +
               " still runs it" + at);
        }
        if (scan.have_manifest) {
          fail("job " + job + ": fresh start ignores a promoted checkpoint (seq " +
               std::to_string(scan.last_manifest_seq) + ")" + at);
        }
        if (stage != 0 || seq != 0) {
          fail("job " + job + ": fresh start claims stage " + std::to_string(stage) + at);
        }
      }
      if (!claim_allows(ev.source)) {
        fail("job " + job + ": " + ev.source + " runs it while the claim belongs to " +
             scan.claimant + at);
      }
      scan.executor = ev.source;
      scan.hop_dest.clear();
      scan.next_stage = stage;
      continue;
    }

    if (is_stage_event(ev.type)) {
      if (ev.source == scan.departing) {
        if (ev.type != "hop_acked") {
          fail("job " + job + ": " + ev.type + " from " + ev.source + " after handing the task off" +
               at);
        }
        continue;
      }
      if (scan.executor.empty() || scan.executor != ev.source) {
        fail("job " + job + ": " + ev.type + " from " + ev.source +
             (scan.executor.empty() ? " outside any incarnation"
                                    : " but " + scan.executor + " is the executor") +
             at);
        continue;
      }
      if (!claim_allows(ev.source)) {
        fail("job " + job + ": " + ev.source + " executes while the claim belongs to " +
             scan.claimant + at);
      }
      if (ev.type == "stage_start") {
        std::uint32_t stage = static_cast<std::uint32_t>(parse_u64(ev.attr("stage")).value_or(0));
        if (stage != scan.next_stage) {
          fail("job " + job + ": stage " + std::to_string(stage) +
               " started out of order, expected " + std::to_string(scan.next_stage) + at);
        }
        scan.next_stage = stage + 1;
      } else if (ev.type == "cmi_promoted") {
        std::uint64_t seq = parse_u64(ev.attr("seq")).value_or(0);
        if (seq < scan.last_cmi_seq) {
          fail("job " + job + ": checkpoint image seq went backwards to " + std::to_string(seq) +
               at);
        }
        scan.last_cmi_seq = seq;
      } else if (ev.type == "manifest_promoted") {
        std::uint64_t seq = parse_u64(ev.attr("seq")).value_or(0);
        if (scan.have_manifest && seq <= scan.last_manifest_seq) {
          fail("job " + job + ": manifest seq did not advance past " +
               std::to_string(scan.last_manifest_seq) + at);
        }
        scan.have_manifest = true;
        scan.last_manifest_seq = seq;
        scan.last_manifest_stage =
            static_cast<std::uint32_t>(parse_u64(ev.attr("stage")).value_or(0));
      } else if (ev.type == "ckpt_published") {
        std::uint64_t seq = parse_u64(ev.attr("seq")).value_or(0);
        if (seq <= scan.worker_seq) {
          fail("job " + job + ": published ckpt seq did not advance past " +
               std::to_string(scan.worker_seq) + at);
        }
        scan.worker_seq = seq;
      } else if (ev.type == "hop_request") {
        scan.hop_dest = ev.attr("dest");
      }
      continue;
    }

    if (ev.type == "task_migrated" || ev.type == "task_completed" || ev.type == "task_failed") {
      if (ev.source == scan.departing) {
        if (ev.type == "task_completed") {
          fail("job " + job + ": task_completed from " + ev.source + " after handing the task off" +
               at);
        }
        scan.departing.clear();
      } else if (ev.source == scan.executor) {
        scan.executor.clear();
      } else {
        fail("job " + job + ": " + ev.type + " from " + ev.source + " without an open incarnation" +
             at);
      }
      continue;
    }
  }

  // Post-hop silence is enforced by the role checks above: once a handoff
  // opens, the departing side may only ack and close; once closed, any event
  // from it lands in the "outside any incarnation" branch.
  return v;
}

std::string report_to_json(const RunReport& report, const std::vector<std::string>& violations) {
  nlohmann::json j;
  j["scenario"] = report.scenario_name;
  j["result"] = violations.empty() ? "pass" : "fail";
  j["deadline_exceeded"] = report.deadline_exceeded;
  j["recompute_ratio"] = report.recompute_ratio;
  j["violations"] = violations;
  j["notes"] = report.notes;

  nlohmann::json jobs = nlohmann::json::object();
  for (const auto& [job_id, jr] : report.jobs) {
    nlohmann::json jj;
    jj["status"] = jr.status;
    jj["app"] = jr.app;
    jj["attempts"] = jr.attempts;
    jj["cmis_emitted"] = jr.cmis_emitted;
    jj["bytes_checkpointed"] = jr.bytes_checkpointed;
    jj["wall_ms"] = jr.wall_ms;
    jj["product_key"] = jr.product_key;
    jj["product_bytes"] = jr.product.size();
    jj["product_sha256"] = jr.product.empty() ? "" : sha256_hex(jr.product);
    jobs[job_id] = std::move(jj);
  }
  j["jobs"] = std::move(jobs);

  nlohmann::json events = nlohmann::json::array();
  for (const auto& le : report.events) {
    nlohmann::json je;
    je["i"] = le.index;
    je["ms"] = le.at_ms;
    je["source"] = le.ev.source;
    je["type"] = le.ev.type;
    if (!le.ev.job_id.empty()) je["job"] = le.ev.job_id;
    for (const auto& [k, val] : le.ev.attrs) je[k] = val;
    events.push_back(std::move(je));
  }
  j["events"] = std::move(events);
  return j.dump(2) + "\n";
}

}  // namespace navhop
