#include <atomic>

#include "doctest.h"
#include "json.hpp"
#include "navhop/harness.hpp"
#include "navhop/sha256.hpp"
#include "test_util.hpp"

using namespace navhop;
using navhop::test::code_of;

TEST_CASE("config dialect: sections, comments, trimming") {
  auto secs = parse_config(
      "# preamble\n"
      "capacity = 3\n"
      "\n"
      "[node A]\n"
      "apps = colocation, slowloop\n"
      "[node B]\n"
      "  apps=colocation  \n"
      "[kill]\n"
      "event = stage_start\n");
  REQUIRE(secs.size() == 4);
  CHECK(secs[0].name.empty());
  CHECK(secs[0].kv.at("capacity") == "3");
  CHECK(secs[1].name == "node");
  CHECK(secs[1].arg == "A");
  CHECK(secs[1].kv.at("apps") == "colocation, slowloop");
  CHECK(secs[2].arg == "B");
  CHECK(secs[2].kv.at("apps") == "colocation");
  CHECK(secs[3].name == "kill");
  CHECK(secs[3].kv.at("event") == "stage_start");

  CHECK(code_of([] { parse_config("[node A\n"); }) == Errc::kMalformedMessage);
  CHECK(code_of([] { parse_config("[ ]\n"); }) == Errc::kMalformedMessage);
  CHECK(code_of([] { parse_config("keyvalue\n"); }) == Errc::kMalformedMessage);
  CHECK(code_of([] { parse_config("= value\n"); }) == Errc::kMalformedMessage);

  // Errors carry the offending line number.
  try {
    parse_config("a = 1\nb = 2\nbroken line\n");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("topology files declare nodes and cluster-wide knobs") {
  Topology topo = parse_topology(
      "capacity = 4\n"
      "grace_ms = 250\n"
      "lease_secs = 8\n"
      "[node A]\n"
      "apps = colocation, colocation_hop\n"
      "[node B]\n"
      "apps = slowloop\n");
  CHECK(topo.capacity == 4);
  CHECK(topo.grace_ms == 250);
  CHECK(topo.lease_secs == 8);
  REQUIRE(topo.nodes.size() == 2);
  CHECK(topo.nodes[0].node_id == "A");
  CHECK(topo.nodes[0].apps == std::vector<std::string>{"colocation", "colocation_hop"});
  CHECK(topo.nodes[1].apps == std::vector<std::string>{"slowloop"});

  Topology defaults = parse_topology("[node solo]\n");
  CHECK(defaults.capacity == 2);
  CHECK(defaults.grace_ms == 500);
  CHECK(defaults.lease_secs == 10);
  CHECK(defaults.nodes[0].apps.empty());

  CHECK(code_of([] { parse_topology("capacity = 2\n"); }) == Errc::kMalformedMessage);
  CHECK(code_of([] { parse_topology("[node]\n"); }) == Errc::kMalformedMessage);
  CHECK(code_of([] { parse_topology("[swarm A]\n"); }) == Errc::kMalformedMessage);
  CHECK(code_of([] { parse_topology("capacity = many\n[node A]\n"); }) ==
        Errc::kMalformedMessage);
}

TEST_CASE("scenario files declare jobs and kill points") {
  Scenario sc = parse_scenario(
      "name = demo\n"
      "seed = 11\n"
      "n_fine = 50\n"
      "n_coarse = 12\n"
      "radius = 0.1\n"
      "timeout_ms = 30000\n"
      "[job 1]\n"
      "app = colocation\n"
      "[job 2]\n"
      "app = slowloop\n"
      "[kill]\n"
      "event = stage_start\n"
      "job = 1\n"
      "stage = 4\n"
      "nth = 2\n"
      "mode = notice\n"
      "replace = 0\n"
      "[kill]\n"
      "after_ms = 1500\n"
      "target = B\n");
  CHECK(sc.name == "demo");
  CHECK(sc.seed == 11);
  CHECK(sc.n_fine == 50);
  CHECK(sc.n_coarse == 12);
  CHECK(sc.radius == 0.1);
  CHECK(sc.timeout_ms == 30000);
  REQUIRE(sc.jobs.size() == 2);
  CHECK(sc.jobs[0].job_id == "1");
  CHECK(sc.jobs[0].app == "colocation");
  REQUIRE(sc.kills.size() == 2);
  CHECK(sc.kills[0].event_type == "stage_start");
  CHECK(sc.kills[0].job_id == "1");
  CHECK(sc.kills[0].attr_eq.at("stage") == "4");
  CHECK(sc.kills[0].nth == 2);
  CHECK(sc.kills[0].mode == "notice");
  CHECK(!sc.kills[0].replace);
  CHECK(sc.kills[0].target == "emitter");
  CHECK(sc.kills[1].after_ms == 1500);
  CHECK(sc.kills[1].target == "B");
  CHECK(sc.kills[1].mode == "immediate");
  CHECK(sc.kills[1].replace);

  Scenario defaults = parse_scenario("[job 1]\napp = colocation\n");
  CHECK(defaults.seed == 7);
  CHECK(defaults.n_fine == 100);
  CHECK(defaults.n_coarse == 20);
  CHECK(defaults.radius == 0.05);
  CHECK(defaults.timeout_ms == 60000);
  CHECK(defaults.kills.empty());

  CHECK(code_of([] { parse_scenario("name = empty\n"); }) == Errc::kMalformedMessage);
  CHECK(code_of([] { parse_scenario("[job 1]\n"); }) == Errc::kMalformedMessage);
  CHECK(code_of([] { parse_scenario("[job 1]\napp = x\n[kill]\nmode = notice\n"); }) ==
        Errc::kMalformedMessage);
  CHECK(code_of([] {
          parse_scenario("[job 1]\napp = x\n[kill]\nevent = stage_start\nmode = casually\n");
        }) == Errc::kMalformedMessage);
}

TEST_CASE("the collector logs every event and fires the nth matching trigger") {
  EventCollector collector;
  collector.start();

  std::atomic<int> kills{0};
  std::string killed_source;
  KillTrigger trig;
  trig.event_type = "stage_start";
  trig.job_id = "1";
  trig.attr_eq["stage"] = "2";
  trig.nth = 2;
  collector.arm({trig}, [&](const KillTrigger&, const Event& cause) {
    ++kills;
    killed_source = cause.source;
    return true;  // keep acking so the test can continue
  });

  auto send = [&](const Event& ev) {
    return rpc(collector.address(), event_to_message(ev), 2000);
  };

  ensure_ok(send(Event{"A", "stage_start", "1", {{"stage", "1"}}}));   // wrong stage
  ensure_ok(send(Event{"A", "stage_start", "2", {{"stage", "2"}}}));   // wrong job
  ensure_ok(send(Event{"A", "stage_start", "1", {{"stage", "2"}}}));   // 1st match
  CHECK(kills.load() == 0);
  ensure_ok(send(Event{"B", "stage_start", "1", {{"stage", "2"}}}));   // 2nd match: fires
  CHECK(kills.load() == 1);
  CHECK(killed_source == "B");
  ensure_ok(send(Event{"B", "stage_start", "1", {{"stage", "2"}}}));   // spent trigger
  CHECK(kills.load() == 1);

  collector.add_local(Event{"harness", "kill_fired", "1", {{"target", "B"}}});
  auto log = collector.events();
  REQUIRE(log.size() == 6);
  for (std::size_t i = 0; i < log.size(); ++i) CHECK(log[i].index == i);
  CHECK(log[3].ev.source == "B");
  CHECK(log[5].ev.type == "kill_fired");

  // Non-event traffic is refused, not logged.
  Message junk;
  junk.set("service", "list_jobs");
  Message resp = rpc(collector.address(), junk, 2000);
  CHECK(code_of([&] { ensure_ok(resp); }) == Errc::kMalformedMessage);
  CHECK(collector.events().size() == 6);

  collector.stop();
}

TEST_CASE("a withheld ack freezes the sender at the event") {
  EventCollector collector;
  collector.start();
  KillTrigger trig;
  trig.event_type = "cmi_put_mid";
  collector.arm({trig}, [](const KillTrigger&, const Event&) { return false; });

  Message ev = event_to_message(Event{"A", "cmi_put_mid", "1", {{"seq", "1"}}});
  CHECK(code_of([&] { rpc(collector.address(), ev, 2000); }) == Errc::kIoError);
  // The event itself still made the log before the connection dropped.
  REQUIRE(collector.events().size() == 1);
  CHECK(collector.events()[0].ev.type == "cmi_put_mid");
  collector.stop();
}

// ---- replay verification on synthetic logs ---------------------------------

namespace {

struct LogBuilder {
  RunReport report;
  std::uint64_t idx = 0;

  LogBuilder() {
    report.scenario_name = "synthetic";
    report.app_stages["mini"] = 2;
  }

  void ev(const std::string& source, const std::string& type, const std::string& job,
          std::map<std::string, std::string> attrs = {}) {
    report.events.push_back(
        LoggedEvent{idx, idx * 10, Event{source, type, job, std::move(attrs)}});
    ++idx;
  }

  void finish_job(const std::string& job_id, std::vector<int> attempts, Bytes product = "p") {
    JobReport jr;
    jr.status = "finished";
    jr.app = "mini";
    jr.attempts = std::move(attempts);
    jr.product = std::move(product);
    jr.product_key = "job-" + job_id + "/product/out.txt";
    report.jobs[job_id] = std::move(jr);
  }

  // A correct single-node two-stage run with one checkpoint.
  void clean_publish_run(const std::string& job_id = "1") {
    ev("scheduler", "job_created", job_id, {{"app", "mini"}});
    ev("A", "task_accepted", job_id, {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
    ev("A", "stage_start", job_id, {{"stage", "0"}});
    ev("A", "stage_end", job_id, {{"stage", "0"}});
    ev("A", "stage_start", job_id, {{"stage", "1"}});
    ev("A", "ckpt_begin", job_id, {{"seq", "1"}, {"stage", "2"}});
    ev("A", "cmi_promoted", job_id, {{"seq", "1"}, {"bytes", "100"}});
    ev("A", "manifest_promoted", job_id, {{"seq", "1"}, {"stage", "2"}});
    ev("scheduler", "ckpt_recorded", job_id, {{"seq", "1"}, {"node", "A"}});
    ev("A", "ckpt_published", job_id, {{"seq", "1"}, {"claim", "A"}});
    ev("A", "stage_end", job_id, {{"stage", "1"}});
    ev("A", "finished_published", job_id, {{"product", "job-" + job_id + "/product/out.txt"}});
    ev("scheduler", "finished_recorded", job_id, {{"node", "A"}});
    ev("A", "task_completed", job_id);
    finish_job(job_id, {1, 1});
  }

  // A correct hop: accepted at the destination before the source drains.
  void clean_hop_run(const std::string& job_id = "1") {
    ev("scheduler", "job_created", job_id, {{"app", "mini"}});
    ev("A", "task_accepted", job_id, {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
    ev("A", "stage_start", job_id, {{"stage", "0"}});
    ev("A", "ckpt_begin", job_id, {{"seq", "1"}, {"stage", "1"}});
    ev("A", "cmi_promoted", job_id, {{"seq", "1"}, {"bytes", "100"}});
    ev("A", "manifest_promoted", job_id, {{"seq", "1"}, {"stage", "1"}});
    ev("scheduler", "ckpt_recorded", job_id, {{"seq", "1"}, {"node", "B"}, {"from", "A"}});
    ev("A", "ckpt_published", job_id, {{"seq", "1"}, {"claim", "B"}});
    ev("A", "hop_request", job_id, {{"dest", "B"}, {"seq", "1"}});
    ev("B", "task_accepted", job_id, {{"via", "hop"}, {"seq", "1"}, {"stage", "1"}});
    ev("A", "hop_acked", job_id, {{"dest", "B"}});
    ev("A", "task_migrated", job_id, {{"dest", "B"}});
    ev("B", "stage_start", job_id, {{"stage", "1"}});
    ev("B", "stage_end", job_id, {{"stage", "1"}});
    ev("B", "finished_published", job_id, {{"product", "job-" + job_id + "/product/out.txt"}});
    ev("scheduler", "finished_recorded", job_id, {{"node", "B"}});
    ev("B", "task_completed", job_id);
    finish_job(job_id, {1, 1});
  }
};

std::vector<std::string> verify(const LogBuilder& b,
                                std::map<std::string, Bytes> baseline = {}) {
  return replay_verify(b.report, baseline);
}

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
  for (const auto& s : v) {
    if (s.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("clean logs verify with no violations") {
  LogBuilder pub;
  pub.clean_publish_run();
  CHECK(verify(pub).empty());

  LogBuilder hop;
  hop.clean_hop_run();
  CHECK(verify(hop).empty());

  // Matching baseline passes too.
  CHECK(verify(hop, {{"1", "p"}}).empty());
}

TEST_CASE("verification flags unfinished jobs and deadline overruns") {
  LogBuilder b;
  b.clean_publish_run();
  b.report.jobs["1"].status = "ckpt";
  auto v = verify(b);
  CHECK(mentions(v, "ended as 'ckpt'"));

  LogBuilder d;
  d.clean_publish_run();
  d.report.deadline_exceeded = true;
  CHECK(mentions(verify(d), "deadline"));
}

TEST_CASE("verification enforces exactly-once execution in kill-free runs") {
  LogBuilder b;
  b.clean_publish_run();
  b.report.jobs["1"].attempts = {2, 1};
  CHECK(mentions(verify(b), "kill-free run re-executed"));

  // The same attempts are legitimate once a kill actually fired.
  LogBuilder k;
  k.clean_publish_run();
  k.report.jobs["1"].attempts = {2, 1};
  k.ev("harness", "kill_fired", "", {{"target", "A"}});
  CHECK(!mentions(verify(k), "re-executed"));

  LogBuilder z;
  z.clean_publish_run();
  z.report.jobs["1"].attempts = {0, 1};
  CHECK(mentions(verify(z), "never executed"));
}

TEST_CASE("verification compares products against the baseline") {
  LogBuilder b;
  b.clean_publish_run();
  CHECK(mentions(verify(b, {{"1", "different"}}), "differs from baseline"));
  CHECK(mentions(verify(b, {{"9", "p"}}), "absent from the run"));
}

TEST_CASE("verification rejects impossible execution orders") {
  // Stage out of order.
  LogBuilder b;
  b.ev("A", "task_accepted", "1", {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
  b.ev("A", "stage_start", "1", {{"stage", "0"}});
  b.ev("A", "stage_start", "1", {{"stage", "0"}});
  b.finish_job("1", {2});
  b.ev("harness", "kill_fired", "", {});
  CHECK(mentions(verify(b), "out of order"));

  // Stage event from a process that never accepted the task.
  LogBuilder c;
  c.ev("B", "stage_start", "1", {{"stage", "0"}});
  c.finish_job("1", {1});
  CHECK(mentions(verify(c), "outside any incarnation"));

  // Stage event from a bystander while another process executes.
  LogBuilder d;
  d.ev("A", "task_accepted", "1", {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
  d.ev("B", "stage_start", "1", {{"stage", "0"}});
  d.finish_job("1", {1});
  CHECK(mentions(verify(d), "but A is the executor"));

  // Two overlapping fresh starts.
  LogBuilder e;
  e.ev("A", "task_accepted", "1", {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
  e.ev("B", "task_accepted", "1", {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
  e.finish_job("1", {1});
  CHECK(mentions(verify(e), "still runs it"));

  // Completion reported by a process that already handed the task off.
  LogBuilder f;
  f.clean_hop_run();
  auto& events = f.report.events;
  for (auto& le : events) {
    if (le.ev.source == "A" && le.ev.type == "task_migrated") le.ev.type = "task_completed";
  }
  CHECK(mentions(verify(f), "after handing the task off"));

  // Terminal event from a process with no role at all.
  LogBuilder g;
  g.ev("C", "task_failed", "1", {{"error", "io_error"}, {"message", "x"}});
  g.finish_job("1", {1});
  CHECK(mentions(verify(g), "without an open incarnation"));
}

TEST_CASE("verification anchors resumes to the latest promoted manifest") {
  // Resume at the wrong stage.
  LogBuilder b;
  b.ev("A", "task_accepted", "1", {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
  b.ev("A", "stage_start", "1", {{"stage", "0"}});
  b.ev("A", "manifest_promoted", "1", {{"seq", "1"}, {"stage", "1"}});
  b.ev("A", "hop_request", "1", {{"dest", "B"}, {"seq", "1"}});
  b.ev("B", "task_accepted", "1", {{"via", "hop"}, {"seq", "1"}, {"stage", "2"}});
  b.finish_job("1", {1, 1});
  CHECK(mentions(verify(b), "does not match the latest promoted manifest"));

  // A fresh start that ignores a committed checkpoint.
  LogBuilder c;
  c.ev("A", "task_accepted", "1", {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
  c.ev("A", "stage_start", "1", {{"stage", "0"}});
  c.ev("A", "manifest_promoted", "1", {{"seq", "1"}, {"stage", "1"}});
  c.ev("A", "task_failed", "1", {{"error", "io_error"}, {"message", "x"}});
  c.ev("harness", "process_down", "", {{"node", "A"}});
  c.ev("A.2", "task_accepted", "1", {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
  c.finish_job("1", {1, 1});
  c.ev("harness", "kill_fired", "", {});
  CHECK(mentions(verify(c), "fresh start ignores a promoted checkpoint"));

  // A hop landing somewhere the executor never pointed.
  LogBuilder d;
  d.ev("A", "task_accepted", "1", {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
  d.ev("A", "manifest_promoted", "1", {{"seq", "1"}, {"stage", "1"}});
  d.ev("A", "hop_request", "1", {{"dest", "B"}, {"seq", "1"}});
  d.ev("C", "task_accepted", "1", {{"via", "hop"}, {"seq", "1"}, {"stage", "1"}});
  d.finish_job("1", {1, 1});
  CHECK(mentions(verify(d), "still runs it"));
}

TEST_CASE("verification tracks checkpoint sequence monotonicity") {
  LogBuilder b;
  b.ev("A", "task_accepted", "1", {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
  b.ev("A", "manifest_promoted", "1", {{"seq", "2"}, {"stage", "1"}});
  b.ev("A", "manifest_promoted", "1", {{"seq", "2"}, {"stage", "1"}});
  b.finish_job("1", {1, 1});
  CHECK(mentions(verify(b), "manifest seq did not advance"));

  LogBuilder c;
  c.ev("scheduler", "ckpt_recorded", "1", {{"seq", "2"}, {"node", "A"}});
  c.ev("scheduler", "ckpt_recorded", "1", {{"seq", "2"}, {"node", "A"}});
  c.finish_job("1", {1, 1});
  CHECK(mentions(verify(c), "non-increasing ckpt seq"));

  LogBuilder d;
  d.ev("A", "task_accepted", "1", {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
  d.ev("A", "ckpt_published", "1", {{"seq", "1"}, {"claim", "A"}});
  d.ev("A", "ckpt_published", "1", {{"seq", "1"}, {"claim", "A"}});
  d.finish_job("1", {1, 1});
  CHECK(mentions(verify(d), "published ckpt seq did not advance"));
}

TEST_CASE("verification ties execution to the claim holder") {
  LogBuilder b;
  b.ev("A", "task_accepted", "1", {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
  b.ev("A", "stage_start", "1", {{"stage", "0"}});
  b.ev("scheduler", "ckpt_recorded", "1", {{"seq", "1"}, {"node", "B"}});
  b.ev("A", "stage_end", "1", {{"stage", "0"}});
  b.finish_job("1", {1, 1});
  CHECK(mentions(verify(b), "claim belongs to B"));

  // A replacement process inherits its predecessor's claim by the naming
  // convention: "A.2" may execute work claimed as "A". The whole restart log
  // verifies clean.
  LogBuilder c;
  c.ev("A", "task_accepted", "1", {{"via", "start"}, {"seq", "0"}, {"stage", "0"}});
  c.ev("scheduler", "job_claimed", "1", {{"node", "A"}});
  c.ev("A", "stage_start", "1", {{"stage", "0"}});
  c.ev("A", "ckpt_begin", "1", {{"seq", "1"}, {"stage", "1"}});
  c.ev("A", "cmi_promoted", "1", {{"seq", "1"}, {"bytes", "90"}});
  c.ev("A", "manifest_promoted", "1", {{"seq", "1"}, {"stage", "1"}});
  c.ev("scheduler", "ckpt_recorded", "1", {{"seq", "1"}, {"node", "A"}});
  c.ev("A", "ckpt_published", "1", {{"seq", "1"}, {"claim", "A"}});
  c.ev("harness", "kill_fired", "", {{"target", "A"}});
  c.ev("harness", "process_down", "", {{"node", "A"}});
  c.ev("A.2", "task_accepted", "1", {{"via", "hop"}, {"seq", "1"}, {"stage", "1"}});
  c.ev("A.2", "stage_start", "1", {{"stage", "1"}});
  c.ev("A.2", "stage_end", "1", {{"stage", "1"}});
  c.ev("A.2", "finished_published", "1", {{"product", "job-1/product/out.txt"}});
  c.ev("scheduler", "finished_recorded", "1", {{"node", "A.2"}});
  c.ev("A.2", "task_completed", "1");
  c.finish_job("1", {1, 1});
  CHECK(verify(c).empty());
}

TEST_CASE("run reports serialize with digests and flattened events") {
  LogBuilder b;
  b.clean_publish_run();
  b.report.recompute_ratio = 0.25;
  b.report.notes.push_back("one agent");

  std::string text = report_to_json(b.report, {});
  nlohmann::json j = nlohmann::json::parse(text);
  CHECK(j["scenario"] == "synthetic");
  CHECK(j["result"] == "pass");
  CHECK(j["recompute_ratio"] == 0.25);
  CHECK(j["jobs"]["1"]["status"] == "finished");
  CHECK(j["jobs"]["1"]["attempts"] == nlohmann::json::array({1, 1}));
  CHECK(j["jobs"]["1"]["product_bytes"] == 1);
  CHECK(j["jobs"]["1"]["product_sha256"] == sha256_hex("p"));
  CHECK(j["events"].size() == b.report.events.size());
  CHECK(j["events"][1]["type"] == "task_accepted");
  CHECK(j["events"][1]["source"] == "A");
  CHECK(j["events"][1]["via"] == "start");
  CHECK(j["notes"][0] == "one agent");

  std::string failing = report_to_json(b.report, {"job 1: broke"});
  nlohmann::json jf = nlohmann::json::parse(failing);
  CHECK(jf["result"] == "fail");
  CHECK(jf["violations"][0] == "job 1: broke");
}
