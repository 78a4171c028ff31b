#include <memory>

#include "doctest.h"
#include "navhop/cmi.hpp"
#include "navhop/runtime.hpp"
#include "navhop/scheduler.hpp"
#include "test_util.hpp"

using namespace navhop;
using navhop::test::code_of;
using navhop::test::TempDir;

namespace {

struct Fixture {
  std::shared_ptr<std::uint64_t> now_ms = std::make_shared<std::uint64_t>(1000000);
  std::shared_ptr<CollectingSink> sink = std::make_shared<CollectingSink>();

  Registry::Options options(const std::string& journal = "", BlobStore* store = nullptr) {
    Registry::Options o;
    o.journal_path = journal;
    o.lease_secs = 30;
    o.store = store;
    o.events = sink;
    auto clock = now_ms;
    o.wall_ms = [clock] { return *clock; };
    return o;
  }

  void advance_secs(std::uint64_t s) { *now_ms += s * 1000; }
};

// Stores a a well-formed checkpoint chain and returns the manifest key.
std::string stage_chain(BlobStore& store, const std::string& job_id, std::uint64_t seq,
                        std::uint32_t stage) {
  BlobKey ck = cmi_key(job_id, seq);
  store.put_atomic(ck, encode_cmi(job_id, seq, stage, "payload", 1));
  RestartManifest m{job_id, ck.full(), "colocation", stage, seq};
  BlobKey mk = manifest_key(job_id);
  store.put_atomic(mk, encode_manifest(m));
  return mk.full();
}

}  // namespace

TEST_CASE("create, list in natural order, and duplicate rejection") {
  Fixture fx;
  Registry reg(fx.options());
  reg.create("2", "colocation", {"job-2/input/fine.txt"});
  reg.create("10", "colocation", {});
  reg.create("1", "colocation", {});

  auto jobs = reg.list();
  REQUIRE(jobs.size() == 3);
  CHECK(jobs[0].job_id == "1");
  CHECK(jobs[1].job_id == "2");
  CHECK(jobs[2].job_id == "10");
  CHECK(jobs[1].input_keys == std::vector<std::string>{"job-2/input/fine.txt"});
  CHECK(jobs[0].status == JobStatus::kNew);

  CHECK(code_of([&] { reg.create("1", "colocation", {}); }) == Errc::kInvalidTransition);
  CHECK(code_of([&] { reg.create("bad id", "colocation", {}); }) == Errc::kInvalidArgument);
  CHECK(!reg.get("missing").has_value());
  CHECK(reg.get("10")->app_name == "colocation");
}

TEST_CASE("status rendering matches the canonical display form") {
  Fixture fx;
  MemoryStore store;
  Registry reg(fx.options("", &store));
  reg.create("1", "colocation", {});
  reg.create("2", "colocation", {});
  reg.create("3", "colocation", {});

  reg.claim_next("N");
  std::string mk = stage_chain(store, "2", 1, 3);
  reg.publish("2", "ckpt", {mk}, 1, "N");
  store.put_atomic(product_key("3", "match.txt"), "result");
  reg.publish("3", "finished", {product_key("3", "match.txt").full()}, 0, "N");

  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& rec : reg.list()) {
    rows.emplace_back(rec.job_id, job_status_name(rec.status));
  }
  CHECK(render_job_list(rows) == R"([["1","new"],["2","ckpt"],["3","finished"]])");
  CHECK(render_job_list({}) == "[]");
}

TEST_CASE("claims respect order, leases, and finished jobs") {
  Fixture fx;
  Registry reg(fx.options());
  reg.create("1", "colocation", {});
  reg.create("2", "colocation", {});

  auto c1 = reg.claim_next("A");
  REQUIRE(c1.has_value());
  CHECK(c1->job_id == "1");
  CHECK(c1->claimed_by == "A");

  // The same node does not double-claim its own live lease.
  auto c2 = reg.claim_next("A");
  REQUIRE(c2.has_value());
  CHECK(c2->job_id == "2");
  CHECK(!reg.claim_next("B").has_value());

  // Leases lapse with time; the job becomes claimable again.
  fx.advance_secs(31);
  auto c3 = reg.claim_next("B");
  REQUIRE(c3.has_value());
  CHECK(c3->job_id == "1");

  // Renewal pushes the expiry forward only for the holder.
  reg.renew("1", "B");
  reg.renew("2", "B");  // not the holder; silently ignored
  fx.advance_secs(20);
  auto c4 = reg.claim_next("C");
  REQUIRE(c4.has_value());
  CHECK(c4->job_id == "2");  // 1 still held by B, 2's lease (A, lapsed) is free
}

TEST_CASE("requeue_dead releases only the named node's claims") {
  Fixture fx;
  Registry reg(fx.options());
  reg.create("1", "colocation", {});
  reg.create("2", "colocation", {});
  reg.claim_next("A");
  reg.claim_next("B");

  auto released = reg.requeue_dead("A");
  CHECK(released == std::vector<std::string>{"1"});
  CHECK(reg.requeue_dead("A").empty());

  auto c = reg.claim_next("C");
  REQUIRE(c.has_value());
  CHECK(c->job_id == "1");
}

TEST_CASE("checkpoint publishes advance the sequence and move the claim") {
  Fixture fx;
  MemoryStore store;
  Registry reg(fx.options("", &store));
  reg.create("1", "colocation", {});
  reg.claim_next("A");

  std::string mk = stage_chain(store, "1", 1, 3);
  JobRecord rec = reg.publish("1", "ckpt", {mk}, 1, "A");
  CHECK(rec.status == JobStatus::kCkpt);
  CHECK(rec.ckpt_sequence == 1);
  CHECK(rec.cmi_manifest_key == mk);
  CHECK(rec.claimed_by == "A");

  // A hop-style publish names the destination; the claim transfers.
  stage_chain(store, "1", 2, 5);
  rec = reg.publish("1", "ckpt", {mk}, 2, "B");
  CHECK(rec.claimed_by == "B");
  bool saw_transfer = false;
  for (const auto& ev : fx.sink->events()) {
    if (ev.type == "ckpt_recorded" && ev.attr("seq") == "2") {
      CHECK(ev.attr("node") == "B");
      CHECK(ev.attr("from") == "A");
      saw_transfer = true;
    }
  }
  CHECK(saw_transfer);

  // Stale and replayed sequences.
  CHECK(code_of([&] { reg.publish("1", "ckpt", {mk}, 1, "A"); }) == Errc::kStaleSequence);
  CHECK(code_of([&] { reg.publish("1", "ckpt", {mk}, 2, "B"); }) == Errc::kOk);  // exact retry
  CHECK(code_of([&] { reg.publish("1", "ckpt", {mk, mk}, 3, "B"); }) == Errc::kInvalidArgument);
  CHECK(code_of([&] { reg.publish("1", "new", {}, 0, "A"); }) == Errc::kInvalidStatus);
  CHECK(code_of([&] { reg.publish("missing", "ckpt", {mk}, 1, "A"); }) == Errc::kNotFound);
}

TEST_CASE("chain verification rejects broken references") {
  Fixture fx;
  MemoryStore store;
  Registry reg(fx.options("", &store));
  reg.create("1", "colocation", {});

  // No manifest in the store at all.
  CHECK(code_of([&] { reg.publish("1", "ckpt", {manifest_key("1").full()}, 1, "A"); }) ==
        Errc::kMissingBlob);

  // Manifest present but naming the wrong sequence.
  stage_chain(store, "1", 1, 3);
  CHECK(code_of([&] { reg.publish("1", "ckpt", {manifest_key("1").full()}, 2, "A"); }) ==
        Errc::kManifestMismatch);

  // Manifest pointing at a corrupt image.
  Bytes img = store.get(cmi_key("1", 1));
  img[img.size() / 2] = static_cast<char>(img[img.size() / 2] ^ 0x1);
  store.put_atomic(cmi_key("1", 1), img);
  CHECK(code_of([&] { reg.publish("1", "ckpt", {manifest_key("1").full()}, 1, "A"); }) ==
        Errc::kDigestMismatch);

  // Manifest whose image was pruned away.
  store.remove(cmi_key("1", 1));
  CHECK(code_of([&] { reg.publish("1", "ckpt", {manifest_key("1").full()}, 1, "A"); }) ==
        Errc::kMissingBlob);

  // Finished requires the products to exist.
  CHECK(code_of([&] {
          reg.publish("1", "finished", {product_key("1", "match.txt").full()}, 0, "A");
        }) == Errc::kMissingBlob);
}

TEST_CASE("finished is terminal") {
  Fixture fx;
  MemoryStore store;
  Registry reg(fx.options("", &store));
  reg.create("1", "colocation", {});
  store.put_atomic(product_key("1", "match.txt"), "result");
  std::string pk = product_key("1", "match.txt").full();

  CHECK(code_of([&] { reg.publish("1", "finished", {}, 0, "A"); }) == Errc::kInvalidArgument);
  JobRecord rec = reg.publish("1", "finished", {pk}, 0, "A");
  CHECK(rec.status == JobStatus::kFinished);
  CHECK(rec.claimed_by.empty());
  CHECK(rec.product_keys == std::vector<std::string>{pk});

  // Identical finished retry is acknowledged; anything else is refused.
  CHECK(code_of([&] { reg.publish("1", "finished", {pk}, 0, "A"); }) == Errc::kOk);
  CHECK(code_of([&] { reg.publish("1", "finished", {pk + ".other"}, 0, "A"); }) ==
        Errc::kInvalidTransition);
  std::string mk = stage_chain(store, "1", 3, 5);
  CHECK(code_of([&] { reg.publish("1", "ckpt", {mk}, 3, "A"); }) == Errc::kInvalidTransition);
  CHECK(!reg.claim_next("A").has_value());
}

TEST_CASE("journal replay rebuilds the same state") {
  Fixture fx;
  TempDir tmp("journal");
  std::string path = tmp.sub("journal.log");
  MemoryStore store;
  {
    Registry reg(fx.options(path, &store));
    reg.create("1", "colocation", {"job-1/input/fine.txt", "job-1/input/coarse.txt"});
    reg.create("2", "slowloop", {});
    reg.claim_next("A");
    std::string mk = stage_chain(store, "1", 4, 6);
    reg.publish("1", "ckpt", {mk}, 4, "A");
    store.put_atomic(product_key("2", "laps.txt"), "4");
    reg.publish("2", "finished", {product_key("2", "laps.txt").full()}, 0, "B");
    reg.requeue_dead("A");
  }

  fx.sink = std::make_shared<CollectingSink>();
  Registry again(fx.options(path, &store));
  // Replay is silent: no events re-fired for journaled history.
  CHECK(fx.sink->events().empty());

  auto jobs = again.list();
  REQUIRE(jobs.size() == 2);
  CHECK(jobs[0].job_id == "1");
  CHECK(jobs[0].status == JobStatus::kCkpt);
  CHECK(jobs[0].ckpt_sequence == 4);
  CHECK(jobs[0].cmi_manifest_key == manifest_key("1").full());
  CHECK(jobs[0].claimed_by.empty());  // released before shutdown
  CHECK(jobs[0].input_keys.size() == 2);
  CHECK(jobs[1].status == JobStatus::kFinished);
  CHECK(jobs[1].product_keys == std::vector<std::string>{product_key("2", "laps.txt").full()});

  // The rebuilt registry keeps appending to the same journal.
  again.create("3", "colocation", {});
  Registry third(fx.options(path, &store));
  CHECK(third.list().size() == 3);
}

TEST_CASE("a torn final line is dropped on replay") {
  Fixture fx;
  TempDir tmp("torn");
  std::string path = tmp.sub("journal.log");
  {
    Registry reg(fx.options(path));
    reg.create("1", "colocation", {});
    reg.create("2", "colocation", {});
  }
  std::string full = navhop::test::read_file(path);
  navhop::test::write_file(path, full + "op=create job=3 app=coloc");  // no newline

  Registry reg(fx.options(path));
  CHECK(reg.list().size() == 2);
  CHECK(!reg.get("3").has_value());

  // New appends land after the torn fragment is ignored; the fragment stays
  // inert because appends always start with a fresh line... verify by replay.
  reg.create("4", "colocation", {});
  Registry again(fx.options(path));
  CHECK(again.get("4").has_value());
}

TEST_CASE("an exact duplicate publish leaves the journal byte-identical") {
  Fixture fx;
  TempDir tmp("dup");
  std::string path = tmp.sub("journal.log");
  MemoryStore store;
  Registry reg(fx.options(path, &store));
  reg.create("1", "colocation", {});
  std::string mk = stage_chain(store, "1", 2, 5);
  reg.publish("1", "ckpt", {mk}, 2, "A");

  std::string before = navhop::test::read_file(path);
  JobRecord rec = reg.publish("1", "ckpt", {mk}, 2, "A");  // retried delivery
  CHECK(rec.ckpt_sequence == 2);
  std::string after = navhop::test::read_file(path);
  CHECK(before == after);

  // A stale sequence is refused before anything reaches the journal.
  stage_chain(store, "1", 1, 3);
  CHECK(code_of([&] { reg.publish("1", "ckpt", {manifest_key("1").full()}, 1, "A"); }) ==
        Errc::kStaleSequence);
  CHECK(navhop::test::read_file(path) == before);

  store.put_atomic(product_key("1", "match.txt"), "p");
  std::string pk = product_key("1", "match.txt").full();
  reg.publish("1", "finished", {pk}, 0, "A");
  std::string with_finish = navhop::test::read_file(path);
  reg.publish("1", "finished", {pk}, 0, "A");
  CHECK(navhop::test::read_file(path) == with_finish);
}

TEST_CASE("scheduler wire services cover the full claim and publish flow") {
  Fixture fx;
  MemoryStore store;
  Registry reg(fx.options("", &store));
  SchedulerServer server(reg, fx.sink);
  server.start(HostPort{"127.0.0.1", 0});
  const HostPort& addr = server.address();

  auto call = [&](Message req) {
    Message resp = rpc(addr, req, 2000);
    ensure_ok(resp);
    return resp;
  };

  Message add;
  add.set("service", "add_job");
  add.set("job_id", "1");
  add.set("app_name", "colocation");
  add.set("inputs.0", "job-1/input/fine.txt");
  JobRecord created = record_from_message(call(add));
  CHECK(created.status == JobStatus::kNew);
  CHECK(created.input_keys == std::vector<std::string>{"job-1/input/fine.txt"});

  // Claiming goes through get_job without a job_id.
  Message claim;
  claim.set("service", "get_job");
  claim.set("node", "A");
  Message resp = call(claim);
  CHECK(resp.get("found") == "1");
  CHECK(record_from_message(resp).claimed_by == "A");
  CHECK(call(claim).get("found") == "0");  // nothing left to claim

  Message renew;
  renew.set("service", "renew");
  renew.set("job_id", "1");
  renew.set("node", "A");
  call(renew);

  std::string mk = stage_chain(store, "1", 1, 3);
  Message pub;
  pub.set("service", "publish_job");
  pub.set("job_id", "1");
  pub.set("status", "ckpt");
  pub.set("keys.0", mk);
  pub.set_u64("sequence", 1);
  pub.set("node", "A");
  CHECK(record_from_message(call(pub)).ckpt_sequence == 1);

  Message lst;
  lst.set("service", "list_jobs");
  resp = call(lst);
  CHECK(resp.get_u64("count") == 1);
  CHECK(resp.get("jobs.0.job_id") == "1");
  CHECK(resp.get("jobs.0.status") == "ckpt");

  // Errors come back as structured responses, not dropped connections.
  Message stale = pub;
  Message stale_resp = rpc(addr, stale, 2000);
  CHECK(code_of([&] { ensure_ok(stale_resp); }) == Errc::kOk);  // exact duplicate
  stale.set("keys.0", mk + "x");
  stale_resp = rpc(addr, stale, 2000);
  CHECK(code_of([&] { ensure_ok(stale_resp); }) == Errc::kStaleSequence);

  Message requeue;
  requeue.set("service", "requeue_dead");
  requeue.set("node", "A");
  resp = call(requeue);
  CHECK(resp.get_u64("count") == 1);
  CHECK(resp.get("released.0") == "1");

  Message lookup;
  lookup.set("service", "get_job");
  lookup.set("job_id", "1");
  CHECK(record_from_message(call(lookup)).claimed_by.empty());
  lookup.set("job_id", "404");
  Message missing = rpc(addr, lookup, 2000);
  CHECK(code_of([&] { ensure_ok(missing); }) == Errc::kNotFound);

  Message health;
  health.set("service", "health");
  resp = call(health);
  CHECK(resp.get("node_id") == "scheduler");
  CHECK(resp.get_u64("jobs") == 1);

  Message bogus;
  bogus.set("service", "no_such_service");
  Message bogus_resp = rpc(addr, bogus, 2000);
  CHECK(code_of([&] { ensure_ok(bogus_resp); }) == Errc::kMalformedMessage);

  server.stop();
}
