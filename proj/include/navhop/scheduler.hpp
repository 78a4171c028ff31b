#pragma once

#include <cstdio>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "navhop/blob_store.hpp"
#include "navhop/clock.hpp"
#include "navhop/events.hpp"
#include "navhop/net.hpp"
#include "navhop/strings.hpp"

namespace navhop {

enum class JobStatus { kNew, kCkpt, kFinished };

const char* job_status_name(JobStatus s);
JobStatus job_status_from(std::string_view name);  // throws InvalidStatus

struct JobRecord {
  std::string job_id;
  JobStatus status = JobStatus::kNew;
  std::string app_name;
  std::vector<std::string> input_keys;
  std::string cmi_manifest_key;  // empty until first ckpt publish
  std::vector<std::string> product_keys;
  std::uint64_t ckpt_sequence = 0;
  std::string claimed_by;            // empty when unclaimed
  std::uint64_t claim_expires_ms = 0;
  std::uint64_t updated_at = 0;  // unix seconds
};

// Job registry with an append-only journal. Every transition is journaled
// and fsynced before the in-memory record changes, and the journal replays
// at startup, so a scheduler kill loses nothing. All mutations serialize
// through one mutex.
class Registry {
 public:
  struct Options {
    std::string journal_path;  // empty: in-memory only (unit tests)
    int lease_secs = 30;
    BlobStore* store = nullptr;  // when set, published keys are verified
    std::shared_ptr<EventSink> events = std::make_shared<NullSink>();
    Clock wall_ms = [] { return navhop::wall_millis(); };
  };

  explicit Registry(Options opts);
  ~Registry();

  JobRecord create(const std::string& job_id, const std::string& app_name,
                   const std::vector<std::string>& input_keys);
  std::vector<JobRecord> list() const;  // ascending, numeric-aware
  std::optional<JobRecord> get(const std::string& job_id) const;

  // Claims the lowest non-finished job with no live claim for node_id;
  // nullopt when every job is finished or claimed.
  std::optional<JobRecord> claim_next(const std::string& node_id);

  // status "ckpt": keys = [manifest key], sequence must exceed the stored
  // one; the claim moves to node_id. status "finished": keys = product keys;
  // terminal, claim released. A byte-for-byte duplicate of the latest accepted
  // publish is acknowledged without touching the journal.
  JobRecord publish(const std::string& job_id, const std::string& status,
                    const std::vector<std::string>& keys, std::uint64_t sequence,
                    const std::string& node_id);

  // Releases all claims held by node_id; returns the affected job ids.
  std::vector<std::string> requeue_dead(const std::string& node_id);

  // Extends the lease while node_id still holds the claim; otherwise a no-op.
  void renew(const std::string& job_id, const std::string& node_id);

 private:
  void replay();
  void append(const std::vector<std::pair<std::string, std::string>>& fields);
  void apply_line(const std::string& line, std::size_t line_no);
  void emit(const std::string& type, const std::string& job_id,
            std::map<std::string, std::string> attrs = {});
  void verify_keys_exist(const std::vector<std::string>& keys);
  void verify_ckpt_chain(const std::string& job_id, const std::string& manifest_key,
                         std::uint64_t sequence);

  Options opts_;
  mutable std::mutex mu_;
  std::map<std::string, JobRecord, NaturalLess> jobs_;
  std::FILE* journal_ = nullptr;
};

// Wire front end for the registry.
class SchedulerServer {
 public:
  SchedulerServer(Registry& registry, std::shared_ptr<EventSink> events);

  void start(const HostPort& listen);
  void stop();
  const HostPort& address() const { return server_.address(); }

  Message handle(const Message& req);

 private:
  Registry& registry_;
  std::shared_ptr<EventSink> events_;
  RpcServer server_;
};

// Renders list() rows in the registry's display form, e.g.
// [["1","new"],["2","ckpt"],["3","finished"]].
std::string render_job_list(const std::vector<std::pair<std::string, std::string>>& rows);

void record_to_message(const JobRecord& rec, Message& out);
JobRecord record_from_message(const Message& msg);

}  // namespace navhop
