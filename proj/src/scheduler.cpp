#include "navhop/scheduler.hpp"

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "navhop/cmi.hpp"
#include "navhop/errors.hpp"

namespace navhop {

const char* job_status_name(JobStatus s) {
  switch (s) {
    case JobStatus::kNew: return "new";
    case JobStatus::kCkpt: return "ckpt";
    case JobStatus::kFinished: return "finished";
  }
  return "?";
}

JobStatus job_status_from(std::string_view name) {
  if (name == "new") return JobStatus::kNew;
  if (name == "ckpt") return JobStatus::kCkpt;
  if (name == "finished") return JobStatus::kFinished;
  raise(Errc::kInvalidStatus, "unknown job status '" + std::string(name) + "'");
}

namespace {

// Identifiers that end up in journal lines must be space-free.
bool is_token(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    bool ok = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
              c == '.' || c == '_' || c == '-' || c == '/';
    if (!ok) return false;
  }
  return true;
}

void require_token(std::string_view s, const char* what) {
  if (!is_token(s)) {
    raise(Errc::kInvalidArgument, std::string(what) + " '" + std::string(s) + "' is not a plain token");
  }
}

std::string join_keys(const std::vector<std::string>& keys) {
  std::string out;
  for (const auto& k : keys) {
    if (!out.empty()) out += ',';
    out += k;
  }
  return out;
}

}  // namespace

Registry::Registry(Options opts) : opts_(std::move(opts)) {
  replay();
  if (!opts_.journal_path.empty()) {
    journal_ = std::fopen(opts_.journal_path.c_str(), "ab");
    if (journal_ == nullptr) {
      raise(Errc::kIoError, "cannot open journal " + opts_.journal_path);
    }
  }
}

Registry::~Registry() {
  if (journal_ != nullptr) std::fclose(journal_);
}

void Registry::emit(const std::string& type, const std::string& job_id,
                    std::map<std::string, std::string> attrs) {
  opts_.events->emit(Event{"scheduler", type, job_id, std::move(attrs)});
}

void Registry::append(const std::vector<std::pair<std::string, std::string>>& fields) {
  if (journal_ == nullptr) return;
  std::string line;
  for (const auto& [k, v] : fields) {
    if (!line.empty()) line += ' ';
    line += k;
    line += '=';
    line += v;
  }
  line += '\n';
  if (std::fwrite(line.data(), 1, line.size(), journal_) != line.size() ||
      std::fflush(journal_) != 0) {
    raise(Errc::kIoError, "journal append failed");
  }
  ::fsync(::fileno(journal_));
}

void Registry::apply_line(const std::string& line, std::size_t line_no) {
  std::map<std::string, std::string> kv;
  for (const auto& tok : split(line, ' ')) {
    if (tok.empty()) continue;
    auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) {
      raise(Errc::kIoError, "journal line " + std::to_string(line_no) + " is malformed");
    }
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  auto need = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) {
      raise(Errc::kIoError,
            "journal line " + std::to_string(line_no) + " lacks field '" + k + "'");
    }
    return it->second;
  };
  auto csv = [](const std::string& v) {
    std::vector<std::string> out;
    if (!v.empty()) out = split(v, ',');
    return out;
  };

  const std::string& op = need("op");
  if (op == "create") {
    JobRecord rec;
    rec.job_id = need("job");
    rec.app_name = need("app");
    rec.input_keys = csv(kv.count("inputs") ? kv["inputs"] : std::string());
    rec.updated_at = parse_u64(need("ts")).value_or(0);
    jobs_[rec.job_id] = std::move(rec);
    return;
  }
  auto it = jobs_.find(need("job"));
  if (it == jobs_.end()) {
    raise(Errc::kIoError, "journal line " + std::to_string(line_no) + " names unknown job");
  }
  JobRecord& rec = it->second;
  rec.updated_at = parse_u64(need("ts")).value_or(rec.updated_at);
  if (op == "publish") {
    const std::string& status = need("status");
    if (status == "ckpt") {
      rec.status = JobStatus::kCkpt;
      rec.ckpt_sequence = parse_u64(need("seq")).value_or(0);
      rec.cmi_manifest_key = need("manifest");
      rec.claimed_by = need("node");
      rec.claim_expires_ms = opts_.wall_ms() + static_cast<std::uint64_t>(opts_.lease_secs) * 1000;
    } else if (status == "finished") {
      rec.status = JobStatus::kFinished;
      rec.product_keys = csv(need("products"));
      rec.claimed_by.clear();
      rec.claim_expires_ms = 0;
    } else {
      raise(Errc::kIoError, "journal line " + std::to_string(line_no) + " has bad status");
    }
  } else if (op == "claim") {
    rec.claimed_by = need("node");
    rec.claim_expires_ms = opts_.wall_ms() + static_cast<std::uint64_t>(opts_.lease_secs) * 1000;
  } else if (op == "release") {
    rec.claimed_by.clear();
    rec.claim_expires_ms = 0;
  } else {
    raise(Errc::kIoError, "journal line " + std::to_string(line_no) + " has unknown op");
  }
}

void Registry::replay() {
  if (opts_.journal_path.empty()) return;
  std::ifstream in(opts_.journal_path, std::ios::binary);
  if (!in.is_open()) return;  // fresh journal
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    // A torn tail means the process died mid-append; the transition never
    // happened as far as callers know, so drop it. Truncate it away too,
    // or the next append would weld onto the fragment and corrupt the line.
    if (nl == std::string::npos) {
      std::error_code ec;
      std::filesystem::resize_file(opts_.journal_path, pos, ec);
      break;
    }
    ++line_no;
    apply_line(content.substr(pos, nl - pos), line_no);
    pos = nl + 1;
  }
}

void Registry::verify_keys_exist(const std::vector<std::string>& keys) {
  if (opts_.store == nullptr) return;
  for (const auto& k : keys) {
    if (!opts_.store->exists(BlobKey::parse(k))) {
      raise(Errc::kMissingBlob, "published key " + k + " is not in the store");
    }
  }
}

void Registry::verify_ckpt_chain(const std::string& job_id, const std::string& manifest_key,
                                 std::uint64_t sequence) {
  if (opts_.store == nullptr) return;
  Bytes manifest_text;
  try {
    manifest_text = opts_.store->get(BlobKey::parse(manifest_key));
  } catch (const Error& e) {
    if (e.code() == Errc::kNotFound) {
      raise(Errc::kMissingBlob, "published manifest " + manifest_key + " is not in the store");
    }
    throw;
  }
  RestartManifest manifest = decode_manifest(manifest_text);
  if (manifest.job_id != job_id || manifest.sequence != sequence) {
    raise(Errc::kManifestMismatch, "manifest at " + manifest_key + " does not match publish of job " +
                                       job_id + " seq " + std::to_string(sequence));
  }
  Bytes image;
  try {
    image = opts_.store->get(BlobKey::parse(manifest.cmi_blob_key));
  } catch (const Error& e) {
    if (e.code() == Errc::kNotFound) {
      raise(Errc::kMissingBlob, "manifest names missing image " + manifest.cmi_blob_key);
    }
    throw;
  }
  decode_cmi(image);  // DigestMismatch on a torn or corrupt image
}

JobRecord Registry::create(const std::string& job_id, const std::string& app_name,
                           const std::vector<std::string>& input_keys) {
  require_token(job_id, "job id");
  require_token(app_name, "app name");
  for (const auto& k : input_keys) require_token(k, "input key");
  std::lock_guard lk(mu_);
  if (jobs_.count(job_id) > 0) {
    raise(Errc::kInvalidTransition, "job " + job_id + " already exists");
  }
  std::uint64_t now = opts_.wall_ms() / 1000;
  append({{"op", "create"},
          {"job", job_id},
          {"app", app_name},
          {"inputs", join_keys(input_keys)},
          {"ts", std::to_string(now)}});
  JobRecord rec;
  rec.job_id = job_id;
  rec.app_name = app_name;
  rec.input_keys = input_keys;
  rec.updated_at = now;
  jobs_[job_id] = rec;
  emit("job_created", job_id, {{"app", app_name}});
  return rec;
}

std::vector<JobRecord> Registry::list() const {
  std::lock_guard lk(mu_);
  std::vector<JobRecord> out;
  out.reserve(jobs_.size());
  for (const auto& [_, rec] : jobs_) out.push_back(rec);
  return out;
}

std::optional<JobRecord> Registry::get(const std::string& job_id) const {
  std::lock_guard lk(mu_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::optional<JobRecord> Registry::claim_next(const std::string& node_id) {
  require_token(node_id, "node id");
  std::lock_guard lk(mu_);
  std::uint64_t now_ms = opts_.wall_ms();
  for (auto& [_, rec] : jobs_) {
    if (rec.status == JobStatus::kFinished) continue;
    bool lease_live = !rec.claimed_by.empty() && rec.claim_expires_ms > now_ms;
    if (lease_live) continue;
    append({{"op", "claim"},
            {"job", rec.job_id},
            {"node", node_id},
            {"ts", std::to_string(now_ms / 1000)}});
    rec.claimed_by = node_id;
    rec.claim_expires_ms = now_ms + static_cast<std::uint64_t>(opts_.lease_secs) * 1000;
    rec.updated_at = now_ms / 1000;
    emit("job_claimed", rec.job_id, {{"node", node_id}, {"status", job_status_name(rec.status)}});
    return rec;
  }
  return std::nullopt;
}

JobRecord Registry::publish(const std::string& job_id, const std::string& status,
                            const std::vector<std::string>& keys, std::uint64_t sequence,
                            const std::string& node_id) {
  JobStatus target = job_status_from(status);
  if (target == JobStatus::kNew) {
    raise(Errc::kInvalidStatus, "jobs cannot be published as \"new\"");
  }
  require_token(node_id, "node id");
  for (const auto& k : keys) require_token(k, "published key");

  std::lock_guard lk(mu_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) raise(Errc::kNotFound, "no job " + job_id);
  JobRecord& rec = it->second;
  std::uint64_t now_ms = opts_.wall_ms();

  if (target == JobStatus::kCkpt) {
    if (rec.status == JobStatus::kFinished) {
      raise(Errc::kInvalidTransition, "job " + job_id + " is finished; finished is terminal");
    }
    if (keys.size() != 1) {
      raise(Errc::kInvalidArgument, "ckpt publish carries exactly one manifest key");
    }
    // A retried delivery of the latest accepted publish is fine; answering it
    // again must not touch the journal.
    if (rec.status == JobStatus::kCkpt && sequence == rec.ckpt_sequence &&
        keys[0] == rec.cmi_manifest_key) {
      return rec;
    }
    if (sequence <= rec.ckpt_sequence) {
      raise(Errc::kStaleSequence, "sequence " + std::to_string(sequence) + " is not above " +
                                      std::to_string(rec.ckpt_sequence) + " for job " + job_id);
    }
    verify_ckpt_chain(job_id, keys[0], sequence);
    append({{"op", "publish"},
            {"job", job_id},
            {"status", "ckpt"},
            {"seq", std::to_string(sequence)},
            {"manifest", keys[0]},
            {"node", node_id},
            {"ts", std::to_string(now_ms / 1000)}});
    std::string prior_claimant = rec.claimed_by;
    rec.status = JobStatus::kCkpt;
    rec.ckpt_sequence = sequence;
    rec.cmi_manifest_key = keys[0];
    rec.claimed_by = node_id;
    rec.claim_expires_ms = now_ms + static_cast<std::uint64_t>(opts_.lease_secs) * 1000;
    rec.updated_at = now_ms / 1000;
    std::map<std::string, std::string> attrs{{"seq", std::to_string(sequence)},
                                             {"node", node_id}};
    if (!prior_claimant.empty() && prior_claimant != node_id) attrs["from"] = prior_claimant;
    emit("ckpt_recorded", job_id, std::move(attrs));
    return rec;
  }

  // finished
  if (rec.status == JobStatus::kFinished) {
    if (keys == rec.product_keys) return rec;  // retried delivery
    raise(Errc::kInvalidTransition, "job " + job_id + " is finished; finished is terminal");
  }
  if (keys.empty()) {
    raise(Errc::kInvalidArgument, "finished publish carries at least one product key");
  }
  verify_keys_exist(keys);
  append({{"op", "publish"},
          {"job", job_id},
          {"status", "finished"},
          {"products", join_keys(keys)},
          {"node", node_id},
          {"ts", std::to_string(now_ms / 1000)}});
  rec.status = JobStatus::kFinished;
  rec.product_keys = keys;
  rec.claimed_by.clear();
  rec.claim_expires_ms = 0;
  rec.updated_at = now_ms / 1000;
  emit("finished_recorded", job_id, {{"node", node_id}});
  return rec;
}

std::vector<std::string> Registry::requeue_dead(const std::string& node_id) {
  require_token(node_id, "node id");
  std::lock_guard lk(mu_);
  std::vector<std::string> released;
  std::uint64_t now = opts_.wall_ms() / 1000;
  for (auto& [_, rec] : jobs_) {
    if (rec.claimed_by != node_id) continue;
    append({{"op", "release"}, {"job", rec.job_id}, {"ts", std::to_string(now)}});
    rec.claimed_by.clear();
    rec.claim_expires_ms = 0;
    rec.updated_at = now;
    released.push_back(rec.job_id);
    emit("claim_released", rec.job_id, {{"node", node_id}});
  }
  return released;
}

void Registry::renew(const std::string& job_id, const std::string& node_id) {
  std::lock_guard lk(mu_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return;
  JobRecord& rec = it->second;
  if (rec.claimed_by != node_id) return;
  rec.claim_expires_ms = opts_.wall_ms() + static_cast<std::uint64_t>(opts_.lease_secs) * 1000;
}

std::string render_job_list(const std::vector<std::pair<std::string, std::string>>& rows) {
  std::string out = "[";
  bool first = true;
  for (const auto& [id, status] : rows) {
    if (!first) out += ',';
    first = false;
    out += "[\"" + id + "\",\"" + status + "\"]";
  }
  out += "]";
  return out;
}

void record_to_message(const JobRecord& rec, Message& out) {
  out.set("job_id", rec.job_id);
  out.set("status", job_status_name(rec.status));
  out.set("app_name", rec.app_name);
  out.set_u64("sequence", rec.ckpt_sequence);
  out.set_u64("updated_at", rec.updated_at);
  if (!rec.claimed_by.empty()) out.set("claimed_by", rec.claimed_by);
  if (!rec.cmi_manifest_key.empty()) out.set("manifest_key", rec.cmi_manifest_key);
  for (std::size_t i = 0; i < rec.input_keys.size(); ++i) {
    out.set("inputs." + std::to_string(i), rec.input_keys[i]);
  }
  for (std::size_t i = 0; i < rec.product_keys.size(); ++i) {
    out.set("products." + std::to_string(i), rec.product_keys[i]);
  }
}

JobRecord record_from_message(const Message& msg) {
  JobRecord rec;
  rec.job_id = msg.get("job_id");
  rec.status = job_status_from(msg.get("status"));
  rec.app_name = msg.opt("app_name").value_or("");
  rec.ckpt_sequence = msg.has("sequence") ? msg.get_u64("sequence") : 0;
  rec.updated_at = msg.has("updated_at") ? msg.get_u64("updated_at") : 0;
  rec.claimed_by = msg.opt("claimed_by").value_or("");
  rec.cmi_manifest_key = msg.opt("manifest_key").value_or("");
  for (std::size_t i = 0;; ++i) {
    auto v = msg.opt("inputs." + std::to_string(i));
    if (!v) break;
    rec.input_keys.push_back(*v);
  }
  for (std::size_t i = 0;; ++i) {
    auto v = msg.opt("products." + std::to_string(i));
    if (!v) break;
    rec.product_keys.push_back(*v);
  }
  return rec;
}

SchedulerServer::SchedulerServer(Registry& registry, std::shared_ptr<EventSink> events)
    : registry_(registry), events_(std::move(events)) {}

void SchedulerServer::start(const HostPort& listen) {
  server_.start(listen, [this](const Message& req) -> std::optional<Message> {
    return handle(req);
  });
}

void SchedulerServer::stop() { server_.stop(); }

namespace {

std::vector<std::string> collect_keys(const Message& req, const std::string& prefix) {
  std::vector<std::string> keys;
  for (std::size_t i = 0;; ++i) {
    auto v = req.opt(prefix + "." + std::to_string(i));
    if (!v) break;
    keys.push_back(*v);
  }
  return keys;
}

}  // namespace

Message SchedulerServer::handle(const Message& req) {
  const std::string& service = req.get("service");
  if (service == "list_jobs") {
    Message resp = ok_response();
    auto rows = registry_.list();
    resp.set_u64("count", rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::string p = "jobs." + std::to_string(i) + ".";
      resp.set(p + "job_id", rows[i].job_id);
      resp.set(p + "status", job_status_name(rows[i].status));
    }
    return resp;
  }
  if (service == "get_job") {
    Message resp = ok_response();
    if (auto job_id = req.opt("job_id")) {
      auto rec = registry_.get(*job_id);
      if (!rec) raise(Errc::kNotFound, "no job " + *job_id);
      resp.set("found", "1");
      record_to_message(*rec, resp);
      return resp;
    }
    auto rec = registry_.claim_next(req.get("node"));
    if (!rec) {
      resp.set("found", "0");
      return resp;
    }
    resp.set("found", "1");
    record_to_message(*rec, resp);
    return resp;
  }
  if (service == "publish_job") {
    std::uint64_t seq = req.has("sequence") ? req.get_u64("sequence") : 0;
    JobRecord rec = registry_.publish(req.get("job_id"), req.get("status"),
                                      collect_keys(req, "keys"), seq, req.get("node"));
    Message resp = ok_response();
    record_to_message(rec, resp);
    return resp;
  }
  if (service == "requeue_dead") {
    auto released = registry_.requeue_dead(req.get("node"));
    Message resp = ok_response();
    resp.set_u64("count", released.size());
    for (std::size_t i = 0; i < released.size(); ++i) {
      resp.set("released." + std::to_string(i), released[i]);
    }
    return resp;
  }
  if (service == "add_job") {
    JobRecord rec =
        registry_.create(req.get("job_id"), req.get("app_name"), collect_keys(req, "inputs"));
    Message resp = ok_response();
    record_to_message(rec, resp);
    return resp;
  }
  if (service == "renew") {
    registry_.renew(req.get("job_id"), req.get("node"));
    return ok_response();
  }
  if (service == "health") {
    Message resp = ok_response();
    resp.set("node_id", "scheduler");
    resp.set_u64("jobs", registry_.list().size());
    return resp;
  }
  raise(Errc::kMalformedMessage, "unknown service '" + service + "'");
}

}  // namespace navhop
