#include "navhop/runtime.hpp"

#include <algorithm>
#include <cstdio>

#include "navhop/strings.hpp"

namespace navhop {

std::string job_namespace(const std::string& job_id) { return "job-" + job_id; }

BlobKey cmi_key(const std::string& job_id, std::uint64_t sequence) {
  char name[32];
  std::snprintf(name, sizeof(name), "cmi/%08llu.cmi",
                static_cast<unsigned long long>(sequence));
  return BlobKey{job_namespace(job_id), name};
}

BlobKey manifest_key(const std::string& job_id) {
  return BlobKey{job_namespace(job_id), "current.manifest"};
}

BlobKey input_key(const std::string& job_id, const std::string& name) {
  return BlobKey{job_namespace(job_id), "input/" + name};
}

BlobKey product_key(const std::string& job_id, const std::string& name) {
  return BlobKey{job_namespace(job_id), "product/" + name};
}

std::uint64_t sequence_of_cmi_name(const std::string& name) {
  if (name.rfind("cmi/", 0) != 0 || name.size() <= 8) return 0;
  if (name.compare(name.size() - 4, 4, ".cmi") != 0) return 0;
  auto seq = parse_u64(std::string_view(name).substr(4, name.size() - 8));
  return seq.value_or(0);
}

bool retryable(Errc code) {
  switch (code) {
    case Errc::kStoreUnavailable:
    case Errc::kNodeUnreachable:
    case Errc::kSchedulerUnreachable:
    case Errc::kTimeout:
      return true;
    default:
      return false;
  }
}

const NodeDescriptor* NodeEnv::find_node(const std::string& node_id) const {
  for (const auto& n : nodes) {
    if (n.node_id == node_id) return &n;
  }
  return nullptr;
}

NodeDescriptor NodeEnv::other_node() const {
  const NodeDescriptor* best = nullptr;
  for (const auto& n : nodes) {
    if (n.node_id == self.node_id) continue;
    if (best == nullptr || n.node_id < best->node_id) best = &n;
  }
  if (best == nullptr) raise(Errc::kInvalidArgument, "cluster has no node besides " + self.node_id);
  return *best;
}

void NodeEnv::emit(const std::string& type, const std::string& job_id,
                   std::map<std::string, std::string> attrs) const {
  if (!events) return;
  events->emit(Event{self.node_id, type, job_id, std::move(attrs)});
}

Message scheduler_call(NodeEnv& env, const Message& request) {
  Message resp = with_retry(env.retry, [&] {
    try {
      return rpc(env.scheduler, request);
    } catch (const Error& e) {
      if (e.code() == Errc::kNodeUnreachable) {
        raise(Errc::kSchedulerUnreachable, e.what());
      }
      throw;
    }
  });
  ensure_ok(resp);
  return resp;
}

namespace {

// Drop checkpoint images older than the one the manifest now points at.
// Best effort: a leftover image is re-pruned by the next checkpoint.
void prune_stale_cmis(NodeEnv& env, const std::string& job_id, std::uint64_t keep) {
  try {
    for (const auto& meta : env.store->list(job_namespace(job_id))) {
      std::uint64_t seq = sequence_of_cmi_name(meta.key.name);
      if (seq != 0 && seq < keep) {
        try {
          env.store->remove(meta.key);
        } catch (const Error&) {
        }
      }
    }
  } catch (const Error&) {
  }
}

}  // namespace

std::uint64_t checkpoint_and_register(TaskState& state, NodeEnv& env,
                                      const std::string& claim_node) {
  const std::string& job = state.job_id;
  std::uint64_t seq = state.ckpt_sequence + 1;
  env.emit("ckpt_begin", job,
           {{"seq", std::to_string(seq)}, {"stage", std::to_string(state.next_stage)}});

  Bytes payload = serialize_task_payload(state);
  Bytes image = encode_cmi(job, seq, state.next_stage, payload, env.clock());
  BlobKey image_key = cmi_key(job, seq);
  with_retry(env.retry, [&] { return env.store->put_atomic(image_key, image); });
  env.emit("cmi_promoted", job,
           {{"seq", std::to_string(seq)}, {"bytes", std::to_string(image.size())}});

  RestartManifest manifest{job, image_key.full(), state.app_name, state.next_stage, seq};
  Bytes manifest_text = encode_manifest(manifest);
  with_retry(env.retry, [&] { return env.store->put_atomic(manifest_key(job), manifest_text); });
  env.emit("manifest_promoted", job,
           {{"seq", std::to_string(seq)}, {"stage", std::to_string(state.next_stage)}});
  state.ckpt_sequence = seq;

  Message req;
  req.set("service", "publish_job")
      .set("job_id", job)
      .set("status", "ckpt")
      .set_u64("sequence", seq)
      .set("node", claim_node)
      .set("keys.0", manifest_key(job).full());
  scheduler_call(env, req);
  env.emit("ckpt_published", job, {{"seq", std::to_string(seq)}, {"claim", claim_node}});

  prune_stale_cmis(env, job, seq);
  return seq;
}

void hop(TaskState& state, const NodeDescriptor& dest, NodeEnv& env) {
  // Refuse before touching the store so a bad destination promotes nothing.
  // The address comes from cluster config, not the caller, so a stale
  // descriptor still reaches whoever serves the slot now.
  const NodeDescriptor* known = env.find_node(dest.node_id);
  if (known == nullptr) {
    raise(Errc::kNodeUnreachable, "hop destination '" + dest.node_id + "' not in cluster config");
  }
  HostPort dest_addr = known->addr;

  std::uint64_t seq = checkpoint_and_register(state, env, dest.node_id);

  env.emit("hop_request", state.job_id,
           {{"dest", dest.node_id}, {"seq", std::to_string(seq)}});
  Message req;
  req.set("service", "hop")
      .set("job_id", state.job_id)
      .set("manifest_key", manifest_key(state.job_id).full())
      .set("source_node", env.self.node_id);
  // Deliberately a single attempt: a retried hop could restart the task on
  // the destination twice. A lost request is recovered through the scheduler,
  // which already records the destination as the claim holder.
  Message resp = rpc(dest_addr, req, 30000);
  ensure_ok(resp);
  env.emit("hop_acked", state.job_id, {{"dest", dest.node_id}});
}

void publish(TaskState& state, const std::string& status, NodeEnv& env) {
  if (status == "ckpt") {
    checkpoint_and_register(state, env, env.claim_name());
    return;
  }
  if (status == "finished") {
    auto it = state.vars.find("product_key");
    if (it == state.vars.end()) {
      raise(Errc::kMissingBlob, "task vars carry no product_key");
    }
    BlobKey product = BlobKey::parse(it->second.as_str());
    bool present = with_retry(env.retry, [&] { return env.store->exists(product); });
    if (!present) {
      raise(Errc::kMissingBlob, "product blob " + product.full() + " is not in the store");
    }
    Message req;
    req.set("service", "publish_job")
        .set("job_id", state.job_id)
        .set("status", "finished")
        .set_u64("sequence", state.ckpt_sequence)
        .set("node", env.claim_name())
        .set("keys.0", product.full());
    scheduler_call(env, req);
    env.emit("finished_published", state.job_id, {{"product", product.full()}});
    return;
  }
  raise(Errc::kInvalidStatus, "status must be \"ckpt\" or \"finished\", got \"" + status + "\"");
}

void StageContext::hop(const NodeDescriptor& dest) {
  navhop::hop(state_, dest, env_);
  migrated_ = true;
  dest_node_id_ = dest.node_id;
}

void StageContext::publish_ckpt() { navhop::publish(state_, "ckpt", env_); }

void StageContext::publish_finished() { navhop::publish(state_, "finished", env_); }

void StageContext::emit_mid() {
  env_.emit("stage_mid", state_.job_id, {{"stage", std::to_string(current_stage_)}});
}

TaskOutcome run_task(const StageMachine& machine, TaskState& state, NodeEnv& env) {
  const auto stage_count = static_cast<std::uint32_t>(machine.stages.size());
  if (state.next_stage > stage_count) {
    return TaskOutcome::failed(Errc::kStageFailure,
                               "next_stage " + std::to_string(state.next_stage) + " out of range");
  }
  StageContext ctx(machine, state, env);
  for (std::uint32_t i = state.next_stage; i < stage_count;) {
    const Stage& stage = machine.stages[i];
    ctx.current_stage_ = i;
    env.emit("stage_start", state.job_id,
             {{"stage", std::to_string(i)}, {"label", stage.label}});
    // Resume point if this stage checkpoints: the one after it.
    state.next_stage = i + 1;
    try {
      stage.run(ctx);
    } catch (const Error& e) {
      return TaskOutcome::failed(
          Errc::kStageFailure, "stage " + std::to_string(i) + " (" + stage.label + "): " +
                                   std::string(errc_name(e.code())) + ": " + e.what());
    } catch (const std::exception& e) {
      return TaskOutcome::failed(
          Errc::kStageFailure, "stage " + std::to_string(i) + " (" + stage.label + "): " + e.what());
    }
    if (ctx.migrated_) {
      // Post-hop silence: nothing further from this process for this task.
      return TaskOutcome::migrated(ctx.dest_node_id_);
    }
    env.emit("stage_end", state.job_id, {{"stage", std::to_string(i)}});
    i = state.next_stage;
  }
  return TaskOutcome::completed();
}

LoadedCheckpoint load_checkpoint(const std::string& job_id, NodeEnv& env) {
  Bytes manifest_text;
  try {
    manifest_text = with_retry(env.retry, [&] { return env.store->get(manifest_key(job_id)); });
  } catch (const Error& e) {
    if (e.code() == Errc::kNotFound) {
      raise(Errc::kNoCheckpoint, "no committed checkpoint for job " + job_id);
    }
    throw;
  }
  RestartManifest manifest = decode_manifest(manifest_text);
  if (manifest.job_id != job_id) {
    raise(Errc::kManifestMismatch, "manifest belongs to job " + manifest.job_id + ", not " + job_id);
  }

  BlobKey image_key = BlobKey::parse(manifest.cmi_blob_key);
  Bytes image_bytes;
  try {
    image_bytes = with_retry(env.retry, [&] { return env.store->get(image_key); });
  } catch (const Error& e) {
    if (e.code() == Errc::kNotFound) {
      raise(Errc::kMissingBlob, "manifest names missing image " + manifest.cmi_blob_key);
    }
    throw;
  }
  CheckpointImage image = decode_cmi(image_bytes);
  if (image.job_id != manifest.job_id || image.stage != manifest.stage ||
      image.sequence != manifest.sequence) {
    raise(Errc::kManifestMismatch, "image and manifest disagree for job " + job_id);
  }
  return LoadedCheckpoint{std::move(manifest), std::move(image)};
}

TaskOutcome restart(const std::string& job_id, NodeEnv& env) {
  LoadedCheckpoint loaded = load_checkpoint(job_id, env);
  if (env.apps == nullptr || !env.apps->has(loaded.manifest.app_name)) {
    raise(Errc::kUnknownApp, "no app registered as '" + loaded.manifest.app_name + "'");
  }
  TaskState state;
  state.job_id = job_id;
  state.next_stage = loaded.image.stage;
  state.ckpt_sequence = loaded.image.sequence;
  apply_task_payload(state, loaded.image.payload);
  if (state.app_name != loaded.manifest.app_name) {
    raise(Errc::kManifestMismatch, "payload app '" + state.app_name + "' vs manifest app '" +
                                       loaded.manifest.app_name + "'");
  }
  const StageMachine& machine = env.apps->find(state.app_name);
  if (state.next_stage > machine.stages.size()) {
    raise(Errc::kManifestMismatch, "resume stage " + std::to_string(state.next_stage) +
                                       " out of range for " + state.app_name);
  }
  return run_task(machine, state, env);
}

}  // namespace navhop
