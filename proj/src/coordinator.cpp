// Copyright 2026 The sciflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sciflow/coordinator.hpp"

#include <algorithm>

#include "sciflow/crypto.hpp"

namespace sciflow {

using nlohmann::json;

namespace {

std::int64_t to_ns(Timestamp t) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(t.time_since_epoch()).count();
}

Timestamp from_ns(std::int64_t ns) {
  return Timestamp(std::chrono::duration_cast<Clock::duration>(std::chrono::nanoseconds(ns)));
}

bool runner_accepts(const RunnerRegistration& runner, const std::vector<std::string>& tags) {
  if (tags.empty()) return runner.run_untagged;
  return std::all_of(tags.begin(), tags.end(),
                     [&](const std::string& t) { return runner.tags.count(t) > 0; });
}

[[noreturn]] void stale(const std::string& lease_id, const std::string& why) {
  throw Error(ErrorCode::kStaleLease, "lease " + lease_id + " " + why);
}

}  // namespace

Coordinator::Coordinator(CoordinatorConfig config, ClockFn clock)
    : config_(std::move(config)),
      clock_(clock ? std::move(clock) : ClockFn([] { return Clock::now(); })),
      store_(config_.data_dir.empty() ? std::filesystem::path()
                                      : config_.data_dir / "artifacts") {
  if (config_.lease_ttl <= std::chrono::milliseconds::zero()) {
    throw Error(ErrorCode::kConfigError, "lease ttl must be positive");
  }
  if (config_.max_child_depth < 0) {
    throw Error(ErrorCode::kConfigError, "max child depth must not be negative");
  }
  if (!config_.data_dir.empty()) {
    log_ = std::make_unique<EventLog>(config_.data_dir / "events.log", config_.sync_writes);
    replay();
  }
}

Coordinator::~Coordinator() = default;

// --- persistence ---------------------------------------------------------------

void Coordinator::append(const json& event) {
  if (log_) log_->append(event);
}

void Coordinator::replay() {
  for (const auto& event : log_->recovered()) apply(event);
  log_->release_recovered();
}

// Every state change goes through apply(), live or replayed, so a restart
// rebuilds exactly what the running process held. Callers on the live path
// hold the affected pipeline's mutex (and the parent's, for children).
void Coordinator::apply(const json& e) {
  const auto type = e.at("type").get<std::string>();

  if (type == "runner_registered") {
    RunnerRegistration r;
    r.runner_id = e.at("runner_id");
    r.name = e.at("name");
    r.tags = e.at("tags").get<std::set<std::string>>();
    r.executor_kind = executor_kind_from_string(e.at("executor").get<std::string>())
                          .value_or(ExecutorKind::kShell);
    r.run_untagged = e.at("run_untagged");
    r.token_sha256 = e.at("token_sha256");
    std::unique_lock lock(runners_mu_);
    runners_by_token_[r.token_sha256] = std::move(r);
    return;
  }

  if (type == "pipeline_submitted") {
    auto p = std::make_shared<PipelineEntry>();
    p->id = e.at("pipeline_id");
    p->sequence = e.at("sequence");
    p->repo = {e.at("repo_url"), e.at("commit")};
    p->source = e.at("source");
    p->depth = e.at("depth");
    p->created_at = from_ns(e.at("at"));
    std::shared_ptr<PipelineEntry> parent;
    if (!e.at("parent").is_null()) {
      p->parent = ParentLink{e["parent"].at("pipeline_id"), e["parent"].at("job")};
      parent = find_pipeline(p->parent->pipeline_id);
    }
    p->state = release_ready(initial_state(build_plan(load_pipeline(p->source), p->id)),
                             p->created_at);
    if (parent) parent->children.push_back(p->id);
    std::unique_lock lock(registry_mu_);
    next_sequence_ = std::max(next_sequence_, p->sequence + 1);
    pipelines_[p->id] = p;
    order_.insert(std::upper_bound(order_.begin(), order_.end(), p,
                                   [](const auto& a, const auto& b) {
                                     return a->sequence < b->sequence;
                                   }),
                  p);
    return;
  }

  auto p = find_pipeline(e.at("pipeline_id"));
  const auto at = e.contains("at") ? from_ns(e["at"]) : Timestamp{};

  if (type == "lease_issued") {
    LeaseEntry entry;
    entry.lease.lease_id = e.at("lease_id");
    entry.lease.pipeline_id = p->id;
    entry.lease.job = p->state.plan.spec(e.at("job").get<std::string>());
    entry.lease.repo = p->repo;
    entry.lease.artifact_manifest = entry.lease.job.artifact_paths;
    entry.lease.deadline = from_ns(e.at("deadline"));
    entry.runner_id = e.at("runner_id");
    p->state = record_transition(p->state, entry.lease.job.name, JobStatus::kRunning, at);
    p->last_runner[entry.lease.job.name] = entry.runner_id;
    {
      std::lock_guard lock(leases_mu_);
      lease_pipeline_[entry.lease.lease_id] = p->id;
    }
    p->leases[entry.lease.lease_id] = std::move(entry);
    return;
  }

  if (type == "heartbeat" || type == "job_finished" || type == "lease_expired") {
    const std::string lease_id = e.at("lease_id");
    auto it = p->leases.find(lease_id);
    if (it == p->leases.end()) {
      throw Error(ErrorCode::kIoError, "event for unknown lease " + lease_id);
    }
    const auto job = it->second.lease.job.name;
    if (e.contains("log")) p->logs[job] += base64_decode(e["log"].get<std::string>());
    if (type == "heartbeat") {
      it->second.lease.deadline = from_ns(e.at("deadline"));
    } else if (type == "job_finished") {
      const auto to = job_status_from_string(e.at("status").get<std::string>()).value();
      p->state = release_ready(record_transition(p->state, job, to, at), at);
      p->leases.erase(it);
    } else {
      p->state = requeue_job(p->state, job, at);
      p->logs[job] += "[lease " + lease_id + " expired; job returned to pending]\n";
      p->leases.erase(it);
    }
    return;
  }

  if (type == "artifact_stored") {
    ArtifactRecord record{e.at("artifact_id"), p->id, e.at("job"), e.at("path"),
                          e.at("size")};
    auto same_path = std::find_if(p->artifacts.begin(), p->artifacts.end(),
                                  [&](const ArtifactRecord& r) {
                                    return r.job == record.job && r.path == record.path;
                                  });
    if (same_path != p->artifacts.end()) {
      *same_path = std::move(record);
    } else {
      p->artifacts.push_back(std::move(record));
    }
    return;
  }

  throw Error(ErrorCode::kIoError, "unknown event type '" + type + "'");
}

// --- lookup ----------------------------------------------------------------------

std::shared_ptr<Coordinator::PipelineEntry> Coordinator::find_pipeline(
    const std::string& id) const {
  std::shared_lock lock(registry_mu_);
  auto it = pipelines_.find(id);
  if (it == pipelines_.end()) throw Error(ErrorCode::kNotFound, "no pipeline '" + id + "'");
  return it->second;
}

std::vector<std::shared_ptr<Coordinator::PipelineEntry>> Coordinator::pipelines_in_order()
    const {
  std::shared_lock lock(registry_mu_);
  return order_;
}

std::vector<std::string> Coordinator::pipeline_ids() const {
  std::vector<std::string> ids;
  for (const auto& p : pipelines_in_order()) ids.push_back(p->id);
  return ids;
}

std::vector<RunnerRegistration> Coordinator::runners() const {
  std::shared_lock lock(runners_mu_);
  std::vector<RunnerRegistration> out;
  for (const auto& [_, r] : runners_by_token_) out.push_back(r);
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.runner_id < b.runner_id; });
  return out;
}

RunnerRegistration Coordinator::authenticate(const std::string& token) const {
  const auto hash = sha256_hex(token);
  std::shared_lock lock(runners_mu_);
  auto it = runners_by_token_.find(hash);
  if (token.empty() || it == runners_by_token_.end()) {
    throw Error(ErrorCode::kAuthenticationFailed, "unknown runner token");
  }
  return it->second;
}

std::shared_ptr<Coordinator::PipelineEntry> Coordinator::pipeline_of_lease(
    const std::string& lease_id) const {
  std::string pipeline_id;
  {
    std::lock_guard lock(leases_mu_);
    auto it = lease_pipeline_.find(lease_id);
    if (it == lease_pipeline_.end()) stale(lease_id, "is unknown");
    pipeline_id = it->second;
  }
  return find_pipeline(pipeline_id);
}

Coordinator::LeaseEntry& Coordinator::live_lease(PipelineEntry& p, const std::string& lease_id,
                                                 const RunnerRegistration& runner) {
  auto it = p.leases.find(lease_id);
  if (it == p.leases.end()) stale(lease_id, "is no longer live");
  if (it->second.runner_id != runner.runner_id) {
    throw Error(ErrorCode::kAuthenticationFailed,
                "lease " + lease_id + " belongs to another runner");
  }
  const auto t = now();
  if (it->second.lease.deadline <= t) {
    expire_locked(p, t);
    stale(lease_id, "expired");
  }
  return it->second;
}

// --- operations -----------------------------------------------------------------

std::string Coordinator::submit_pipeline(const std::string& repo_url, const std::string& commit,
                                         const std::string& definition_source) {
  if (repo_url.empty()) throw Error(ErrorCode::kInvalidArgument, "repository url is empty");
  if (commit.empty()) throw Error(ErrorCode::kInvalidArgument, "commit is empty");
  build_plan(load_pipeline(definition_source));  // throws on any error
  return create_pipeline({repo_url, commit}, definition_source, std::nullopt, 0);
}

std::string Coordinator::create_pipeline(const RepoRef& repo, const std::string& source,
                                         std::optional<ParentLink> parent, int depth) {
  const auto id = random_hex(12);
  std::uint64_t sequence;
  {
    std::unique_lock lock(registry_mu_);
    sequence = next_sequence_++;
  }
  json event = {{"type", "pipeline_submitted"},
                {"pipeline_id", id},
                {"sequence", sequence},
                {"repo_url", repo.url},
                {"commit", repo.commit},
                {"source", source},
                {"depth", depth},
                {"at", to_ns(now())},
                {"parent", nullptr}};
  if (parent) event["parent"] = {{"pipeline_id", parent->pipeline_id}, {"job", parent->job}};
  // For a child, the caller holds the parent's mutex; apply() links it.
  append(event);
  apply(event);
  return id;
}

IssuedRunner Coordinator::register_runner(const std::string& name,
                                          const std::set<std::string>& tags,
                                          ExecutorKind kind, bool run_untagged) {
  if (name.empty()) throw Error(ErrorCode::kInvalidArgument, "runner name is empty");
  for (const auto& tag : tags) {
    if (!is_valid_tag(tag)) {
      throw Error(ErrorCode::kInvalidArgument, "invalid tag '" + tag + "'");
    }
  }
  IssuedRunner issued{random_hex(8), random_hex(32)};
  const json event = {{"type", "runner_registered"},
                      {"runner_id", issued.runner_id},
                      {"name", name},
                      {"tags", tags},
                      {"executor", std::string(to_string(kind))},
                      {"run_untagged", run_untagged},
                      {"token_sha256", sha256_hex(issued.token)}};
  append(event);
  apply(event);
  return issued;
}

PollResult Coordinator::poll_job(const std::string& token) {
  const auto runner = authenticate(token);
  expire_leases();
  for (const auto& p : pipelines_in_order()) {
    std::lock_guard lock(p->mu);
    for (const auto& group : p->state.plan.ordered_stages) {
      for (const auto& job : group.jobs) {
        if (p->state.status(job) != JobStatus::kPending) continue;
        if (!runner_accepts(runner, p->state.plan.spec(job).tags)) continue;
        const auto t = now();
        const auto lease_id = random_hex(16);
        const json event = {{"type", "lease_issued"},
                            {"pipeline_id", p->id},
                            {"lease_id", lease_id},
                            {"job", job},
                            {"runner_id", runner.runner_id},
                            {"deadline", to_ns(t + config_.lease_ttl)},
                            {"at", to_ns(t)}};
        append(event);
        apply(event);
        return {p->leases.at(lease_id).lease, config_.retry_after};
      }
    }
  }
  return {std::nullopt, config_.retry_after};
}

JobStatus Coordinator::update_job(const std::string& token, const std::string& lease_id,
                                  JobStatus to, std::string_view log_chunk) {
  const auto runner = authenticate(token);
  auto p = pipeline_of_lease(lease_id);
  std::lock_guard lock(p->mu);
  auto& entry = live_lease(*p, lease_id, runner);
  const auto job = entry.lease.job.name;
  const auto t = now();
  json event = {{"pipeline_id", p->id}, {"lease_id", lease_id}, {"at", to_ns(t)}};
  if (!log_chunk.empty()) event["log"] = base64_encode(log_chunk);
  if (to == JobStatus::kRunning) {
    event["type"] = "heartbeat";
    event["deadline"] = to_ns(t + config_.lease_ttl);
  } else if (to == JobStatus::kSuccess || to == JobStatus::kFailed) {
    event["type"] = "job_finished";
    event["status"] = std::string(to_string(to));
  } else {
    throw Error(ErrorCode::kIllegalTransition,
                "job '" + job + "' cannot go from running to " + std::string(to_string(to)));
  }
  append(event);
  apply(event);
  return p->state.status(job);
}

std::string Coordinator::upload_artifact(const std::string& token, const std::string& lease_id,
                                         const std::string& path, std::string_view payload) {
  const auto runner = authenticate(token);
  auto p = pipeline_of_lease(lease_id);
  std::lock_guard lock(p->mu);
  const auto& lease = live_lease(*p, lease_id, runner).lease;
  if (!is_safe_relative_path(path)) {
    throw Error(ErrorCode::kPathTraversal, "artifact path '" + path + "' is not a safe relative path");
  }
  const auto& manifest = lease.artifact_manifest;
  if (!manifest.empty() && std::find(manifest.begin(), manifest.end(), path) == manifest.end()) {
    throw Error(ErrorCode::kArtifactNotDeclared,
                "artifact path '" + path + "' is not declared by job '" + lease.job.name + "'");
  }
  if (payload.size() > config_.max_artifact_bytes) {
    throw Error(ErrorCode::kPayloadTooLarge,
                std::to_string(payload.size()) + " bytes exceeds the limit of " +
                    std::to_string(config_.max_artifact_bytes));
  }
  const auto id = store_.put(payload);
  const json event = {{"type", "artifact_stored"}, {"pipeline_id", p->id},
                      {"job", lease.job.name},     {"path", path},
                      {"artifact_id", id},         {"size", payload.size()}};
  append(event);
  apply(event);
  return id;
}

std::string Coordinator::trigger_child_pipeline(const std::string& token,
                                                const std::string& lease_id,
                                                const std::string& artifact_id) {
  const auto runner = authenticate(token);
  auto p = pipeline_of_lease(lease_id);
  std::lock_guard lock(p->mu);
  const auto job = live_lease(*p, lease_id, runner).lease.job.name;
  const auto source = store_.get(artifact_id);
  if (!source) throw Error(ErrorCode::kNotFound, "no artifact '" + artifact_id + "'");
  if (p->depth + 1 > config_.max_child_depth) {
    throw Error(ErrorCode::kDepthExceeded,
                "child pipelines may nest at most " + std::to_string(config_.max_child_depth) +
                    " deep");
  }
  build_plan(load_pipeline(*source));
  return create_pipeline(p->repo, *source, ParentLink{p->id, job}, p->depth + 1);
}

void Coordinator::expire_locked(PipelineEntry& p, Timestamp at) {
  std::vector<std::string> expired;
  for (const auto& [id, entry] : p.leases) {
    if (entry.lease.deadline <= at) expired.push_back(id);
  }
  for (const auto& id : expired) {
    const json event = {
        {"type", "lease_expired"}, {"pipeline_id", p.id}, {"lease_id", id}, {"at", to_ns(at)}};
    append(event);
    apply(event);
  }
}

std::size_t Coordinator::expire_leases() {
  std::size_t count = 0;
  for (const auto& p : pipelines_in_order()) {
    std::lock_guard lock(p->mu);
    const auto before = p->leases.size();
    if (before == 0) continue;
    expire_locked(*p, now());
    count += before - p->leases.size();
  }
  return count;
}

// --- reads ------------------------------------------------------------------------

PipelineView Coordinator::get_pipeline(const std::string& pipeline_id) const {
  auto p = find_pipeline(pipeline_id);
  std::lock_guard lock(p->mu);
  PipelineView view;
  view.pipeline_id = p->id;
  view.status = pipeline_status(p->state);
  view.repo = p->repo;
  view.parent = p->parent;
  view.created_at = p->created_at;
  for (const auto& group : p->state.plan.ordered_stages) {
    for (const auto& job : group.jobs) {
      JobView jv;
      jv.name = job;
      jv.stage = group.stage;
      jv.status = p->state.status(job);
      jv.times = p->state.timestamps.at(job);
      if (auto it = p->last_runner.find(job); it != p->last_runner.end()) {
        jv.runner_id = it->second;
      }
      view.jobs.push_back(std::move(jv));
    }
  }
  view.artifacts = p->artifacts;
  view.children = p->children;
  return view;
}

ExecutionState Coordinator::pipeline_state(const std::string& pipeline_id) const {
  auto p = find_pipeline(pipeline_id);
  std::lock_guard lock(p->mu);
  return p->state;
}

std::string Coordinator::job_log(const std::string& pipeline_id, const std::string& job) const {
  auto p = find_pipeline(pipeline_id);
  std::lock_guard lock(p->mu);
  if (!p->state.plan.job_specs.count(job)) {
    throw Error(ErrorCode::kNotFound, "pipeline '" + pipeline_id + "' has no job '" + job + "'");
  }
  auto it = p->logs.find(job);
  return it == p->logs.end() ? std::string() : it->second;
}

std::string Coordinator::get_artifact(const std::string& artifact_id) const {
  auto payload = store_.get(artifact_id);
  if (!payload) throw Error(ErrorCode::kNotFound, "no artifact '" + artifact_id + "'");
  return *payload;
}

}  // namespace sciflow
