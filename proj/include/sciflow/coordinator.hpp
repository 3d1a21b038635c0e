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

// The coordinator: pipelines, runners, leases, logs, artifacts and child
// pipelines behind one in-process API. The HTTP server is a thin shell over
// this class.
//
// Locking. Each pipeline has its own mutex and every state change of that
// pipeline, including the matching event-log append, happens under it. A
// claim is a check-and-set of one pending job under that mutex, so two
// polls can never lease the same job. The registry lock is only held to
// look pipelines up.

#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "sciflow/artifact_store.hpp"
#include "sciflow/event_log.hpp"
#include "sciflow/executors.hpp"
#include "sciflow/scheduler.hpp"

namespace sciflow {

struct RepoRef {
  std::string url;
  std::string commit;

  bool operator==(const RepoRef&) const = default;
};

struct RunnerRegistration {
  std::string runner_id;
  std::string name;
  std::set<std::string> tags;
  ExecutorKind executor_kind = ExecutorKind::kShell;
  bool run_untagged = false;
  std::string token_sha256;  // the token itself is never stored

  bool operator==(const RunnerRegistration&) const = default;
};

struct IssuedRunner {
  std::string runner_id;
  std::string token;
};

struct JobLease {
  std::string lease_id;
  std::string pipeline_id;
  ResolvedJobSpec job;
  RepoRef repo;
  std::vector<std::string> artifact_manifest;
  Timestamp deadline;

  bool operator==(const JobLease&) const = default;
};

struct PollResult {
  std::optional<JobLease> lease;
  std::chrono::milliseconds retry_after{0};
};

struct ParentLink {
  std::string pipeline_id;
  std::string job;

  bool operator==(const ParentLink&) const = default;
};

struct JobView {
  std::string name;
  std::string stage;
  JobStatus status = JobStatus::kCreated;
  JobTimes times;
  std::string runner_id;  // last runner that held a lease, if any

  bool operator==(const JobView&) const = default;
};

struct PipelineView {
  std::string pipeline_id;
  PipelineStatus status = PipelineStatus::kRunning;
  RepoRef repo;
  std::optional<ParentLink> parent;
  Timestamp created_at;
  std::vector<JobView> jobs;  // stage order, then document order
  std::vector<ArtifactRecord> artifacts;
  std::vector<std::string> children;

  bool operator==(const PipelineView&) const = default;
};

struct CoordinatorConfig {
  /// Empty: everything lives in memory and nothing survives a restart.
  std::filesystem::path data_dir;
  std::chrono::milliseconds lease_ttl{std::chrono::seconds(60)};
  std::chrono::milliseconds retry_after{std::chrono::seconds(1)};
  std::size_t max_artifact_bytes = 64u << 20;
  /// Root pipelines have depth 0; a child deeper than this is refused.
  int max_child_depth = 3;
  bool sync_writes = false;
};

using ClockFn = std::function<Timestamp()>;

class Coordinator {
 public:
  explicit Coordinator(CoordinatorConfig config, ClockFn clock = {});
  ~Coordinator();
  Coordinator(const Coordinator&) = delete;
  Coordinator& operator=(const Coordinator&) = delete;

  /// Throws PipelineParseError or ValidationFailed; the first stage's jobs
  /// are pending on return.
  std::string submit_pipeline(const std::string& repo_url, const std::string& commit,
                              const std::string& definition_source);

  /// Tags must be valid tag strings (kInvalidArgument otherwise). The token
  /// is returned here and nowhere else.
  IssuedRunner register_runner(const std::string& name, const std::set<std::string>& tags,
                               ExecutorKind kind, bool run_untagged);

  /// Claims the oldest eligible pending job, FIFO by (pipeline submission,
  /// stage, document order). Expired leases are reclaimed first.
  PollResult poll_job(const std::string& token);

  /// `running` is a heartbeat: it appends the log chunk and extends the
  /// lease. `success` and `failed` consume the lease.
  JobStatus update_job(const std::string& token, const std::string& lease_id, JobStatus to,
                       std::string_view log_chunk = {});

  std::string upload_artifact(const std::string& token, const std::string& lease_id,
                              const std::string& path, std::string_view payload);

  /// Throws PipelineParseError or ValidationFailed for a bad definition and
  /// kDepthExceeded past the configured depth.
  std::string trigger_child_pipeline(const std::string& token, const std::string& lease_id,
                                     const std::string& artifact_id);

  PipelineView get_pipeline(const std::string& pipeline_id) const;
  ExecutionState pipeline_state(const std::string& pipeline_id) const;
  std::string job_log(const std::string& pipeline_id, const std::string& job) const;
  std::string get_artifact(const std::string& artifact_id) const;
  std::vector<std::string> pipeline_ids() const;
  std::vector<RunnerRegistration> runners() const;

  /// Returns jobs whose lease deadline passed to `pending`. Called from
  /// poll_job and periodically by the server.
  std::size_t expire_leases();

  const CoordinatorConfig& config() const noexcept { return config_; }

 private:
  struct LeaseEntry {
    JobLease lease;
    std::string runner_id;
  };

  struct PipelineEntry {
    mutable std::mutex mu;
    std::string id;
    std::uint64_t sequence = 0;
    RepoRef repo;
    std::string source;
    std::optional<ParentLink> parent;
    int depth = 0;
    Timestamp created_at;
    ExecutionState state;
    std::map<std::string, std::string> logs;
    std::map<std::string, std::string> last_runner;
    std::map<std::string, LeaseEntry> leases;  // live leases by id
    std::vector<ArtifactRecord> artifacts;
    std::vector<std::string> children;
  };

  Timestamp now() const { return clock_(); }
  std::shared_ptr<PipelineEntry> find_pipeline(const std::string& id) const;
  std::vector<std::shared_ptr<PipelineEntry>> pipelines_in_order() const;
  RunnerRegistration authenticate(const std::string& token) const;
  /// Looks the lease up and checks that it is live and owned by the runner.
  /// The caller must hold the pipeline's mutex.
  LeaseEntry& live_lease(PipelineEntry& p, const std::string& lease_id,
                         const RunnerRegistration& runner);
  std::shared_ptr<PipelineEntry> pipeline_of_lease(const std::string& lease_id) const;

  std::string create_pipeline(const RepoRef& repo, const std::string& source,
                              std::optional<ParentLink> parent, int depth);
  void expire_locked(PipelineEntry& p, Timestamp at);

  void append(const nlohmann::json& event);
  void replay();
  void apply(const nlohmann::json& event);

  CoordinatorConfig config_;
  ClockFn clock_;
  std::unique_ptr<EventLog> log_;
  ArtifactStore store_;

  mutable std::shared_mutex registry_mu_;
  std::map<std::string, std::shared_ptr<PipelineEntry>> pipelines_;
  std::vector<std::shared_ptr<PipelineEntry>> order_;
  std::uint64_t next_sequence_ = 1;

  mutable std::shared_mutex runners_mu_;
  std::map<std::string, RunnerRegistration> runners_by_token_;  // token sha256 ->

  mutable std::mutex leases_mu_;
  // Every lease ever issued, live or not, mapped to its pipeline.
  std::map<std::string, std::string> lease_pipeline_;
};

}  // namespace sciflow
