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

// The runner agent: polls for leases, prepares a fresh clone per lease,
// drives an executor through the job's script, uploads artifacts, triggers
// child pipelines and reports exactly one terminal status per lease.

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "sciflow/coordinator.hpp"
#include "sciflow/executors.hpp"

namespace sciflow {

/// What a runner needs from the coordinator, bound to one runner token.
class RunnerLink {
 public:
  virtual ~RunnerLink() = default;
  virtual PollResult poll() = 0;
  virtual JobStatus update(const std::string& lease_id, JobStatus to,
                           std::string_view log_chunk) = 0;
  virtual std::string upload(const std::string& lease_id, const std::string& path,
                             std::string_view payload) = 0;
  virtual std::string trigger(const std::string& lease_id, const std::string& artifact_id) = 0;
};

/// In-process link, used by tests and single-binary setups.
class LocalRunnerLink final : public RunnerLink {
 public:
  LocalRunnerLink(Coordinator& coordinator, std::string token)
      : coordinator_(coordinator), token_(std::move(token)) {}

  PollResult poll() override { return coordinator_.poll_job(token_); }
  JobStatus update(const std::string& lease_id, JobStatus to,
                   std::string_view log_chunk) override {
    return coordinator_.update_job(token_, lease_id, to, log_chunk);
  }
  std::string upload(const std::string& lease_id, const std::string& path,
                     std::string_view payload) override {
    return coordinator_.upload_artifact(token_, lease_id, path, payload);
  }
  std::string trigger(const std::string& lease_id, const std::string& artifact_id) override {
    return coordinator_.trigger_child_pipeline(token_, lease_id, artifact_id);
  }

 private:
  Coordinator& coordinator_;
  std::string token_;
};

struct RunnerConfig {
  std::string coordinator_url;
  std::string token;
  ExecutorKind executor_kind = ExecutorKind::kShell;
  int concurrency = 1;
  std::filesystem::path workspace_root;
  std::chrono::milliseconds poll_interval{std::chrono::seconds(1)};
  ExecutorSettings executor_settings;
  /// Failed jobs keep their workspace this long; successful ones are purged
  /// at once.
  std::chrono::milliseconds failed_workspace_grace{std::chrono::minutes(30)};
  std::chrono::milliseconds max_backoff{std::chrono::seconds(30)};
  /// Log flush and lease renewal cadence while a job runs. Must stay well
  /// below the coordinator's lease ttl.
  std::chrono::milliseconds heartbeat_interval{std::chrono::seconds(5)};

  /// kConfigError unless concurrency >= 1 and workspace_root is writable.
  void validate() const;
};

/// Fresh clone of lease.repo under workspace_root/<lease id>, checked out at
/// exactly the lease's commit. Throws kCloneError.
Workspace prepare_workspace(const JobLease& lease, const RunnerConfig& config);

/// Runs the script through the executor. Never throws: an executor crash is
/// a failed result with the diagnostic in the log.
JobResult execute_job(const JobLease& lease, const Workspace& workspace,
                      const Executor& executor, const LogSink& sink = {});

struct UploadedArtifact {
  std::string path;
  std::string artifact_id;
};

/// Uploads every manifest path present under repo_dir. Missing paths and
/// rejected uploads are reported through `log`, never thrown.
std::vector<UploadedArtifact> collect_artifacts(const JobLease& lease, const Workspace& workspace,
                                                RunnerLink& link, const LogSink& log);

/// Delay before retry number `failures` (1-based): base * 2^(failures-1),
/// capped at `cap`.
std::chrono::milliseconds backoff_delay(int failures, std::chrono::milliseconds base,
                                        std::chrono::milliseconds cap);

struct LeaseOutcome {
  std::string lease_id;
  std::string job;
  JobStatus status = JobStatus::kFailed;
  bool reported = false;  // the terminal update reached the coordinator
  std::filesystem::path workspace;
  std::vector<StepResult> steps;
  std::vector<UploadedArtifact> artifacts;
  std::optional<std::string> child_pipeline;
};

class RunnerAgent {
 public:
  /// With no executor, one is built from config.executor_kind/settings.
  RunnerAgent(RunnerConfig config, std::shared_ptr<RunnerLink> link,
              std::shared_ptr<const Executor> executor = nullptr);
  ~RunnerAgent();

  /// Polls and dispatches until `stop` is requested, then waits for jobs in
  /// flight. An unreachable coordinator means backoff, not failure; a
  /// rejected token is kAuthenticationFailed.
  void run(std::stop_token stop);

  /// Takes one lease all the way to its terminal report.
  LeaseOutcome handle_lease(const JobLease& lease, std::stop_token stop = {});

  /// Removes retained workspaces whose grace period is over.
  void purge_expired_workspaces();

  std::size_t leases_handled() const noexcept { return leases_handled_; }
  std::size_t poll_failures() const noexcept { return poll_failures_; }
  std::vector<LeaseOutcome> outcomes() const;

 private:
  void report_terminal(const JobLease& lease, JobStatus status, std::string log,
                       LeaseOutcome& outcome, std::stop_token stop);
  void sleep_for(std::chrono::milliseconds d, std::stop_token stop);

  RunnerConfig config_;
  std::shared_ptr<RunnerLink> link_;
  std::shared_ptr<const Executor> executor_;

  std::atomic<std::size_t> leases_handled_{0};
  std::atomic<std::size_t> poll_failures_{0};

  mutable std::mutex mu_;
  std::condition_variable_any cv_;
  int active_ = 0;
  std::vector<LeaseOutcome> outcomes_;
  std::list<std::pair<std::filesystem::path, std::chrono::steady_clock::time_point>> retained_;
};

}  // namespace sciflow
