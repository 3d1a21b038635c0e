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

// Executors turn a resolved job into processes. Four strategies exist:
//
//   shell       host shell, `image` ignored
//   container   one container run per script line, `image` required
//   batch       one scheduler submission per job; SLURM_PARAMETERS become
//               submitter flags and the payload runs each line in a container
//   kubernetes  one pod per job; KUBERNETES_CPU_REQUEST and
//               KUBERNETES_MEMORY_REQUEST become resource requests
//
// Variables prefixed SLURM_ or KUBERNETES_ steer executors and are not
// exported to the workload, so a job sees the same environment whichever
// executor runs it.
//
// Executors are stateless; any number of run_job calls may be in flight.

#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sciflow/pipeline_model.hpp"
#include "sciflow/process.hpp"

namespace sciflow {

enum class ExecutorKind { kShell, kContainer, kBatch, kKubernetes };

std::string_view to_string(ExecutorKind kind);
std::optional<ExecutorKind> executor_kind_from_string(std::string_view text);

using ExecutorSettings = std::map<std::string, std::string>;

struct Workspace {
  std::filesystem::path root;
  std::filesystem::path repo_dir;
};

using LogSink = std::function<void(std::string_view)>;

/// One script line bound to its job and workspace.
struct ExecutorRequest {
  ResolvedJobSpec job;
  Workspace workspace;
  std::size_t step_index = 0;
  std::string command;  // == job.script[step_index]
  /// Receives output as it is produced, where the executor can stream.
  LogSink on_output;

  static ExecutorRequest for_step(const ResolvedJobSpec& job,
                                  const Workspace& workspace, std::size_t step);
};

namespace failure {
inline constexpr std::string_view kTimeout = "TIMEOUT";
inline constexpr std::string_view kConfigError = "CONFIG_ERROR";
inline constexpr std::string_view kExecutorUnavailable = "EXECUTOR_UNAVAILABLE";
inline constexpr std::string_view kSubmissionRejected = "SUBMISSION_REJECTED";
}  // namespace failure

struct StepOutcome {
  int exit_code = 0;
  std::string output;
  std::string failure;  // empty, or one of the failure:: codes
};

struct StepResult {
  std::string command;
  int exit_code = 0;
  std::chrono::milliseconds duration{0};
  std::string failure;
};

struct JobResult {
  bool success = false;
  std::vector<StepResult> steps;
  std::string log;
  std::string failure;  // job-level failure code, if any
};

/// SLURM_* and KUBERNETES_* variables are consumed by executors.
bool is_executor_control_variable(std::string_view name);
VariableMap workload_variables(const ResolvedJobSpec& job);

/// Splits a template on whitespace, then substitutes {repo_dir}, {image},
/// {command}; a standalone {env} token expands to `env_flag K=V` pairs.
/// Substituted values never split into further tokens.
std::vector<std::string> expand_command_template(
    std::string_view command_template, const std::map<std::string, std::string>& values,
    const VariableMap& env, std::string_view env_flag);

class Executor {
 public:
  virtual ~Executor() = default;
  virtual ExecutorKind kind() const = 0;

  /// Runs the script lines in order and stops at the first nonzero exit.
  /// Every line's output is preceded by a "$ <command>" marker and followed
  /// by an exit marker.
  virtual JobResult run_job(const ResolvedJobSpec& job, const Workspace& workspace,
                            const LogSink& sink = {}) const;

 protected:
  /// Returns a message when the job cannot run on this executor at all.
  virtual std::optional<std::string> preflight(const ResolvedJobSpec&) const {
    return std::nullopt;
  }
  virtual StepOutcome execute_step(const ExecutorRequest& request) const = 0;
};

// ---------------------------------------------------------------------------
// shell
// ---------------------------------------------------------------------------

/// Settings: shell.program (default /bin/sh), shell.flag (default -c),
/// step_timeout (seconds, default none).
class ShellExecutor final : public Executor {
 public:
  explicit ShellExecutor(ExecutorSettings settings = {});
  ExecutorKind kind() const override { return ExecutorKind::kShell; }

  /// The command goes verbatim to the configured shell; job.image is unused.
  StepOutcome shell_execute(const ExecutorRequest& request) const;

 protected:
  StepOutcome execute_step(const ExecutorRequest& request) const override {
    return shell_execute(request);
  }

 private:
  std::string program_;
  std::string flag_;
  std::optional<std::chrono::milliseconds> step_timeout_;
};

// ---------------------------------------------------------------------------
// container
// ---------------------------------------------------------------------------

inline constexpr std::string_view kDefaultContainerCommand =
    "docker run --rm -v {repo_dir}:/workspace -w /workspace {env} {image} "
    "/bin/sh -c {command}";

/// Settings: container.command (template, see expand_command_template),
/// container.env_flag (default -e), step_timeout.
class ContainerExecutor final : public Executor {
 public:
  explicit ContainerExecutor(ExecutorSettings settings = {});
  ExecutorKind kind() const override { return ExecutorKind::kContainer; }

  std::vector<std::string> container_argv(const ExecutorRequest& request) const;
  StepOutcome container_execute(const ExecutorRequest& request) const;

 protected:
  std::optional<std::string> preflight(const ResolvedJobSpec& job) const override;
  StepOutcome execute_step(const ExecutorRequest& request) const override {
    return container_execute(request);
  }

 private:
  std::string template_;
  std::string env_flag_;
  std::optional<std::chrono::milliseconds> step_timeout_;
};

// ---------------------------------------------------------------------------
// batch
// ---------------------------------------------------------------------------

struct SubmissionCommand {
  std::vector<std::string> argv;
  std::optional<std::string> stdin_payload;

  bool operator==(const SubmissionCommand&) const = default;
};

/// Where a submission goes: a real scheduler front end or a test double.
class SubmissionBoundary {
 public:
  virtual ~SubmissionBoundary() = default;
  virtual ProcessResult submit(const SubmissionCommand& command) = 0;
};

/// Runs argv as a local program with the payload on stdin.
class ProcessSubmitter final : public SubmissionBoundary {
 public:
  ProcessResult submit(const SubmissionCommand& command) override;
};

inline constexpr std::string_view kDefaultBatchContainerCommand =
    "singularity exec --bind {repo_dir}:/workspace --pwd /workspace {env} "
    "docker://{image} /bin/sh -c {command}";

/// Name of the file, under the workspace root, the batch payload writes the
/// job's output to.
inline constexpr std::string_view kBatchOutputFile = "batch-output.log";

/// Plain whitespace split. Quote characters are rejected (kConfigError).
std::vector<std::string> tokenize_scheduler_parameters(std::string_view text);

/// Settings: batch.submitter (default sbatch), batch.wait_flag (default
/// --wait), batch.container_command, batch.env_flag (default --env).
///
/// argv = [submitter, wait-flag] ++ tokens(SLURM_PARAMETERS); the payload is
/// a POSIX sh script that runs every line in the job's container from the
/// repository directory and stops at the first failure.
SubmissionCommand batch_translate(const ResolvedJobSpec& job,
                                  const Workspace& workspace,
                                  const ExecutorSettings& settings = {});

/// Submits and blocks; the outcome's exit code is the batch job's.
StepOutcome batch_execute(const SubmissionCommand& command,
                          SubmissionBoundary& submitter);

class BatchExecutor final : public Executor {
 public:
  explicit BatchExecutor(ExecutorSettings settings = {},
                         std::shared_ptr<SubmissionBoundary> submitter = nullptr);
  ExecutorKind kind() const override { return ExecutorKind::kBatch; }

  JobResult run_job(const ResolvedJobSpec& job, const Workspace& workspace,
                    const LogSink& sink = {}) const override;

 protected:
  std::optional<std::string> preflight(const ResolvedJobSpec& job) const override;
  StepOutcome execute_step(const ExecutorRequest& request) const override;

 private:
  ExecutorSettings settings_;
  std::shared_ptr<SubmissionBoundary> submitter_;
};

// ---------------------------------------------------------------------------
// kubernetes
// ---------------------------------------------------------------------------

inline constexpr std::string_view kPodWorkingDir = "/workspace";

struct PodManifest {
  std::string name;
  std::string image;
  std::vector<std::string> command;
  std::string working_dir;
  std::string cpu_request;
  std::string memory_request;
  VariableMap env;
  std::string repo_host_path;  // mounted at working_dir
  std::map<std::string, std::string> labels;

  /// JSON Pod document with sorted keys. No wall-time field is emitted.
  std::string serialize() const;

  bool operator==(const PodManifest&) const = default;
};

/// Throws kConfigError when the image or either Kubernetes request variable
/// is missing. SLURM_PARAMETERS has no influence on the result.
PodManifest k8s_manifest(const ResolvedJobSpec& job,
                         const std::filesystem::path& repo_dir);

class PodSubmitter {
 public:
  virtual ~PodSubmitter() = default;
  virtual ProcessResult run_pod(const PodManifest& manifest) = 0;
};

/// Test double for a cluster: runs the pod's command as a local process in
/// the mounted repository directory with the pod's environment.
class LocalPodRunner final : public PodSubmitter {
 public:
  ProcessResult run_pod(const PodManifest& manifest) override;
};

StepOutcome k8s_execute(const PodManifest& manifest, PodSubmitter& submitter);

/// Settings: kubernetes.dry_run (true/false), step_timeout.
class KubernetesExecutor final : public Executor {
 public:
  explicit KubernetesExecutor(ExecutorSettings settings = {},
                              std::shared_ptr<PodSubmitter> submitter = nullptr);
  ExecutorKind kind() const override { return ExecutorKind::kKubernetes; }

  JobResult run_job(const ResolvedJobSpec& job, const Workspace& workspace,
                    const LogSink& sink = {}) const override;

 protected:
  std::optional<std::string> preflight(const ResolvedJobSpec& job) const override;
  StepOutcome execute_step(const ExecutorRequest& request) const override;

 private:
  bool dry_run_ = false;
  std::shared_ptr<PodSubmitter> submitter_;
};

/// POSIX sh that runs each command (wrapped by `wrap`, if given) in order,
/// prints a step marker after each and exits at the first failure.
std::string sequential_step_script(
    const std::vector<std::string>& commands,
    const std::function<std::string(std::size_t, const std::string&)>& wrap = {});

/// Parses "::sciflow-step <i> exit=<code>" markers out of combined output.
std::vector<std::pair<std::size_t, int>> parse_step_markers(std::string_view output);

std::unique_ptr<Executor> make_executor(ExecutorKind kind,
                                        const ExecutorSettings& settings);

}  // namespace sciflow
