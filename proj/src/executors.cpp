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

#include "sciflow/executors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace sciflow {

namespace {

constexpr std::string_view kSlurmParameters = "SLURM_PARAMETERS";
constexpr std::string_view kCpuRequest = "KUBERNETES_CPU_REQUEST";
constexpr std::string_view kMemoryRequest = "KUBERNETES_MEMORY_REQUEST";
constexpr std::string_view kStepMarker = "::sciflow-step ";

std::string setting(const ExecutorSettings& settings, const std::string& key,
                    std::string_view fallback) {
  auto it = settings.find(key);
  return it == settings.end() ? std::string(fallback) : it->second;
}

std::optional<std::chrono::milliseconds> step_timeout(const ExecutorSettings& settings) {
  auto it = settings.find("step_timeout");
  if (it == settings.end() || it->second.empty()) return std::nullopt;
  try {
    const double seconds = std::stod(it->second);
    if (seconds <= 0) return std::nullopt;
    return std::chrono::milliseconds(static_cast<long long>(seconds * 1000));
  } catch (const std::exception&) {
    throw Error(ErrorCode::kConfigError,
                "step_timeout must be a number of seconds, got '" + it->second + "'");
  }
}

std::string describe_exit(std::size_t index, std::size_t total, const StepOutcome& o,
                          std::chrono::milliseconds duration) {
  std::ostringstream out;
  out << "[step " << index + 1 << "/" << total << " exited " << o.exit_code;
  if (!o.failure.empty()) out << " (" << o.failure << ")";
  out << " after " << duration.count() << " ms]\n";
  return out.str();
}

StepOutcome outcome_from(const ProcessResult& result) {
  StepOutcome outcome{result.exit_code, result.output, {}};
  if (result.spawn_failed) {
    outcome.failure = failure::kExecutorUnavailable;
  } else if (result.timed_out) {
    outcome.failure = failure::kTimeout;
  }
  return outcome;
}

bool ends_with_newline(std::string_view text) {
  return text.empty() || text.back() == '\n';
}

}  // namespace

std::string_view to_string(ExecutorKind kind) {
  switch (kind) {
    case ExecutorKind::kShell: return "shell";
    case ExecutorKind::kContainer: return "container";
    case ExecutorKind::kBatch: return "batch";
    case ExecutorKind::kKubernetes: return "kubernetes";
  }
  return "unknown";
}

std::optional<ExecutorKind> executor_kind_from_string(std::string_view text) {
  for (auto k : {ExecutorKind::kShell, ExecutorKind::kContainer,
                 ExecutorKind::kBatch, ExecutorKind::kKubernetes}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

ExecutorRequest ExecutorRequest::for_step(const ResolvedJobSpec& job,
                                          const Workspace& workspace,
                                          std::size_t step) {
  if (step >= job.script.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "job '" + job.name + "' has no step " + std::to_string(step));
  }
  return {job, workspace, step, job.script[step], {}};
}

bool is_executor_control_variable(std::string_view name) {
  return name.starts_with("SLURM_") || name.starts_with("KUBERNETES_");
}

VariableMap workload_variables(const ResolvedJobSpec& job) {
  VariableMap out;
  for (const auto& [key, value] : job.variables) {
    if (!is_executor_control_variable(key)) out.emplace(key, value);
  }
  return out;
}

std::vector<std::string> expand_command_template(
    std::string_view command_template,
    const std::map<std::string, std::string>& values, const VariableMap& env,
    std::string_view env_flag) {
  std::vector<std::string> argv;
  std::istringstream in{std::string(command_template)};
  std::string token;
  while (in >> token) {
    if (token == "{env}") {
      for (const auto& [key, value] : env) {
        argv.emplace_back(env_flag);
        argv.push_back(key + "=" + value);
      }
      continue;
    }
    std::string expanded;
    std::size_t pos = 0;
    while (pos < token.size()) {
      const auto open = token.find('{', pos);
      if (open == std::string::npos) {
        expanded.append(token, pos);
        break;
      }
      const auto close = token.find('}', open);
      if (close == std::string::npos) {
        expanded.append(token, pos);
        break;
      }
      expanded.append(token, pos, open - pos);
      const auto name = token.substr(open + 1, close - open - 1);
      auto it = values.find(name);
      if (it == values.end()) {
        throw Error(ErrorCode::kConfigError,
                    "unknown placeholder {" + name + "} in command template");
      }
      expanded += it->second;
      pos = close + 1;
    }
    argv.push_back(std::move(expanded));
  }
  if (argv.empty()) throw Error(ErrorCode::kConfigError, "empty command template");
  return argv;
}

std::string sequential_step_script(
    const std::vector<std::string>& commands,
    const std::function<std::string(std::size_t, const std::string&)>& wrap) {
  std::ostringstream out;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    const auto line = wrap ? wrap(i, commands[i]) : commands[i];
    out << "printf '%s\\n' " << shell_quote("$ " + commands[i]) << "\n"
        << line << "\n"
        << "rc=$?\n"
        << "echo \"" << kStepMarker << i << " exit=$rc\"\n"
        << "[ \"$rc\" -eq 0 ] || exit \"$rc\"\n";
  }
  out << "exit 0\n";
  return out.str();
}

std::vector<std::pair<std::size_t, int>> parse_step_markers(std::string_view output) {
  std::vector<std::pair<std::size_t, int>> markers;
  std::size_t pos = 0;
  while ((pos = output.find(kStepMarker, pos)) != std::string_view::npos) {
    if (pos != 0 && output[pos - 1] != '\n') {
      pos += kStepMarker.size();
      continue;
    }
    pos += kStepMarker.size();
    const auto eol = output.find('\n', pos);
    std::string line(output.substr(pos, eol == std::string_view::npos
                                            ? std::string_view::npos
                                            : eol - pos));
    std::size_t index = 0;
    int code = 0;
    if (std::sscanf(line.c_str(), "%zu exit=%d", &index, &code) == 2) {
      markers.emplace_back(index, code);
    }
  }
  return markers;
}

JobResult Executor::run_job(const ResolvedJobSpec& job, const Workspace& workspace,
                            const LogSink& sink) const {
  JobResult result;
  auto log = [&](std::string_view text) {
    result.log.append(text);
    if (sink) sink(text);
  };
  if (auto problem = preflight(job)) {
    result.failure = failure::kConfigError;
    log(std::string(failure::kConfigError) + ": " + *problem + "\n");
    return result;
  }

  result.success = true;
  for (std::size_t i = 0; i < job.script.size(); ++i) {
    auto request = ExecutorRequest::for_step(job, workspace, i);
    log("$ " + request.command + "\n");
    std::size_t streamed = 0;
    request.on_output = [&](std::string_view chunk) {
      streamed += chunk.size();
      log(chunk);
    };
    const auto started = std::chrono::steady_clock::now();
    StepOutcome outcome;
    try {
      outcome = execute_step(request);
    } catch (const Error& e) {
      outcome = {kSpawnFailureExitCode, std::string(e.what()) + "\n",
                 e.code() == ErrorCode::kConfigError
                     ? std::string(failure::kConfigError)
                     : std::string(failure::kExecutorUnavailable)};
    }
    const auto duration = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - started);
    // Streamed output is a prefix of the collected output.
    if (streamed <= outcome.output.size() &&
        outcome.output.compare(0, streamed, result.log, result.log.size() - streamed,
                               streamed) == 0) {
      log(std::string_view(outcome.output).substr(streamed));
    } else {
      log(outcome.output);
    }
    if (!ends_with_newline(outcome.output)) log("\n");
    log(describe_exit(i, job.script.size(), outcome, duration));
    result.steps.push_back({request.command, outcome.exit_code, duration, outcome.failure});
    if (outcome.exit_code != 0 || !outcome.failure.empty()) {
      result.success = false;
      result.failure = outcome.failure;
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// shell
// ---------------------------------------------------------------------------

ShellExecutor::ShellExecutor(ExecutorSettings settings)
    : program_(setting(settings, "shell.program", "/bin/sh")),
      flag_(setting(settings, "shell.flag", "-c")),
      step_timeout_(step_timeout(settings)) {}

StepOutcome ShellExecutor::shell_execute(const ExecutorRequest& request) const {
  ProcessSpec spec;
  spec.argv = {program_};
  if (!flag_.empty()) spec.argv.push_back(flag_);
  spec.argv.push_back(request.command);
  spec.cwd = request.workspace.repo_dir;
  spec.env = workload_variables(request.job);
  spec.timeout = step_timeout_;
  spec.on_output = request.on_output;
  return outcome_from(run_process(spec));
}

// ---------------------------------------------------------------------------
// container
// ---------------------------------------------------------------------------

ContainerExecutor::ContainerExecutor(ExecutorSettings settings)
    : template_(setting(settings, "container.command", kDefaultContainerCommand)),
      env_flag_(setting(settings, "container.env_flag", "-e")),
      step_timeout_(step_timeout(settings)) {}

std::optional<std::string> ContainerExecutor::preflight(
    const ResolvedJobSpec& job) const {
  if (!job.image || job.image->empty()) {
    return "job '" + job.name + "' has no image; the container executor needs one";
  }
  return std::nullopt;
}

std::vector<std::string> ContainerExecutor::container_argv(
    const ExecutorRequest& request) const {
  if (auto problem = preflight(request.job)) {
    throw Error(ErrorCode::kConfigError, *problem);
  }
  return expand_command_template(
      template_,
      {{"repo_dir", request.workspace.repo_dir.string()},
       {"image", *request.job.image},
       {"command", request.command}},
      workload_variables(request.job), env_flag_);
}

StepOutcome ContainerExecutor::container_execute(const ExecutorRequest& request) const {
  ProcessSpec spec;
  spec.argv = container_argv(request);
  spec.cwd = request.workspace.repo_dir;
  spec.timeout = step_timeout_;
  spec.on_output = request.on_output;
  return outcome_from(run_process(spec));
}

// ---------------------------------------------------------------------------
// batch
// ---------------------------------------------------------------------------

std::vector<std::string> tokenize_scheduler_parameters(std::string_view text) {
  if (text.find_first_of("'\"") != std::string_view::npos) {
    throw Error(ErrorCode::kConfigError,
                "quoted scheduler parameters are not supported: " + std::string(text));
  }
  std::vector<std::string> tokens;
  std::istringstream in{std::string(text)};
  std::string token;
  while (in >> token) tokens.push_back(token);
  return tokens;
}

namespace {

std::vector<std::string> scheduler_tokens(const ResolvedJobSpec& job) {
  auto it = job.variables.find(std::string(kSlurmParameters));
  if (it == job.variables.end()) {
    throw Error(ErrorCode::kConfigError,
                "job '" + job.name + "' does not set SLURM_PARAMETERS");
  }
  auto tokens = tokenize_scheduler_parameters(it->second);
  if (tokens.empty()) {
    throw Error(ErrorCode::kConfigError,
                "job '" + job.name + "' has an empty SLURM_PARAMETERS value");
  }
  return tokens;
}

}  // namespace

SubmissionCommand batch_translate(const ResolvedJobSpec& job,
                                  const Workspace& workspace,
                                  const ExecutorSettings& settings) {
  auto tokens = scheduler_tokens(job);
  if (!job.image || job.image->empty()) {
    throw Error(ErrorCode::kConfigError,
                "job '" + job.name + "' has no image; batch jobs run in a container");
  }

  SubmissionCommand cmd;
  cmd.argv.push_back(setting(settings, "batch.submitter", "sbatch"));
  if (auto wait = setting(settings, "batch.wait_flag", "--wait"); !wait.empty()) {
    cmd.argv.push_back(wait);
  }
  cmd.argv.insert(cmd.argv.end(), tokens.begin(), tokens.end());

  const auto container_template =
      setting(settings, "batch.container_command", kDefaultBatchContainerCommand);
  const auto env_flag = setting(settings, "batch.env_flag", "--env");
  const auto env = workload_variables(job);
  const auto repo_dir = workspace.repo_dir.string();

  std::ostringstream payload;
  payload << "#!/bin/sh\n"
          << "# sciflow batch job: " << job.name << "\n"
          << "exec >>" << shell_quote((workspace.root / kBatchOutputFile).string())
          << " 2>&1\n"
          << "cd " << shell_quote(repo_dir) << " || exit 1\n"
          << sequential_step_script(job.script, [&](std::size_t, const std::string& line) {
               auto argv = expand_command_template(
                   container_template,
                   {{"repo_dir", repo_dir}, {"image", *job.image}, {"command", line}},
                   env, env_flag);
               std::string joined;
               for (const auto& token : argv) {
                 if (!joined.empty()) joined += ' ';
                 joined += shell_quote(token);
               }
               return joined;
             });
  cmd.stdin_payload = payload.str();
  return cmd;
}

ProcessResult ProcessSubmitter::submit(const SubmissionCommand& command) {
  ProcessSpec spec;
  spec.argv = command.argv;
  spec.stdin_data = command.stdin_payload.value_or("");
  return run_process(spec);
}

StepOutcome batch_execute(const SubmissionCommand& command,
                          SubmissionBoundary& submitter) {
  auto result = submitter.submit(command);
  auto outcome = outcome_from(result);
  if (outcome.failure.empty() && result.output.find("DUE TO TIME LIMIT") != std::string::npos) {
    outcome.failure = failure::kTimeout;
  }
  return outcome;
}

BatchExecutor::BatchExecutor(ExecutorSettings settings,
                             std::shared_ptr<SubmissionBoundary> submitter)
    : settings_(std::move(settings)),
      submitter_(submitter ? std::move(submitter)
                           : std::make_shared<ProcessSubmitter>()) {}

std::optional<std::string> BatchExecutor::preflight(const ResolvedJobSpec& job) const {
  try {
    scheduler_tokens(job);
  } catch (const Error& e) {
    return e.detail();
  }
  if (!job.image || job.image->empty()) {
    return "job '" + job.name + "' has no image; batch jobs run in a container";
  }
  return std::nullopt;
}

StepOutcome BatchExecutor::execute_step(const ExecutorRequest& request) const {
  // Single-line submission; run_job submits the whole script at once.
  auto job = request.job;
  job.script = {request.command};
  return batch_execute(batch_translate(job, request.workspace, settings_), *submitter_);
}

namespace {

/// Converts step markers into step results. A step that started but left no
/// marker ended with the submission.
JobResult steps_from_markers(const ResolvedJobSpec& job, const StepOutcome& outcome,
                             std::string_view job_output) {
  JobResult result;
  const auto markers = parse_step_markers(job_output);
  for (const auto& [index, code] : markers) {
    if (index >= job.script.size()) continue;
    result.steps.push_back({job.script[index], code, {}, {}});
  }
  const bool all_zero =
      std::all_of(result.steps.begin(), result.steps.end(),
                  [](const StepResult& s) { return s.exit_code == 0; });
  const bool finished = result.steps.size() == job.script.size();
  const auto next = result.steps.size();
  const bool next_started =
      next < job.script.size() &&
      job_output.find("$ " + job.script[next] + "\n") != std::string_view::npos;
  if (!finished && all_zero && next_started) {
    // Interrupted mid-step (time limit, scheduler kill).
    const auto index = next;
    result.steps.push_back({job.script[index],
                            outcome.exit_code == 0 ? 1 : outcome.exit_code, {},
                            outcome.failure});
  } else if (!result.steps.empty() && !outcome.failure.empty()) {
    result.steps.back().failure = outcome.failure;
  }
  result.success = outcome.exit_code == 0 && outcome.failure.empty() && finished &&
                   all_zero;
  result.failure = outcome.failure;
  return result;
}

}  // namespace

JobResult BatchExecutor::run_job(const ResolvedJobSpec& job, const Workspace& workspace,
                                 const LogSink& sink) const {
  std::string log;
  auto emit = [&](std::string_view text) {
    log.append(text);
    if (sink) sink(text);
  };
  if (auto problem = preflight(job)) {
    JobResult result;
    result.failure = failure::kConfigError;
    emit(std::string(failure::kConfigError) + ": " + *problem + "\n");
    result.log = std::move(log);
    return result;
  }

  SubmissionCommand cmd;
  try {
    cmd = batch_translate(job, workspace, settings_);
  } catch (const Error& e) {
    JobResult result;
    result.failure = failure::kConfigError;
    emit(std::string(e.what()) + "\n");
    result.log = std::move(log);
    return result;
  }
  std::string joined;
  for (const auto& token : cmd.argv) joined += (joined.empty() ? "" : " ") + token;
  emit("submitting: " + joined + "\n");

  const auto output_file = workspace.root / kBatchOutputFile;
  std::error_code ignored;
  std::filesystem::remove(output_file, ignored);

  const auto started = std::chrono::steady_clock::now();
  auto outcome = batch_execute(cmd, *submitter_);
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);

  std::string job_output;
  if (std::ifstream in(output_file, std::ios::binary); in) {
    std::ostringstream buffer;
    buffer << in.rdbuf();
    job_output = buffer.str();
  }
  if (outcome.failure.empty() && job_output.find("DUE TO TIME LIMIT") != std::string::npos) {
    outcome.failure = failure::kTimeout;
  }
  if (outcome.failure.empty() && outcome.exit_code != 0 &&
      parse_step_markers(job_output).empty() && job_output.empty()) {
    outcome.failure = failure::kSubmissionRejected;
  }

  emit(job_output);
  if (!ends_with_newline(job_output)) emit("\n");
  if (!outcome.output.empty()) {
    emit(outcome.output);
    if (!ends_with_newline(outcome.output)) emit("\n");
  }

  auto result = steps_from_markers(job, outcome, job_output);
  if (!result.steps.empty()) result.steps.back().duration = elapsed;
  emit("[batch job exited " + std::to_string(outcome.exit_code) +
       (outcome.failure.empty() ? "" : " (" + outcome.failure + ")") + "]\n");
  result.log = std::move(log);
  return result;
}

// ---------------------------------------------------------------------------
// kubernetes
// ---------------------------------------------------------------------------

namespace {

std::string pod_name(std::string_view job) {
  std::string out = "sciflow-";
  for (unsigned char c : job) {
    if (std::isalnum(c)) {
      out.push_back(static_cast<char>(std::tolower(c)));
    } else if (out.back() != '-') {
      out.push_back('-');
    }
  }
  while (out.back() == '-') out.pop_back();
  if (out.size() > 63) out.resize(63);
  return out;
}

std::string required_variable(const ResolvedJobSpec& job, std::string_view name) {
  auto it = job.variables.find(std::string(name));
  if (it == job.variables.end() || it->second.empty()) {
    throw Error(ErrorCode::kConfigError,
                "job '" + job.name + "' does not set " + std::string(name));
  }
  return it->second;
}

}  // namespace

PodManifest k8s_manifest(const ResolvedJobSpec& job,
                         const std::filesystem::path& repo_dir) {
  if (!job.image || job.image->empty()) {
    throw Error(ErrorCode::kConfigError,
                "job '" + job.name + "' has no image; pods need one");
  }
  PodManifest manifest;
  manifest.name = pod_name(job.name);
  manifest.image = *job.image;
  manifest.command = {"/bin/sh", "-c", sequential_step_script(job.script)};
  manifest.working_dir = std::string(kPodWorkingDir);
  manifest.cpu_request = required_variable(job, kCpuRequest);
  manifest.memory_request = required_variable(job, kMemoryRequest);
  manifest.env = workload_variables(job);
  manifest.repo_host_path = repo_dir.string();
  manifest.labels = {{"sciflow/job", job.name}, {"sciflow/stage", job.stage}};
  return manifest;
}

std::string PodManifest::serialize() const {
  using nlohmann::json;
  json env_list = json::array();
  for (const auto& [key, value] : env) env_list.push_back({{"name", key}, {"value", value}});
  json container = {
      {"name", "job"},
      {"image", image},
      {"command", command},
      {"workingDir", working_dir},
      {"env", env_list},
      {"resources", {{"requests", {{"cpu", cpu_request}, {"memory", memory_request}}}}},
      {"volumeMounts", json::array({{{"name", "repo"}, {"mountPath", working_dir}}})},
  };
  json doc = {
      {"apiVersion", "v1"},
      {"kind", "Pod"},
      {"metadata", {{"name", name}, {"labels", labels}}},
      {"spec",
       {{"restartPolicy", "Never"},
        {"containers", json::array({container})},
        {"volumes",
         json::array({{{"name", "repo"}, {"hostPath", {{"path", repo_host_path}}}}})}}},
  };
  return doc.dump(2) + "\n";
}

ProcessResult LocalPodRunner::run_pod(const PodManifest& manifest) {
  ProcessSpec spec;
  spec.argv = manifest.command;
  spec.cwd = manifest.repo_host_path;
  spec.env = manifest.env;
  return run_process(spec);
}

StepOutcome k8s_execute(const PodManifest& manifest, PodSubmitter& submitter) {
  return outcome_from(submitter.run_pod(manifest));
}

KubernetesExecutor::KubernetesExecutor(ExecutorSettings settings,
                                       std::shared_ptr<PodSubmitter> submitter)
    : dry_run_(setting(settings, "kubernetes.dry_run", "false") == "true"),
      submitter_(submitter ? std::move(submitter) : std::make_shared<LocalPodRunner>()) {}

std::optional<std::string> KubernetesExecutor::preflight(const ResolvedJobSpec& job) const {
  try {
    k8s_manifest(job, {});
  } catch (const Error& e) {
    return e.detail();
  }
  return std::nullopt;
}

StepOutcome KubernetesExecutor::execute_step(const ExecutorRequest& request) const {
  auto job = request.job;
  job.script = {request.command};
  return k8s_execute(k8s_manifest(job, request.workspace.repo_dir), *submitter_);
}

JobResult KubernetesExecutor::run_job(const ResolvedJobSpec& job,
                                      const Workspace& workspace,
                                      const LogSink& sink) const {
  JobResult result;
  auto emit = [&](std::string_view text) {
    result.log.append(text);
    if (sink) sink(text);
  };
  PodManifest manifest;
  try {
    manifest = k8s_manifest(job, workspace.repo_dir);
  } catch (const Error& e) {
    result.failure = failure::kConfigError;
    emit(std::string(failure::kConfigError) + ": " + e.detail() + "\n");
    return result;
  }
  const auto document = manifest.serialize();
  if (dry_run_) {
    emit("dry run; pod manifest follows\n");
    emit(document);
    result.success = true;
    return result;
  }
  emit("pod " + manifest.name + " requests cpu=" + manifest.cpu_request +
       " memory=" + manifest.memory_request + "\n");

  const auto started = std::chrono::steady_clock::now();
  const auto outcome = k8s_execute(manifest, *submitter_);
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);
  emit(outcome.output);
  if (!ends_with_newline(outcome.output)) emit("\n");

  emit("[pod exited " + std::to_string(outcome.exit_code) +
       (outcome.failure.empty() ? "" : " (" + outcome.failure + ")") + "]\n");

  auto parsed = steps_from_markers(job, outcome, outcome.output);
  parsed.log = std::move(result.log);
  if (!parsed.steps.empty()) parsed.steps.back().duration = elapsed;
  return parsed;
}

std::unique_ptr<Executor> make_executor(ExecutorKind kind,
                                        const ExecutorSettings& settings) {
  switch (kind) {
    case ExecutorKind::kShell: return std::make_unique<ShellExecutor>(settings);
    case ExecutorKind::kContainer: return std::make_unique<ContainerExecutor>(settings);
    case ExecutorKind::kBatch: return std::make_unique<BatchExecutor>(settings);
    case ExecutorKind::kKubernetes: return std::make_unique<KubernetesExecutor>(settings);
  }
  throw Error(ErrorCode::kConfigError, "unknown executor kind");
}

}  // namespace sciflow
