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

#include "sciflow/runner.hpp"

#include <unistd.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "sciflow/process.hpp"

namespace sciflow {

namespace {

constexpr std::size_t kKeptOutcomes = 1000;

std::string git_output(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                       int& exit_code) {
  ProcessSpec spec;
  spec.argv = argv;
  spec.cwd = cwd;
  spec.env = {{"GIT_TERMINAL_PROMPT", "0"}, {"GIT_ASKPASS", "true"}};
  spec.timeout = std::chrono::minutes(10);
  auto result = run_process(spec);
  exit_code = result.spawn_failed ? kSpawnFailureExitCode : result.exit_code;
  if (result.spawn_failed) return result.diagnostic;
  return result.output;
}

std::string trim(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

std::string read_whole(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

void RunnerConfig::validate() const {
  if (concurrency < 1) throw Error(ErrorCode::kConfigError, "concurrency must be at least 1");
  if (workspace_root.empty()) throw Error(ErrorCode::kConfigError, "workspace root is not set");
  std::error_code ec;
  std::filesystem::create_directories(workspace_root, ec);
  if (ec || ::access(workspace_root.c_str(), W_OK) != 0) {
    throw Error(ErrorCode::kConfigError,
                "workspace root '" + workspace_root.string() + "' is not writable");
  }
  if (poll_interval <= std::chrono::milliseconds::zero()) {
    throw Error(ErrorCode::kConfigError, "poll interval must be positive");
  }
}

Workspace prepare_workspace(const JobLease& lease, const RunnerConfig& config) {
  Workspace ws;
  ws.root = config.workspace_root / lease.lease_id;
  ws.repo_dir = ws.root / "repo";
  std::filesystem::remove_all(ws.root);
  std::filesystem::create_directories(ws.root);

  int rc = 0;
  auto out = git_output({"git", "clone", "--quiet", "--no-checkout", lease.repo.url,
                         ws.repo_dir.string()},
                        ws.root, rc);
  if (rc != 0) {
    throw Error(ErrorCode::kCloneError, "cannot clone " + lease.repo.url + ": " + trim(out));
  }
  const auto wanted =
      trim(git_output({"git", "rev-parse", "--verify", "--quiet", lease.repo.commit + "^{commit}"},
                      ws.repo_dir, rc));
  if (rc != 0 || wanted.empty()) {
    throw Error(ErrorCode::kCloneError,
                "commit " + lease.repo.commit + " not found in " + lease.repo.url);
  }
  out = git_output({"git", "checkout", "--quiet", "--detach", wanted}, ws.repo_dir, rc);
  if (rc != 0) {
    throw Error(ErrorCode::kCloneError, "cannot check out " + wanted + ": " + trim(out));
  }
  const auto head = trim(git_output({"git", "rev-parse", "HEAD"}, ws.repo_dir, rc));
  if (rc != 0 || head != wanted) {
    throw Error(ErrorCode::kCloneError, "checkout ended at " + head + ", expected " + wanted);
  }
  return ws;
}

JobResult execute_job(const JobLease& lease, const Workspace& workspace,
                      const Executor& executor, const LogSink& sink) {
  try {
    return executor.run_job(lease.job, workspace, sink);
  } catch (const std::exception& e) {
    JobResult result;
    result.success = false;
    result.log = std::string("[executor crashed: ") + e.what() + "]\n";
    if (sink) sink(result.log);
    return result;
  }
}

std::vector<UploadedArtifact> collect_artifacts(const JobLease& lease, const Workspace& workspace,
                                                RunnerLink& link, const LogSink& log) {
  std::vector<UploadedArtifact> uploaded;
  auto note = [&](const std::string& line) {
    if (log) log(line + "\n");
  };
  std::error_code ec;
  const auto repo = std::filesystem::canonical(workspace.repo_dir, ec);
  for (const auto& path : lease.artifact_manifest) {
    const auto file = workspace.repo_dir / path;
    if (!std::filesystem::exists(file)) {
      note("[warning: declared artifact '" + path + "' was not produced]");
      continue;
    }
    const auto real = std::filesystem::canonical(file, ec);
    const auto rel = real.lexically_relative(repo);
    if (ec || rel.empty() || *rel.begin() == "..") {
      note("[warning: artifact '" + path + "' resolves outside the repository; not uploaded]");
      continue;
    }
    if (!std::filesystem::is_regular_file(real)) {
      note("[warning: artifact '" + path + "' is not a regular file; not uploaded]");
      continue;
    }
    try {
      const auto id = link.upload(lease.lease_id, path, read_whole(real));
      uploaded.push_back({path, id});
      note("[artifact " + path + " uploaded as " + id + "]");
    } catch (const Error& e) {
      note("[warning: upload of '" + path + "' rejected: " + e.what() + "]");
    }
  }
  return uploaded;
}

std::chrono::milliseconds backoff_delay(int failures, std::chrono::milliseconds base,
                                        std::chrono::milliseconds cap) {
  if (failures < 1) return std::chrono::milliseconds::zero();
  auto delay = base;
  for (int i = 1; i < failures && delay < cap; ++i) delay *= 2;
  return std::min(delay, cap);
}

// --- agent -----------------------------------------------------------------------

RunnerAgent::RunnerAgent(RunnerConfig config, std::shared_ptr<RunnerLink> link,
                         std::shared_ptr<const Executor> executor)
    : config_(std::move(config)), link_(std::move(link)), executor_(std::move(executor)) {
  config_.validate();
  if (!executor_) executor_ = make_executor(config_.executor_kind, config_.executor_settings);
}

RunnerAgent::~RunnerAgent() = default;

void RunnerAgent::sleep_for(std::chrono::milliseconds d, std::stop_token stop) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, stop, d, [] { return false; });
}

std::vector<LeaseOutcome> RunnerAgent::outcomes() const {
  std::lock_guard lock(mu_);
  return outcomes_;
}

void RunnerAgent::purge_expired_workspaces() {
  const auto now = std::chrono::steady_clock::now();
  std::lock_guard lock(mu_);
  for (auto it = retained_.begin(); it != retained_.end();) {
    if (it->second <= now) {
      std::error_code ec;
      std::filesystem::remove_all(it->first, ec);
      it = retained_.erase(it);
    } else {
      ++it;
    }
  }
}

void RunnerAgent::report_terminal(const JobLease& lease, JobStatus status, std::string log,
                                  LeaseOutcome& outcome, std::stop_token stop) {
  for (int attempt = 1;; ++attempt) {
    try {
      link_->update(lease.lease_id, status, log);
      outcome.reported = true;
      return;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kStaleLease && attempt > 1) {
        // An earlier attempt landed but its reply was lost.
        outcome.reported = true;
        return;
      }
      if (e.code() != ErrorCode::kTransportError) {
        std::clog << "runner: terminal update for " << lease.job.name << " rejected: "
                  << e.what() << "\n";
        return;
      }
      if (stop.stop_requested() && attempt >= 5) {
        std::clog << "runner: giving up on terminal update for " << lease.job.name << "\n";
        return;
      }
      sleep_for(backoff_delay(attempt, std::chrono::milliseconds(200), config_.max_backoff), {});
    }
  }
}

LeaseOutcome RunnerAgent::handle_lease(const JobLease& lease, std::stop_token stop) {
  LeaseOutcome outcome;
  outcome.lease_id = lease.lease_id;
  outcome.job = lease.job.name;

  // Output is buffered here and shipped by the heartbeat thread; the final
  // remainder travels with the terminal update.
  std::mutex log_mu;
  std::string pending;
  auto sink = [&](std::string_view chunk) {
    std::lock_guard lock(log_mu);
    pending.append(chunk);
  };
  auto take = [&] {
    std::lock_guard lock(log_mu);
    return std::exchange(pending, std::string());
  };

  std::jthread heartbeat([&](std::stop_token hb_stop) {
    std::mutex mu;
    std::condition_variable_any cv;
    std::unique_lock lock(mu);
    while (!cv.wait_for(lock, hb_stop, config_.heartbeat_interval, [] { return false; })) {
      if (hb_stop.stop_requested()) return;
      auto chunk = take();
      try {
        link_->update(lease.lease_id, JobStatus::kRunning, chunk);
      } catch (const Error&) {
        std::lock_guard relock(log_mu);
        pending.insert(0, chunk);
      }
    }
  });

  JobStatus status = JobStatus::kFailed;
  try {
    const auto ws = prepare_workspace(lease, config_);
    outcome.workspace = ws.root;
    sink("[cloned " + lease.repo.url + " at " + lease.repo.commit + " on " +
         std::string(to_string(executor_->kind())) + " runner]\n");
    const auto result = execute_job(lease, ws, *executor_, sink);
    outcome.steps = result.steps;
    status = result.success ? JobStatus::kSuccess : JobStatus::kFailed;

    outcome.artifacts = collect_artifacts(lease, ws, *link_, sink);

    if (status == JobStatus::kSuccess && lease.job.trigger_artifact) {
      const auto& path = *lease.job.trigger_artifact;
      std::string artifact_id;
      for (const auto& a : outcome.artifacts) {
        if (a.path == path) artifact_id = a.artifact_id;
      }
      try {
        if (artifact_id.empty()) {
          const auto file = ws.repo_dir / path;
          if (!std::filesystem::is_regular_file(file)) {
            throw Error(ErrorCode::kNotFound, "child definition '" + path + "' was not produced");
          }
          artifact_id = link_->upload(lease.lease_id, path, read_whole(file));
        }
        outcome.child_pipeline = link_->trigger(lease.lease_id, artifact_id);
        sink("[triggered child pipeline " + *outcome.child_pipeline + "]\n");
      } catch (const ValidationFailed& e) {
        sink("[child pipeline rejected]\n" + e.report().to_text());
        status = JobStatus::kFailed;
      } catch (const Error& e) {
        sink(std::string("[child pipeline rejected: ") + e.what() + "]\n");
        status = JobStatus::kFailed;
      }
    }
  } catch (const Error& e) {
    sink(std::string("[") + e.what() + "]\n");
    status = JobStatus::kFailed;
  } catch (const std::exception& e) {
    sink(std::string("[runner error: ") + e.what() + "]\n");
    status = JobStatus::kFailed;
  }
  if (outcome.workspace.empty()) outcome.workspace = config_.workspace_root / lease.lease_id;

  heartbeat.request_stop();
  heartbeat.join();
  outcome.status = status;
  report_terminal(lease, status, take(), outcome, stop);

  std::error_code ec;
  if (status == JobStatus::kSuccess) {
    std::filesystem::remove_all(outcome.workspace, ec);
  } else {
    std::lock_guard lock(mu_);
    retained_.emplace_back(outcome.workspace,
                           std::chrono::steady_clock::now() + config_.failed_workspace_grace);
  }
  ++leases_handled_;
  {
    std::lock_guard lock(mu_);
    outcomes_.push_back(outcome);
    if (outcomes_.size() > kKeptOutcomes) outcomes_.erase(outcomes_.begin());
  }
  return outcome;
}

void RunnerAgent::run(std::stop_token stop) {
  struct Worker {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };
  std::list<Worker> workers;
  auto reap = [&](bool all) {
    for (auto it = workers.begin(); it != workers.end();) {
      if (all || it->done->load()) {
        it->thread.join();
        it = workers.erase(it);
      } else {
        ++it;
      }
    }
  };

  int failures = 0;
  std::exception_ptr fatal;
  while (!stop.stop_requested()) {
    reap(false);
    purge_expired_workspaces();
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, stop, [&] { return active_ < config_.concurrency; });
    }
    if (stop.stop_requested()) break;

    PollResult polled;
    try {
      polled = link_->poll();
      failures = 0;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kAuthenticationFailed) {
        fatal = std::current_exception();
        break;
      }
      ++failures;
      ++poll_failures_;
      const auto delay = backoff_delay(failures, config_.poll_interval, config_.max_backoff);
      std::clog << "runner: poll failed (" << e.what() << "); retrying in " << delay.count()
                << " ms\n";
      sleep_for(delay, stop);
      continue;
    }

    if (!polled.lease) {
      sleep_for(config_.poll_interval, stop);
      continue;
    }

    {
      std::lock_guard lock(mu_);
      ++active_;
    }
    auto done = std::make_shared<std::atomic<bool>>(false);
    workers.push_back({std::thread([this, lease = *polled.lease, done, stop] {
                         handle_lease(lease, stop);
                         {
                           std::lock_guard lock(mu_);
                           --active_;
                         }
                         done->store(true);
                         cv_.notify_all();
                       }),
                       done});
  }
  reap(true);
  if (fatal) std::rethrow_exception(fatal);
}

}  // namespace sciflow
