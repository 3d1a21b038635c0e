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

#include "sciflow/scheduler.hpp"

#include <algorithm>

namespace sciflow {

std::string_view to_string(JobStatus status) {
  switch (status) {
    case JobStatus::kCreated: return "created";
    case JobStatus::kPending: return "pending";
    case JobStatus::kRunning: return "running";
    case JobStatus::kSuccess: return "success";
    case JobStatus::kFailed: return "failed";
    case JobStatus::kSkipped: return "skipped";
  }
  return "unknown";
}

std::optional<JobStatus> job_status_from_string(std::string_view text) {
  for (auto s : {JobStatus::kCreated, JobStatus::kPending, JobStatus::kRunning,
                 JobStatus::kSuccess, JobStatus::kFailed, JobStatus::kSkipped}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

std::string_view to_string(PipelineStatus status) {
  switch (status) {
    case PipelineStatus::kRunning: return "running";
    case PipelineStatus::kSuccess: return "success";
    case PipelineStatus::kFailed: return "failed";
  }
  return "unknown";
}

std::optional<PipelineStatus> pipeline_status_from_string(std::string_view text) {
  for (auto s : {PipelineStatus::kRunning, PipelineStatus::kSuccess,
                 PipelineStatus::kFailed}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

bool is_terminal(JobStatus status) {
  return status == JobStatus::kSuccess || status == JobStatus::kFailed ||
         status == JobStatus::kSkipped;
}

bool is_legal_transition(JobStatus from, JobStatus to) {
  switch (from) {
    case JobStatus::kCreated:
      return to == JobStatus::kPending || to == JobStatus::kSkipped;
    case JobStatus::kPending:
      return to == JobStatus::kRunning;
    case JobStatus::kRunning:
      return to == JobStatus::kSuccess || to == JobStatus::kFailed;
    default:
      return false;
  }
}

const ResolvedJobSpec& ExecutionPlan::spec(std::string_view job) const {
  auto it = job_specs.find(std::string(job));
  if (it == job_specs.end()) {
    throw Error(ErrorCode::kUnknownJob, "no job named '" + std::string(job) + "'");
  }
  return it->second;
}

std::size_t ExecutionPlan::document_index(std::string_view job) const {
  std::size_t index = 0;
  for (const auto& group : ordered_stages) {
    for (const auto& name : group.jobs) {
      if (name == job) return index;
      ++index;
    }
  }
  throw Error(ErrorCode::kUnknownJob, "no job named '" + std::string(job) + "'");
}

JobStatus ExecutionState::status(std::string_view job) const {
  auto it = statuses.find(std::string(job));
  if (it == statuses.end()) {
    throw Error(ErrorCode::kUnknownJob, "no job named '" + std::string(job) + "'");
  }
  return it->second;
}

ExecutionPlan build_plan(const PipelineDefinition& def, std::string pipeline_id) {
  auto report = validate_pipeline(def);
  if (!report.ok()) throw ValidationFailed(std::move(report));

  ExecutionPlan plan;
  plan.pipeline_id = std::move(pipeline_id);
  for (const auto& stage : def.stages) plan.ordered_stages.push_back({stage, {}});
  for (const auto& job : def.jobs) {
    auto spec = resolve_job(def, job.name);
    plan.ordered_stages[spec.stage_index].jobs.push_back(job.name);
    plan.job_specs.emplace(job.name, std::move(spec));
  }
  // Unused stages carry no barrier semantics worth keeping.
  std::erase_if(plan.ordered_stages,
                [](const StageGroup& g) { return g.jobs.empty(); });
  return plan;
}

ExecutionState initial_state(ExecutionPlan plan) {
  ExecutionState state;
  for (const auto& [name, _] : plan.job_specs) {
    state.statuses.emplace(name, JobStatus::kCreated);
    state.timestamps.emplace(name, JobTimes{});
  }
  state.plan = std::move(plan);
  return state;
}

std::set<std::string> ready_jobs(const ExecutionState& state) {
  for (const auto& group : state.plan.ordered_stages) {
    bool all_success = true;
    for (const auto& job : group.jobs) {
      const auto status = state.status(job);
      if (status == JobStatus::kFailed || status == JobStatus::kSkipped) return {};
      if (status != JobStatus::kSuccess) all_success = false;
    }
    if (all_success) continue;
    std::set<std::string> ready;
    for (const auto& job : group.jobs) {
      if (state.status(job) == JobStatus::kCreated) ready.insert(job);
    }
    return ready;
  }
  return {};
}

namespace {

std::size_t stage_position(const ExecutionPlan& plan, std::string_view job) {
  for (std::size_t i = 0; i < plan.ordered_stages.size(); ++i) {
    const auto& jobs = plan.ordered_stages[i].jobs;
    if (std::find(jobs.begin(), jobs.end(), job) != jobs.end()) return i;
  }
  throw Error(ErrorCode::kUnknownJob, "no job named '" + std::string(job) + "'");
}

void stamp(JobTimes& times, JobStatus to, Timestamp now) {
  switch (to) {
    case JobStatus::kPending: times.queued = now; break;
    case JobStatus::kRunning: times.started = now; break;
    case JobStatus::kSuccess:
    case JobStatus::kFailed:
    case JobStatus::kSkipped: times.finished = now; break;
    case JobStatus::kCreated: break;
  }
}

}  // namespace

ExecutionState record_transition(const ExecutionState& state,
                                 std::string_view job, JobStatus to,
                                 Timestamp now) {
  const auto from = state.status(job);
  if (!is_legal_transition(from, to)) {
    throw Error(ErrorCode::kIllegalTransition,
                "job '" + std::string(job) + "' cannot go from " +
                    std::string(to_string(from)) + " to " +
                    std::string(to_string(to)));
  }
  ExecutionState next = state;
  const std::string name(job);
  next.statuses[name] = to;
  stamp(next.timestamps[name], to, now);

  if (to == JobStatus::kFailed) {
    const auto failed_stage = stage_position(next.plan, job);
    for (std::size_t i = failed_stage + 1; i < next.plan.ordered_stages.size(); ++i) {
      for (const auto& later : next.plan.ordered_stages[i].jobs) {
        if (next.statuses[later] == JobStatus::kCreated) {
          next.statuses[later] = JobStatus::kSkipped;
          stamp(next.timestamps[later], JobStatus::kSkipped, now);
        }
      }
    }
  }
  return next;
}

ExecutionState requeue_job(const ExecutionState& state, std::string_view job,
                           Timestamp now) {
  const auto from = state.status(job);
  if (from != JobStatus::kRunning) {
    throw Error(ErrorCode::kIllegalTransition,
                "only running jobs can be requeued; '" + std::string(job) +
                    "' is " + std::string(to_string(from)));
  }
  ExecutionState next = state;
  const std::string name(job);
  next.statuses[name] = JobStatus::kPending;
  auto& times = next.timestamps[name];
  times.queued = now;
  times.started.reset();
  return next;
}

ExecutionState release_ready(const ExecutionState& state, Timestamp now) {
  ExecutionState next = state;
  for (const auto& job : ready_jobs(state)) {
    next = record_transition(next, job, JobStatus::kPending, now);
  }
  return next;
}

PipelineStatus pipeline_status(const ExecutionState& state) {
  bool all_success = !state.statuses.empty();
  for (const auto& [_, status] : state.statuses) {
    if (status == JobStatus::kFailed) return PipelineStatus::kFailed;
    if (status != JobStatus::kSuccess) all_success = false;
  }
  return all_success ? PipelineStatus::kSuccess : PipelineStatus::kRunning;
}

}  // namespace sciflow
