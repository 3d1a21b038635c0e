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

// Stage-ordered execution plans and the per-job state machine.
//
//   created -> pending -> running -> success | failed
//   created -> skipped
//
// Stages act as barriers: jobs of stage k are released only once every job
// of the earlier stages has succeeded. A failure skips every `created` job in
// later stages; jobs already in flight in the failing stage run to completion.

#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sciflow/pipeline_model.hpp"

namespace sciflow {

using Clock = std::chrono::system_clock;
using Timestamp = Clock::time_point;

enum class JobStatus { kCreated, kPending, kRunning, kSuccess, kFailed, kSkipped };

std::string_view to_string(JobStatus status);
std::optional<JobStatus> job_status_from_string(std::string_view text);
bool is_terminal(JobStatus status);
bool is_legal_transition(JobStatus from, JobStatus to);

enum class PipelineStatus { kRunning, kSuccess, kFailed };

std::string_view to_string(PipelineStatus status);
std::optional<PipelineStatus> pipeline_status_from_string(std::string_view text);

struct StageGroup {
  std::string stage;
  std::vector<std::string> jobs;  // document order

  bool operator==(const StageGroup&) const = default;
};

struct ExecutionPlan {
  std::string pipeline_id;
  std::vector<StageGroup> ordered_stages;
  std::map<std::string, ResolvedJobSpec> job_specs;

  const ResolvedJobSpec& spec(std::string_view job) const;
  /// Position of the job within its pipeline document; used for FIFO order.
  std::size_t document_index(std::string_view job) const;

  bool operator==(const ExecutionPlan&) const = default;
};

struct JobTimes {
  std::optional<Timestamp> queued;
  std::optional<Timestamp> started;
  std::optional<Timestamp> finished;

  bool operator==(const JobTimes&) const = default;
};

struct ExecutionState {
  ExecutionPlan plan;
  std::map<std::string, JobStatus> statuses;
  std::map<std::string, JobTimes> timestamps;

  JobStatus status(std::string_view job) const;

  bool operator==(const ExecutionState&) const = default;
};

/// Throws ValidationFailed when the definition has errors.
ExecutionPlan build_plan(const PipelineDefinition& def,
                         std::string pipeline_id = {});

/// All jobs start `created`.
ExecutionState initial_state(ExecutionPlan plan);

/// The `created` jobs of the first stage that is not yet entirely
/// successful, provided every earlier stage is. Empty once anything failed.
std::set<std::string> ready_jobs(const ExecutionState& state);

/// Applies one legal transition, stamping `now`. Entering `failed` skips all
/// `created` jobs of strictly later stages. Throws kIllegalTransition.
ExecutionState record_transition(const ExecutionState& state,
                                 std::string_view job, JobStatus to,
                                 Timestamp now = Clock::now());

/// Returns a `running` job to `pending`. This is the lease-expiry path and
/// the only way a job moves backwards.
ExecutionState requeue_job(const ExecutionState& state, std::string_view job,
                           Timestamp now = Clock::now());

/// Marks every job returned by ready_jobs as pending.
ExecutionState release_ready(const ExecutionState& state,
                             Timestamp now = Clock::now());

PipelineStatus pipeline_status(const ExecutionState& state);

}  // namespace sciflow
