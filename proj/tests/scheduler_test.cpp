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

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "readiness_oracle.hpp"
#include "test_support.hpp"

namespace sciflow {
namespace {

using testing::all_layouts;
using testing::fixture;
using testing::kAllStatuses;
using testing::layout_definition;
using testing::readiness_oracle;
using Names = std::set<std::string>;

ExecutionState start(std::string_view listing) {
  return initial_state(build_plan(parse_pipeline(fixture(listing)), "p1"));
}

TEST(BuildPlan, GroupsByStage) {
  const auto plan1 = build_plan(parse_pipeline(fixture("listing1.yml")));
  EXPECT_EQ(plan1.ordered_stages,
            (std::vector<StageGroup>{{"stage1", {"job1"}}, {"stage2", {"job2"}}}));
  const auto plan3 = build_plan(parse_pipeline(fixture("listing3.yml")));
  EXPECT_EQ(plan3.ordered_stages,
            (std::vector<StageGroup>{
                {"stage0", {"job0"}}, {"stage1", {"job1"}}, {"stage2", {"job2"}}}));
  EXPECT_EQ(plan3.spec("job2").tags, std::vector<std::string>{"kubernetes-cluster"});
}

TEST(BuildPlan, RejectsInvalidDefinition) {
  auto def = parse_pipeline(fixture("listing1.yml"));
  def.jobs[1].stage = "nowhere";
  EXPECT_THROW(build_plan(def), ValidationFailed);
}

// All 2-job / 1-stage plans, enumerated: both jobs are released together.
TEST(BuildPlan, SharedStageReleasesTogether) {
  for (const auto& order : {std::vector<std::string>{"jobA", "jobB"},
                            std::vector<std::string>{"jobB", "jobA"}}) {
    PipelineDefinition def;
    def.stages = {"stage1"};
    for (const auto& name : order) def.jobs.push_back({name, "stage1", {"true"}});
    const auto plan = build_plan(def);
    ASSERT_EQ(plan.ordered_stages.size(), 1u);
    EXPECT_EQ(plan.ordered_stages[0].jobs, order);
    EXPECT_EQ(ready_jobs(initial_state(plan)), (Names{"jobA", "jobB"}));
  }
}

TEST(ReadyJobs, Listing1Sequence) {
  auto state = start("listing1.yml");
  EXPECT_EQ(ready_jobs(state), Names{"job1"});
  state = record_transition(state, "job1", JobStatus::kPending);
  EXPECT_TRUE(ready_jobs(state).empty());
  state = record_transition(state, "job1", JobStatus::kRunning);
  state = record_transition(state, "job1", JobStatus::kSuccess);
  EXPECT_EQ(ready_jobs(state), Names{"job2"});
}

TEST(ReadyJobs, MatchesOracleForEveryStatusCombination) {
  std::size_t checked = 0;
  for (const auto& sizes : all_layouts(6, 3)) {
    const auto def = layout_definition(sizes);
    auto state = initial_state(build_plan(def));
    const auto n = def.jobs.size();
    std::vector<int> digits(n, 0);
    while (true) {
      for (std::size_t i = 0; i < n; ++i) {
        state.statuses[def.jobs[i].name] = kAllStatuses[digits[i]];
      }
      const auto expected = readiness_oracle(def, state.statuses);
      ASSERT_EQ(ready_jobs(state), expected);
      ++checked;
      std::size_t pos = 0;
      while (pos < n && ++digits[pos] == 6) digits[pos++] = 0;
      if (pos == n) break;
    }
  }
  EXPECT_GT(checked, 700000u);
}

TEST(ReadyJobs, IsDeterministic) {
  auto state = start("listing3.yml");
  const auto first = ready_jobs(state);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(ready_jobs(state), first);
}

TEST(RecordTransition, FailureSkipsLaterStages) {
  auto state = release_ready(start("listing1.yml"));
  state = record_transition(state, "job1", JobStatus::kRunning);
  state = record_transition(state, "job1", JobStatus::kFailed);
  EXPECT_EQ(state.status("job2"), JobStatus::kSkipped);
  EXPECT_EQ(pipeline_status(state), PipelineStatus::kFailed);
  EXPECT_TRUE(state.timestamps.at("job2").finished.has_value());
  EXPECT_TRUE(ready_jobs(state).empty());
}

TEST(RecordTransition, SuccessfulRun) {
  auto state = release_ready(start("listing1.yml"));
  for (const auto* job : {"job1", "job2"}) {
    state = record_transition(state, job, JobStatus::kRunning);
    EXPECT_EQ(pipeline_status(state), PipelineStatus::kRunning);
    state = record_transition(state, job, JobStatus::kSuccess);
    state = release_ready(state);
  }
  EXPECT_EQ(pipeline_status(state), PipelineStatus::kSuccess);
}

TEST(RecordTransition, RejectsSkippingPending) {
  auto state = start("listing1.yml");
  try {
    record_transition(state, "job2", JobStatus::kRunning);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIllegalTransition);
    EXPECT_NE(std::string(e.what()).find("created to running"), std::string::npos);
  }
}

TEST(RecordTransition, LegalTransitionTable) {
  const std::set<std::pair<JobStatus, JobStatus>> legal = {
      {JobStatus::kCreated, JobStatus::kPending},
      {JobStatus::kCreated, JobStatus::kSkipped},
      {JobStatus::kPending, JobStatus::kRunning},
      {JobStatus::kRunning, JobStatus::kSuccess},
      {JobStatus::kRunning, JobStatus::kFailed},
  };
  for (auto from : kAllStatuses) {
    for (auto to : kAllStatuses) {
      auto state = start("listing1.yml");
      state.statuses["job1"] = from;
      const bool expected = legal.contains({from, to});
      EXPECT_EQ(is_legal_transition(from, to), expected);
      if (expected) {
        EXPECT_EQ(record_transition(state, "job1", to).status("job1"), to);
      } else {
        EXPECT_THROW(record_transition(state, "job1", to), Error);
      }
    }
  }
}

TEST(RecordTransition, StampsTimestamps) {
  const auto t0 = Timestamp(std::chrono::seconds(1000));
  auto state = start("listing1.yml");
  state = record_transition(state, "job1", JobStatus::kPending, t0);
  state = record_transition(state, "job1", JobStatus::kRunning, t0 + std::chrono::seconds(1));
  state = record_transition(state, "job1", JobStatus::kSuccess, t0 + std::chrono::seconds(5));
  const auto& times = state.timestamps.at("job1");
  EXPECT_EQ(times.queued, t0);
  EXPECT_EQ(times.started, t0 + std::chrono::seconds(1));
  EXPECT_EQ(times.finished, t0 + std::chrono::seconds(5));
}

TEST(RecordTransition, InFlightJobsOfFailingStageComplete) {
  PipelineDefinition def = layout_definition({2, 1});
  auto state = release_ready(initial_state(build_plan(def)));
  state = record_transition(state, "j0", JobStatus::kRunning);
  state = record_transition(state, "j1", JobStatus::kRunning);
  state = record_transition(state, "j0", JobStatus::kFailed);
  EXPECT_EQ(state.status("j1"), JobStatus::kRunning);
  EXPECT_EQ(state.status("j2"), JobStatus::kSkipped);
  state = record_transition(state, "j1", JobStatus::kSuccess);
  EXPECT_EQ(pipeline_status(state), PipelineStatus::kFailed);
}

TEST(RequeueJob, OnlyRunningJobsReturnToPending) {
  auto state = release_ready(start("listing1.yml"));
  EXPECT_THROW(requeue_job(state, "job1"), Error);
  state = record_transition(state, "job1", JobStatus::kRunning);
  state = requeue_job(state, "job1");
  EXPECT_EQ(state.status("job1"), JobStatus::kPending);
  EXPECT_FALSE(state.timestamps.at("job1").started.has_value());
}

TEST(PipelineStatus, Derivation) {
  auto state = start("listing3.yml");
  EXPECT_EQ(pipeline_status(state), PipelineStatus::kRunning);
  for (auto& [_, s] : state.statuses) s = JobStatus::kSuccess;
  EXPECT_EQ(pipeline_status(state), PipelineStatus::kSuccess);
  state.statuses["job1"] = JobStatus::kFailed;
  EXPECT_EQ(pipeline_status(state), PipelineStatus::kFailed);
  state.statuses["job1"] = JobStatus::kRunning;
  state.statuses["job2"] = JobStatus::kCreated;
  EXPECT_EQ(pipeline_status(state), PipelineStatus::kRunning);
}

// Topological simulator: stages are released one group at a time, in order;
// a failure stops every later release.
std::vector<Names> topological_releases(const PipelineDefinition& def,
                                        const std::set<std::string>& failing) {
  std::vector<Names> releases;
  for (const auto& stage : def.stages) {
    Names group;
    for (const auto& job : def.jobs) {
      if (job.stage == stage) group.insert(job.name);
    }
    releases.push_back(group);
    if (std::any_of(group.begin(), group.end(),
                    [&](const std::string& j) { return failing.contains(j); })) {
      break;
    }
  }
  return releases;
}

// Drives the scheduler with randomized completion order and collects every
// release (the set of jobs moved to pending at once), checking the stage
// barrier on every transition to running.
std::vector<Names> scheduler_releases(const PipelineDefinition& def,
                                      const std::set<std::string>& failing,
                                      std::mt19937& rng) {
  const auto plan = build_plan(def);
  auto state = initial_state(plan);
  std::vector<Names> releases;
  auto release = [&] {
    auto ready = ready_jobs(state);
    if (!ready.empty()) releases.push_back(ready);
    state = release_ready(state);
  };
  release();
  while (true) {
    std::vector<std::string> active;
    for (const auto& [job, st] : state.statuses) {
      if (st == JobStatus::kPending || st == JobStatus::kRunning) active.push_back(job);
    }
    if (active.empty()) break;
    const auto& job = active[rng() % active.size()];
    if (state.status(job) == JobStatus::kPending) {
      const auto k = *def.stage_index(def.find_job(job)->stage);
      for (const auto& other : def.jobs) {
        if (*def.stage_index(other.stage) < k) {
          EXPECT_EQ(state.status(other.name), JobStatus::kSuccess) << "barrier broken";
        }
      }
      state = record_transition(state, job, JobStatus::kRunning);
    } else {
      state = record_transition(
          state, job, failing.contains(job) ? JobStatus::kFailed : JobStatus::kSuccess);
      release();
    }
  }
  for (const auto& [job, st] : state.statuses) EXPECT_TRUE(is_terminal(st)) << job;
  return releases;
}

TEST(SchedulerOracle, ReleaseOrderMatchesTopologicalSimulator) {
  std::mt19937 rng(99);
  for (const auto& sizes : all_layouts(6, 3)) {
    const auto def = layout_definition(sizes);
    const auto n = def.jobs.size();
    // No failure, and every single-job failure.
    for (std::size_t f = 0; f <= n; ++f) {
      std::set<std::string> failing;
      if (f < n) failing.insert(def.jobs[f].name);
      for (int trial = 0; trial < 3; ++trial) {
        ASSERT_EQ(scheduler_releases(def, failing, rng),
                  topological_releases(def, failing));
      }
    }
  }
}

}  // namespace
}  // namespace sciflow
