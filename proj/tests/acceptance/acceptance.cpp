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


// End-to-end acceptance checks. Prints one PASS or FAIL line per criterion
// and exits nonzero when any criterion fails. Pass criterion numbers as
// arguments to run a subset.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <barrier>
#include <cctype>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "readiness_oracle.hpp"
#include "sciflow/client.hpp"
#include "sciflow/coordinator.hpp"
#include "sciflow/executors.hpp"
#include "sciflow/runner.hpp"
#include "sciflow/wire.hpp"
#include "sha256_oracle.hpp"
#include "test_support.hpp"

namespace sciflow {
namespace {

using namespace std::chrono_literals;
using nlohmann::json;
using testing::fixture;
using testing::make_repo;
using testing::read_file;
using testing::TempDir;
using testing::write_file;
using Strings = std::vector<std::string>;

const std::filesystem::path kTools = SCIFLOW_TOOLS_DIR;

// Collects failed expectations for one criterion.
class Check {
 public:
  bool expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
    return ok;
  }
  template <typename A, typename B>
  bool equal(const A& actual, const B& expected, const std::string& what) {
    return expect(actual == expected, what);
  }
  const Strings& failures() const { return failures_; }

 private:
  Strings failures_;
};

bool wait_until(const std::function<bool()>& pred, std::chrono::milliseconds limit = 30s) {
  const auto end = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < end) {
    if (pred()) return true;
    std::this_thread::sleep_for(5ms);
  }
  return pred();
}

class ScopedEnv {
 public:
  ScopedEnv(std::string name, const std::string& value) : name_(std::move(name)) {
    if (const char* old = std::getenv(name_.c_str())) old_ = old;
    ::setenv(name_.c_str(), value.c_str(), 1);
  }
  ~ScopedEnv() {
    if (old_) {
      ::setenv(name_.c_str(), old_->c_str(), 1);
    } else {
      ::unsetenv(name_.c_str());
    }
  }

 private:
  std::string name_;
  std::optional<std::string> old_;
};

std::vector<json> json_lines(const std::filesystem::path& path) {
  std::vector<json> out;
  if (!std::filesystem::exists(path)) return out;
  std::istringstream in(read_file(path));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

ExecutorSettings container_settings() {
  return {{"container.command",
           (kTools / "mock-container").string() +
               " run --rm -v {repo_dir}:/workspace -w /workspace {env} {image} "
               "/bin/sh -c {command}"}};
}

ExecutorSettings batch_settings() {
  return {{"batch.submitter", (kTools / "mock-sbatch").string()},
          {"batch.container_command",
           (kTools / "mock-container").string() +
               " exec --bind {repo_dir}:/workspace --pwd /workspace {env} "
               "docker://{image} /bin/sh -c {command}"}};
}

RunnerConfig runner_config(const std::filesystem::path& workspace) {
  RunnerConfig cfg;
  cfg.workspace_root = workspace;
  cfg.poll_interval = 20ms;
  cfg.heartbeat_interval = 100ms;
  cfg.max_backoff = 200ms;
  return cfg;
}

// A RunnerAgent polling an in-process coordinator on its own thread.
struct Agent {
  IssuedRunner runner;
  std::unique_ptr<RunnerAgent> agent;
  std::jthread thread;

  Agent(Coordinator& c, const std::string& name, const std::set<std::string>& tags,
        bool run_untagged, std::shared_ptr<const Executor> executor,
        const std::filesystem::path& workspace)
      : runner(c.register_runner(name, tags, executor->kind(), run_untagged)),
        agent(std::make_unique<RunnerAgent>(
            runner_config(workspace), std::make_shared<LocalRunnerLink>(c, runner.token),
            std::move(executor))),
        thread([a = agent.get()](std::stop_token stop) { a->run(stop); }) {}
};

bool finished(const Coordinator& c, const std::string& id) {
  return c.get_pipeline(id).status != PipelineStatus::kRunning;
}

const JobView& job_view(const PipelineView& view, const std::string& name) {
  for (const auto& job : view.jobs) {
    if (job.name == name) return job;
  }
  throw std::runtime_error("no job " + name);
}

// ---------------------------------------------------------------------------
// 1. Corpus parse

struct ExpectedJob {
  std::string name;
  std::string stage;
  std::string image;
  Strings tags;
  VariableMap variables;
  Strings script;
};

void expect_listing(Check& check, const std::string& file, const std::vector<ExpectedJob>& jobs) {
  const auto def = parse_pipeline(fixture(file));
  const auto report = validate_pipeline(def);
  check.expect(report.errors.empty(), file + " has errors:\n" + report.to_text());
  check.equal(def.jobs.size(), jobs.size(), file + " job count");
  for (const auto& want : jobs) {
    const auto got = resolve_job(def, want.name);
    const auto where = file + " " + want.name;
    check.equal(got.stage, want.stage, where + " stage");
    check.equal(got.image, std::optional<std::string>(want.image), where + " image");
    check.equal(got.tags, want.tags, where + " tags");
    check.equal(got.variables, want.variables, where + " variables");
    check.equal(got.script, want.script, where + " script");
  }
}

void corpus_parse(Check& check) {
  const Strings step1 = {"sh ./download-data.sh", "python3 analyze-data-step1.py"};
  const Strings step2 = {"python3 analyze-data-step2.py"};
  const VariableMap small = {{"SLURM_PARAMETERS", "-c 1 --mem 2G -t 1:0:0"},
                             {"KUBERNETES_CPU_REQUEST", "1"},
                             {"KUBERNETES_MEMORY_REQUEST", "2G"}};
  const VariableMap large = {{"SLURM_PARAMETERS", "-c 5 --mem 40G -t 5:0:0"},
                             {"KUBERNETES_CPU_REQUEST", "5"},
                             {"KUBERNETES_MEMORY_REQUEST", "40G"}};
  expect_listing(check, "listing1.yml",
                 {{"job1", "stage1", "ubuntu:22.04", {"docker-cluster"}, {}, step1},
                  {"job2", "stage2", "ubuntu:22.04", {"docker-cluster"}, {}, step2}});
  expect_listing(check, "listing2.yml",
                 {{"job1", "stage1", "ubuntu:22.04", {"slurm-cluster"}, small, step1},
                  {"job2", "stage2", "ubuntu:22.04", {"slurm-cluster"}, large, step2}});
  expect_listing(check, "listing3.yml",
                 {{"job0", "stage0", "ubuntu:22.04", {"scientific-instrument"}, {},
                   {"powershell ./upload-data.bat"}},
                  {"job1", "stage1", "ubuntu:22.04", {"slurm-cluster"}, small, step1},
                  {"job2", "stage2", "ubuntu:22.04", {"kubernetes-cluster"}, large, step2}});
}

// ---------------------------------------------------------------------------
// 2. Sequencing

// Stand-ins for the listing scripts. Each appends "<label> <ns since epoch>"
// to `trace` when it runs. Every job starts from a fresh clone, so step 2 of
// job1 reads what step 1 wrote but job2 reads nothing from job1.
std::map<std::string, std::string> traced_scripts(const std::filesystem::path& trace) {
  const auto t = trace.string();
  return {
      {"download-data.sh", "echo \"job1.step1 $(date +%s%N)\" >> '" + t +
                               "'\necho raw-data > data.txt\n"},
      {"analyze-data-step1.py",
       "import time\ndata = open('data.txt').read().strip()\n"
       "open('" + t + "', 'a').write('job1.step2 %d\\n' % time.time_ns())\n"
       "print(data + '-step1')\n"},
      {"analyze-data-step2.py",
       "import time\nopen('" + t + "', 'a').write('job2.step1 %d\\n' % time.time_ns())\n"
       "print('step2')\n"},
      {"upload-data.bat", "echo uploading\n"},
  };
}

void sequencing(Check& check) {
  TempDir tmp;
  const auto trace = tmp / "trace.txt";
  const auto ledger = tmp / "container-ledger.jsonl";
  ScopedEnv env("SCIFLOW_MOCK_CONTAINER_LEDGER", ledger.string());
  const auto repo = make_repo(tmp / "repo", traced_scripts(trace));

  Coordinator c{CoordinatorConfig{}};
  const auto id = c.submit_pipeline(repo.dir.string(), repo.commit, fixture("listing1.yml"));
  {
    Agent agent(c, "docker", {"docker-cluster"}, false,
                std::make_shared<ContainerExecutor>(container_settings()), tmp / "ws");
    check.expect(wait_until([&] { return finished(c, id); }), "pipeline did not finish");
  }
  const auto view = c.get_pipeline(id);
  check.equal(view.status, PipelineStatus::kSuccess,
              "pipeline status; job1 log:\n" + c.job_log(id, "job1") + "\njob2 log:\n" +
                  c.job_log(id, "job2"));

  // Step timestamps, as written by the steps themselves.
  std::istringstream in(read_file(trace));
  Strings labels;
  std::vector<long long> stamps;
  for (std::string label; in >> label;) {
    long long ns = 0;
    in >> ns;
    labels.push_back(label);
    stamps.push_back(ns);
  }
  check.equal(labels, Strings{"job1.step1", "job1.step2", "job2.step1"}, "step order");
  check.expect(std::is_sorted(stamps.begin(), stamps.end()) &&
                   std::adjacent_find(stamps.begin(), stamps.end()) == stamps.end(),
               "step timestamps not strictly increasing");

  // job2 is not leased before job1's terminal report.
  const auto& j1 = job_view(view, "job1").times;
  const auto& j2 = job_view(view, "job2").times;
  check.expect(j1.finished && j2.started && *j2.started >= *j1.finished,
               "job2 started before job1 finished");

  // Every step ran in the job's image.
  const auto runs = json_lines(ledger);
  check.equal(runs.size(), 3u, "container runs");
  for (const auto& run : runs) check.equal(run.at("image"), "ubuntu:22.04", "container image");
}

// ---------------------------------------------------------------------------
// 3. Stage parallelism

void stage_parallelism(Check& check) {
  // Readiness against the brute-force oracle for every layout of up to six
  // jobs in up to three stages and every assignment of statuses.
  std::size_t states = 0;
  for (const auto& sizes : testing::all_layouts(6, 3)) {
    const auto def = testing::layout_definition(sizes);
    auto state = initial_state(build_plan(def));
    const auto n = def.jobs.size();
    std::vector<int> digits(n, 0);
    while (true) {
      for (std::size_t i = 0; i < n; ++i) {
        state.statuses[def.jobs[i].name] = testing::kAllStatuses[digits[i]];
      }
      if (ready_jobs(state) != testing::readiness_oracle(def, state.statuses)) {
        check.expect(false, "ready_jobs disagrees with the oracle");
        return;
      }
      ++states;
      std::size_t pos = 0;
      while (pos < n && ++digits[pos] == 6) digits[pos++] = 0;
      if (pos == n) break;
    }
  }
  check.expect(states > 700000, "oracle sweep too small");

  // The coordinator never leaves a ready job unreleased and never releases a
  // job whose earlier stages have not all succeeded, for every layout, with
  // jobs completing in a shuffled order.
  std::mt19937 rng(7);
  for (const auto& sizes : testing::all_layouts(6, 3)) {
    const auto def = testing::layout_definition(sizes);
    std::string source = "stages: [";
    for (std::size_t s = 0; s < def.stages.size(); ++s) {
      source += (s ? ", " : "") + def.stages[s];
    }
    source += "]\n";
    for (const auto& job : def.jobs) {
      source += job.name + ":\n  stage: " + job.stage + "\n  script: [\"true\"]\n";
    }
    Coordinator c{CoordinatorConfig{}};
    const auto id = c.submit_pipeline("r", "c", source);
    const auto runner = c.register_runner("r", {}, ExecutorKind::kShell, true);
    auto consistent = [&] {
      const auto state = c.pipeline_state(id);
      if (!testing::readiness_oracle(def, state.statuses).empty()) return false;
      for (const auto& job : def.jobs) {
        if (state.statuses.at(job.name) == JobStatus::kCreated) continue;
        for (const auto& other : def.jobs) {
          if (*def.stage_index(other.stage) < *def.stage_index(job.stage) &&
              state.statuses.at(other.name) != JobStatus::kSuccess) {
            return false;
          }
        }
      }
      return true;
    };
    while (!finished(c, id)) {
      std::vector<JobLease> leases;
      while (auto lease = c.poll_job(runner.token).lease) leases.push_back(*lease);
      if (!check.expect(!leases.empty() && consistent(), "barrier violated")) return;
      std::shuffle(leases.begin(), leases.end(), rng);
      for (const auto& lease : leases) {
        c.update_job(runner.token, lease.lease_id, JobStatus::kSuccess);
        if (!check.expect(consistent(), "barrier violated")) return;
      }
    }
  }

  // Three jobs in one stage on two real runners.
  TempDir tmp;
  const auto repo = make_repo(tmp / "repo", {{"README", "x\n"}});
  Coordinator c{CoordinatorConfig{}};
  const auto id = c.submit_pipeline(repo.dir.string(), repo.commit,
                                    "stages: [work, report]\n"
                                    "a:\n  stage: work\n  script: [\"sleep 0.5\"]\n"
                                    "b:\n  stage: work\n  script: [\"sleep 0.5\"]\n"
                                    "c:\n  stage: work\n  script: [\"sleep 0.5\"]\n"
                                    "d:\n  stage: report\n  script: [\"true\"]\n");
  {
    auto shell = std::make_shared<ShellExecutor>();
    Agent one(c, "one", {}, true, shell, tmp / "ws1");
    Agent two(c, "two", {}, true, shell, tmp / "ws2");
    check.expect(wait_until([&] { return finished(c, id); }), "pipeline did not finish");
  }
  const auto view = c.get_pipeline(id);
  check.equal(view.status, PipelineStatus::kSuccess, "pipeline status");
  std::vector<std::pair<Timestamp, Timestamp>> windows;
  std::set<std::string> runners;
  for (const auto* name : {"a", "b", "c"}) {
    const auto& job = job_view(view, name);
    if (!job.times.started || !job.times.finished) {
      check.expect(false, std::string("missing times for ") + name);
      return;
    }
    windows.emplace_back(*job.times.started, *job.times.finished);
    runners.insert(job.runner_id);
  }
  check.equal(runners.size(), 2u, "both runners took work");
  bool overlap = false;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    for (std::size_t k = i + 1; k < windows.size(); ++k) {
      overlap |= std::max(windows[i].first, windows[k].first) <
                 std::min(windows[i].second, windows[k].second);
    }
  }
  check.expect(overlap, "no two jobs of the stage overlapped");
  // Two runners of concurrency one: never three jobs at once.
  bool triple = false;
  for (const auto& w : windows) {
    int live = 0;
    for (const auto& other : windows) live += other.first <= w.first && w.first < other.second;
    triple |= live > 2;
  }
  check.expect(!triple, "three jobs overlapped on two runners");
  const auto last_finish = std::max({windows[0].second, windows[1].second, windows[2].second});
  const auto& d = job_view(view, "d").times;
  check.expect(d.started && *d.started >= last_finish, "report stage started before barrier");
}

// ---------------------------------------------------------------------------
// 4. Decentralized routing

std::string swap_tags(std::string source) {
  const auto swap = [&](const std::string& from, const std::string& to) {
    source = std::regex_replace(source, std::regex("- " + from + "\n"), "- " + to + "\n");
  };
  swap("slurm-cluster", "@tmp@");
  swap("kubernetes-cluster", "slurm-cluster");
  swap("@tmp@", "kubernetes-cluster");
  return source;
}

void routing(Check& check) {
  TempDir tmp;
  // `powershell` is not available here; a shim hands the script to sh.
  write_file(tmp / "bin" / "powershell", "#!/bin/sh\nexec sh \"$@\"\n");
  std::filesystem::permissions(tmp / "bin" / "powershell", std::filesystem::perms::owner_all);
  ScopedEnv path("PATH", (tmp / "bin").string() + ":" + std::getenv("PATH"));
  const auto repo = make_repo(tmp / "repo", traced_scripts(tmp / "trace.txt"));

  Coordinator c{CoordinatorConfig{}};
  Agent instrument(c, "instrument-pc", {"scientific-instrument"}, false,
                   std::make_shared<ShellExecutor>(), tmp / "ws-instrument");
  Agent cluster(c, "login-node", {"slurm-cluster"}, false,
                std::make_shared<BatchExecutor>(batch_settings()), tmp / "ws-slurm");
  Agent cloud(c, "gke", {"kubernetes-cluster"}, false, std::make_shared<KubernetesExecutor>(),
              tmp / "ws-k8s");
  const std::map<std::string, std::string> ids = {
      {instrument.runner.runner_id, "scientific-instrument"},
      {cluster.runner.runner_id, "slurm-cluster"},
      {cloud.runner.runner_id, "kubernetes-cluster"}};

  const auto original = fixture("listing3.yml");
  const auto swapped = swap_tags(original);
  std::map<std::string, std::string> expected_route[2] = {
      {{"job0", "scientific-instrument"}, {"job1", "slurm-cluster"}, {"job2", "kubernetes-cluster"}},
      {{"job0", "scientific-instrument"}, {"job1", "kubernetes-cluster"}, {"job2", "slurm-cluster"}}};
  std::string pipelines[2];
  int run = 0;
  for (const auto* source : {&original, &swapped}) {
    const auto id = c.submit_pipeline(repo.dir.string(), repo.commit, *source);
    pipelines[run] = id;
    check.expect(wait_until([&] { return finished(c, id); }), "pipeline did not finish");
    const auto view = c.get_pipeline(id);
    check.equal(view.status, PipelineStatus::kSuccess, "run " + std::to_string(run) + " status");
    for (const auto& job : view.jobs) {
      const auto it = ids.find(job.runner_id);
      check.expect(it != ids.end() && it->second == expected_route[run].at(job.name),
                   "run " + std::to_string(run) + ": " + job.name + " went to the wrong runner");
    }
    ++run;
  }

  // Only the tags differ between the two runs' resolved specs.
  const auto before = c.pipeline_state(pipelines[0]).plan;
  const auto after = c.pipeline_state(pipelines[1]).plan;
  check.equal(after.spec("job1").tags, Strings{"kubernetes-cluster"}, "swapped tags");
  for (const auto* name : {"job0", "job1", "job2"}) {
    auto a = job_spec_to_json(before.spec(name));
    auto b = job_spec_to_json(after.spec(name));
    a.erase("tags");
    b.erase("tags");
    check.equal(b.dump(), a.dump(), std::string(name) + " spec changed beyond tags");
  }
}

// ---------------------------------------------------------------------------
// 5. Batch translation fidelity

void batch_fidelity(Check& check) {
  TempDir tmp;
  const auto ledger = tmp / "sbatch-ledger.jsonl";
  ScopedEnv env("SCIFLOW_MOCK_SBATCH_LEDGER", ledger.string());
  const Workspace ws{tmp / "ws", tmp / "ws" / "repo"};
  for (const auto& [name, content] : traced_scripts(tmp / "trace.txt")) {
    write_file(ws.repo_dir / name, content);
  }
  const auto def = parse_pipeline(fixture("listing2.yml"));
  const BatchExecutor executor(batch_settings());
  for (const auto* name : {"job1", "job2"}) {
    const auto result = executor.run_job(resolve_job(def, name), ws);
    check.expect(result.success, std::string(name) + " failed:\n" + result.log);
  }
  const auto lines = json_lines(ledger);
  if (!check.equal(lines.size(), 2u, "submission count")) return;
  const std::vector<Strings> expected = {{"-c", "1", "--mem", "2G", "-t", "1:0:0"},
                                         {"-c", "5", "--mem", "40G", "-t", "5:0:0"}};
  for (std::size_t i = 0; i < 2; ++i) {
    const auto argv = lines[i].at("argv").get<Strings>();
    const Strings head = {(kTools / "mock-sbatch").string(), "--wait"};
    check.expect(argv.size() == head.size() + expected[i].size() &&
                     std::equal(head.begin(), head.end(), argv.begin()) &&
                     std::equal(expected[i].begin(), expected[i].end(), argv.begin() + 2),
                 "argv " + lines[i].at("argv").dump());
  }
}

// ---------------------------------------------------------------------------
// 6. Kubernetes manifest fidelity

bool has_time_key(const json& j) {
  if (j.is_object()) {
    for (const auto& [key, value] : j.items()) {
      std::string lower = key;
      std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
      if (lower.find("time") != std::string::npos || lower.find("deadline") != std::string::npos) {
        return true;
      }
      if (has_time_key(value)) return true;
    }
  } else if (j.is_array()) {
    for (const auto& v : j) {
      if (has_time_key(v)) return true;
    }
  }
  return false;
}

void k8s_fidelity(Check& check) {
  const auto def = parse_pipeline(fixture("listing2.yml"));
  const std::map<std::string, std::pair<std::string, std::string>> expected = {
      {"job1", {"1", "2G"}}, {"job2", {"5", "40G"}}};
  for (const auto& [name, requests] : expected) {
    auto job = resolve_job(def, name);
    const auto manifest = k8s_manifest(job, "/work/repo");
    check.equal(manifest.cpu_request, requests.first, name + " cpu");
    check.equal(manifest.memory_request, requests.second, name + " memory");
    const auto doc = json::parse(manifest.serialize());
    const auto& req = doc.at("spec").at("containers").at(0).at("resources").at("requests");
    check.equal(req.at("cpu"), requests.first, name + " serialized cpu");
    check.equal(req.at("memory"), requests.second, name + " serialized memory");
    check.expect(!has_time_key(doc), name + " manifest has a time field");
    check.expect(manifest.serialize().find("1:0:0") == std::string::npos &&
                     manifest.serialize().find("5:0:0") == std::string::npos,
                 name + " manifest carries the batch time limit");
    job.variables.erase("SLURM_PARAMETERS");
    check.equal(k8s_manifest(job, "/work/repo").serialize(), manifest.serialize(),
                name + " manifest depends on SLURM_PARAMETERS");
  }
}

// ---------------------------------------------------------------------------
// 7. Shell ignore rule

void shell_ignore(Check& check) {
  TempDir tmp;
  const auto def = parse_pipeline(fixture("listing1.yml"));
  auto run = [&](std::optional<std::string> image, const std::string& dir) {
    const Workspace ws{tmp / dir, tmp / dir / "repo"};
    for (const auto& [name, content] : traced_scripts(tmp / (dir + ".trace"))) {
      write_file(ws.repo_dir / name, content);
    }
    auto job = resolve_job(def, "job1");
    job.image = std::move(image);
    auto result = ShellExecutor().run_job(job, ws);
    // Durations are the only thing allowed to differ.
    result.log = std::regex_replace(result.log, std::regex(R"(after \d+ ms)"), "");
    return result;
  };
  const auto with = run("ubuntu:22.04", "with");
  const auto without = run(std::nullopt, "without");
  check.expect(with.success, "job failed:\n" + with.log);
  check.equal(with.log, without.log, "logs differ:\n" + with.log + "\n---\n" + without.log);
  check.equal(with.steps.size(), without.steps.size(), "step count");
  for (std::size_t i = 0; i < with.steps.size() && i < without.steps.size(); ++i) {
    check.equal(with.steps[i].exit_code, without.steps[i].exit_code, "exit code");
    check.equal(with.steps[i].command, without.steps[i].command, "command");
  }
  check.equal(read_file(tmp / "with" / "repo" / "data.txt"),
              read_file(tmp / "without" / "repo" / "data.txt"), "workspace contents");
}

// ---------------------------------------------------------------------------
// 8. Failure semantics

void failure_semantics(Check& check) {
  TempDir tmp;
  const auto repo = make_repo(tmp / "repo", {{"README", "x\n"}});
  CoordinatorConfig cfg;
  cfg.data_dir = tmp / "data";
  Coordinator c{cfg};
  const auto id = c.submit_pipeline(repo.dir.string(), repo.commit,
                                    "stages: [stage1, stage2]\n"
                                    "fetch:\n  stage: stage1\n  script: [\"exit 3\"]\n"
                                    "side:\n  stage: stage1\n  script: [\"true\"]\n"
                                    "analyze:\n  stage: stage2\n  script: [\"true\"]\n"
                                    "plot:\n  stage: stage2\n  script: [\"true\"]\n");
  std::string runner_token;
  {
    Agent agent(c, "r", {}, true, std::make_shared<ShellExecutor>(), tmp / "ws");
    runner_token = agent.runner.token;
    check.expect(wait_until([&] { return finished(c, id); }), "pipeline did not finish");
    std::this_thread::sleep_for(200ms);  // a few more polls after the failure
  }
  const auto view = c.get_pipeline(id);
  check.equal(view.status, PipelineStatus::kFailed, "pipeline status");
  check.equal(job_view(view, "fetch").status, JobStatus::kFailed, "fetch status");
  check.equal(job_view(view, "analyze").status, JobStatus::kSkipped, "analyze status");
  check.equal(job_view(view, "plot").status, JobStatus::kSkipped, "plot status");
  check.expect(!c.poll_job(runner_token).lease, "a lease was issued after the failure");

  std::set<std::string> leased;
  for (const auto& event : json_lines(tmp / "data" / "events.log")) {
    if (event.at("type") == "lease_issued") leased.insert(event.at("job"));
  }
  check.expect(leased.count("fetch") == 1, "fetch was never leased");
  check.expect(!leased.count("analyze") && !leased.count("plot"), "a stage2 lease was issued");
}

// ---------------------------------------------------------------------------
// 9. Single claim under contention

void single_claim(Check& check) {
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Coordinator c{CoordinatorConfig{}};
    c.submit_pipeline("r", "c", "stages: [s]\nonly:\n  stage: s\n  script: [\"true\"]\n");
    const auto a = c.register_runner("a", {}, ExecutorKind::kShell, true);
    const auto b = c.register_runner("b", {}, ExecutorKind::kShell, true);
    std::barrier start(2);
    std::atomic<int> leases{0};
    auto poll = [&](const std::string& token) {
      start.arrive_and_wait();
      if (c.poll_job(token).lease) ++leases;
    };
    std::thread ta(poll, a.token);
    std::thread tb(poll, b.token);
    ta.join();
    tb.join();
    if (leases != 1) ++bad;
  }
  check.equal(bad, 0, std::to_string(bad) + " of 1000 trials did not issue exactly one lease");
}

// ---------------------------------------------------------------------------
// 10. Dynamic pipelines

void dynamic_pipelines(Check& check) {
  TempDir tmp;
  const auto repo = make_repo(
      tmp / "repo",
      {{"make-child.sh",
        "cat > child.yml <<'YML'\n"
        "stages: [simulate, summarize]\n"
        "run-1:\n  stage: simulate\n  script: [\"echo run 1 > result.txt\"]\n"
        "  artifacts:\n    paths: [result.txt]\n"
        "run-2:\n  stage: simulate\n  script: [\"echo run 2 > result.txt\"]\n"
        "summary:\n  stage: summarize\n  script: [\"echo summary from child\"]\n"
        "YML\n"},
       {"make-bad-child.sh",
        "printf 'stages: [a]\\nx:\\n  stage: nowhere\\n  script: [y]\\n' > child.yml\n"}});
  const std::string parent_source =
      "stages: [generate]\n"
      "plan:\n  stage: generate\n  script: [\"sh ./make-child.sh\"]\n"
      "  artifacts:\n    paths: [child.yml]\n"
      "  trigger:\n    artifact: child.yml\n";

  Coordinator c{CoordinatorConfig{}};
  Agent agent(c, "r", {}, true, std::make_shared<ShellExecutor>(), tmp / "ws");

  const auto parent = c.submit_pipeline(repo.dir.string(), repo.commit, parent_source);
  check.expect(wait_until([&] {
                 const auto view = c.get_pipeline(parent);
                 return view.children.size() == 1 && finished(c, view.children[0]);
               }),
               "child pipeline did not finish; parent log:\n" + c.job_log(parent, "plan"));
  const auto parent_view = c.get_pipeline(parent);
  check.equal(parent_view.status, PipelineStatus::kSuccess, "parent status");
  if (parent_view.children.size() == 1) {
    const auto child = c.get_pipeline(parent_view.children[0]);
    check.equal(child.status, PipelineStatus::kSuccess, "child status");
    check.equal(child.parent, std::optional<ParentLink>(ParentLink{parent, "plan"}),
                "child parent link");
    check.equal(child.jobs.size(), 3u, "child jobs");
    check.equal(child.repo, parent_view.repo, "child repository");
    check.expect(c.job_log(child.pipeline_id, "summary").find("summary from child") !=
                     std::string::npos,
                 "child job log");
    check.equal(child.artifacts.size(), 1u, "child artifacts");
    // The child was created from inside the running parent job and has its
    // own job records.
    const auto& plan = job_view(parent_view, "plan").times;
    check.expect(plan.started && plan.finished && *plan.started <= child.created_at &&
                     child.created_at <= *plan.finished,
                 "child not created while the parent job ran");
    check.expect(job_view(child, "run-1").runner_id == job_view(parent_view, "plan").runner_id,
                 "child job runner");
  }

  const std::string bad_source =
      "stages: [generate]\n"
      "plan:\n  stage: generate\n  script: [\"sh ./make-bad-child.sh\"]\n"
      "  trigger:\n    artifact: child.yml\n";
  const auto before = c.pipeline_ids().size();
  const auto bad = c.submit_pipeline(repo.dir.string(), repo.commit, bad_source);
  check.expect(wait_until([&] { return finished(c, bad); }), "bad parent did not finish");
  check.equal(c.get_pipeline(bad).status, PipelineStatus::kFailed, "bad parent status");
  check.expect(c.get_pipeline(bad).children.empty(), "invalid child was created");
  check.equal(c.pipeline_ids().size(), before + 1, "pipeline count");
  const auto log = c.job_log(bad, "plan");
  check.expect(log.find("child pipeline rejected") != std::string::npos &&
                   log.find("JOB_UNKNOWN_STAGE") != std::string::npos &&
                   log.find("1 error(s)") != std::string::npos,
               "validation report missing from log:\n" + log);
}

// ---------------------------------------------------------------------------
// 11. Crash recovery

// A coordinator in its own process, so that it can be killed outright.
class ServerProcess {
 public:
  ServerProcess(const std::filesystem::path& data, const std::filesystem::path& logs,
                const std::string& ttl)
      : process_((kTools / "sciflow").string(),
                 {"server", "--listen", "127.0.0.1:0", "--data-dir", data.string(),
                  "--lease-ttl", ttl},
                 logs) {
    url_ = process_.wait_for_stdout("listening on ").value_or("");
    if (url_.empty()) throw std::runtime_error("server did not start: " + process_.err());
  }
  const std::string& url() const { return url_; }
  int kill() { return process_.stop(SIGKILL); }

 private:
  testing::BackgroundProcess process_;
  std::string url_;
};

void crash_recovery(Check& check) {
  TempDir tmp;
  const auto data = tmp / "data";
  const std::string source =
      "stages: [acquire, analyze]\n"
      "acquire:\n  stage: acquire\n  script: [x]\n  artifacts:\n    paths: [raw.csv]\n"
      "analyze:\n  stage: analyze\n  script: [y]\n";
  const std::string payload = "t,v\n0,1.5\n1,2.5\n";

  std::optional<ServerProcess> server(std::in_place, data, tmp / "logs1", "3");
  auto client = std::make_unique<CoordinatorClient>(server->url());
  const auto runner = client->register_runner("r", {}, ExecutorKind::kShell, true);
  const auto id = client->submit_pipeline("https://example.org/lab.git", "c0ffee", source);
  const auto first = client->poll_job(runner.token).lease.value();
  client->update_job(runner.token, first.lease_id, JobStatus::kRunning, "acquiring\n");
  const auto artifact = client->upload_artifact(runner.token, first.lease_id, "raw.csv", payload);
  client->update_job(runner.token, first.lease_id, JobStatus::kSuccess, "done\n");
  const auto second = client->poll_job(runner.token).lease.value();
  client->update_job(runner.token, second.lease_id, JobStatus::kRunning, "analyzing\n");
  const auto before = client->get_pipeline(id);
  const auto log_before = client->job_log(id, "acquire");

  // Kill mid-run: analyze holds a live lease.
  check.equal(server->kill(), 128 + SIGKILL, "server was not killed");
  server.emplace(data, tmp / "logs2", "3");
  client = std::make_unique<CoordinatorClient>(server->url());
  const auto after = client->get_pipeline(id);
  check.expect(after == before, "pipeline view changed across the restart:\n" +
                                    pipeline_view_to_json(before).dump() + "\n" +
                                    pipeline_view_to_json(after).dump());
  check.equal(job_view(after, "analyze").status, JobStatus::kRunning, "analyze status");
  check.equal(client->job_log(id, "acquire"), log_before, "log after restart");
  check.equal(after.artifacts.size(), 1u, "artifacts after restart");
  check.equal(testing::oracle_sha256(client->get_artifact(artifact)), artifact,
              "artifact content after restart");

  // The same replay in process, compared on the full ExecutionState. The
  // event log is copied while the writer is still live, as a crash would
  // leave it, and then given a torn final record.
  {
    CoordinatorConfig cfg;
    cfg.data_dir = tmp / "inproc";
    Coordinator live{cfg};
    const auto r = live.register_runner("r", {}, ExecutorKind::kShell, true);
    const auto pid = live.submit_pipeline("repo", "c0ffee", source);
    const auto l1 = live.poll_job(r.token).lease.value();
    live.upload_artifact(r.token, l1.lease_id, "raw.csv", payload);
    live.update_job(r.token, l1.lease_id, JobStatus::kSuccess, "ok\n");
    live.poll_job(r.token);
    std::filesystem::copy(cfg.data_dir, tmp / "copy", std::filesystem::copy_options::recursive);
    {
      std::ofstream torn(tmp / "copy" / "events.log", std::ios::app | std::ios::binary);
      torn << R"({"type":"job_finished","pipeline_id":")" << pid;
    }
    CoordinatorConfig copy_cfg;
    copy_cfg.data_dir = tmp / "copy";
    Coordinator replayed{copy_cfg};
    check.expect(replayed.pipeline_state(pid) == live.pipeline_state(pid),
                 "replayed ExecutionState differs");
    check.equal(replayed.get_pipeline(pid), live.get_pipeline(pid), "replayed view differs");
    check.equal(replayed.get_artifact(testing::oracle_sha256(payload)),
                payload, "replayed artifact");
  }

  // Nobody renews the analyze lease after the restart: it expires and the
  // job goes back to pending.
  check.expect(wait_until([&] {
                 return job_view(client->get_pipeline(id), "analyze").status ==
                        JobStatus::kPending;
               }, 15s),
               "expired lease did not return the job to pending");
  check.expect(client->job_log(id, "analyze").find("expired; job returned to pending") !=
                   std::string::npos,
               "expiry not logged");
  try {
    client->update_job(runner.token, second.lease_id, JobStatus::kSuccess);
    check.expect(false, "expired lease still accepted");
  } catch (const Error& e) {
    check.equal(e.code(), ErrorCode::kStaleLease, "expired lease error code");
  }
  const auto retry = client->poll_job(runner.token).lease;
  check.expect(retry && retry->job.name == "analyze" && retry->lease_id != second.lease_id,
               "job was not offered again");
  if (retry) client->update_job(runner.token, retry->lease_id, JobStatus::kSuccess);
  check.equal(client->get_pipeline(id).status, PipelineStatus::kSuccess, "final status");

  // And the outcome survives one more crash.
  server->kill();
  server.emplace(data, tmp / "logs3", "3");
  check.equal(CoordinatorClient(server->url()).get_pipeline(id).status, PipelineStatus::kSuccess,
              "final status after second restart");
}

struct Criterion {
  int number;
  std::string title;
  std::function<void(Check&)> run;
};

}  // namespace
}  // namespace sciflow

int main(int argc, char** argv) {
  using namespace sciflow;
  const std::vector<Criterion> criteria = {
      {1, "corpus parse", corpus_parse},
      {2, "sequencing", sequencing},
      {3, "stage parallelism", stage_parallelism},
      {4, "decentralized routing", routing},
      {5, "batch translation fidelity", batch_fidelity},
      {6, "kubernetes manifest fidelity", k8s_fidelity},
      {7, "shell ignore rule", shell_ignore},
      {8, "failure semantics", failure_semantics},
      {9, "single claim under contention", single_claim},
      {10, "dynamic pipelines", dynamic_pipelines},
      {11, "crash recovery", crash_recovery},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& criterion : criteria) {
    if (!only.empty() && !only.count(criterion.number)) continue;
    Check check;
    const auto started = std::chrono::steady_clock::now();
    try {
      criterion.run(check);
    } catch (const std::exception& e) {
      check.expect(false, std::string("exception: ") + e.what());
    }
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - started)
                        .count();
    const bool pass = check.failures().empty();
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << criterion.number << ". " << criterion.title
              << " (" << ms << " ms)\n";
    for (const auto& f : check.failures()) std::cout << "      " << f << "\n";
    std::cout.flush();
  }
  return failed == 0 ? 0 : 1;
}
