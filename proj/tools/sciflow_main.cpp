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


// The sciflow command line. Exit codes are the same for every subcommand:
//
//   0  ok
//   1  domain failure (invalid definition, failed pipeline, rejected request)
//   2  input error (bad usage, unreadable file, unknown id)
//   3  transport error (coordinator unreachable or answering garbage)

#include <pthread.h>
#include <signal.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "sciflow/client.hpp"
#include "sciflow/coordinator.hpp"
#include "sciflow/crypto.hpp"
#include "sciflow/http_server.hpp"
#include "sciflow/pipeline_model.hpp"
#include "sciflow/runner.hpp"
#include "sciflow/wire.hpp"

namespace {

using namespace sciflow;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kDomainFailure = 1;
constexpr int kInputError = 2;
constexpr int kTransportFailure = 3;

std::optional<std::string> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream out;
  out << in.rdbuf();
  if (in.bad()) return std::nullopt;
  return out.str();
}

void print_diagnostics(const std::vector<Diagnostic>& diagnostics) {
  for (const auto& d : diagnostics) {
    std::cerr << "error " << d.code << " at " << to_string(d.location) << ": "
              << d.message << "\n";
  }
}

// Maps a coordinator-side error to the exit-code contract. `missing` is the
// code used when the thing asked for does not exist.
int exit_for(const Error& e, int missing = kInputError) {
  switch (e.code()) {
    case ErrorCode::kTransportError: return kTransportFailure;
    case ErrorCode::kNotFound:
    case ErrorCode::kUnknownJob: return missing;
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kConfigError: return kInputError;
    default: return kDomainFailure;
  }
}

int report_error(const std::exception& e) {
  if (const auto* parse = dynamic_cast<const PipelineParseError*>(&e)) {
    print_diagnostics(parse->diagnostics());
    return kDomainFailure;
  }
  if (const auto* invalid = dynamic_cast<const ValidationFailed*>(&e)) {
    std::cerr << invalid->report().to_text();
    return kDomainFailure;
  }
  std::cerr << "sciflow: " << e.what() << "\n";
  if (const auto* err = dynamic_cast<const Error*>(&e)) return exit_for(*err);
  return kDomainFailure;
}

// --- signals ----------------------------------------------------------------

// Blocks SIGINT/SIGTERM in every thread started afterwards so that only
// wait_for_signal sees them.
sigset_t block_shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

// Returns when a signal arrives or `done` becomes true.
void wait_for_signal(const sigset_t& set, const std::atomic<bool>& done) {
  const timespec tick{0, 200'000'000};
  while (!done.load()) {
    if (sigtimedwait(&set, nullptr, &tick) > 0) return;
  }
}

// --- server -----------------------------------------------------------------

struct ServerArgs {
  std::string listen = "127.0.0.1:8080";
  std::string data_dir;
  double lease_ttl_s = 60;
  std::size_t max_artifact_bytes = 64u << 20;
  int max_child_depth = 3;
  bool sync_writes = false;
};

int cmd_server(const ServerArgs& args) {
  const auto colon = args.listen.rfind(':');
  ServerOptions options;
  try {
    if (colon == std::string::npos) throw std::invalid_argument("no port");
    options.host = args.listen.substr(0, colon);
    options.port = std::stoi(args.listen.substr(colon + 1));
  } catch (const std::exception&) {
    std::cerr << "sciflow: --listen expects HOST:PORT, got '" << args.listen << "'\n";
    return kInputError;
  }
  CoordinatorConfig config;
  config.data_dir = args.data_dir;
  config.lease_ttl = std::chrono::milliseconds(static_cast<long long>(args.lease_ttl_s * 1000));
  config.max_artifact_bytes = args.max_artifact_bytes;
  config.max_child_depth = args.max_child_depth;
  config.sync_writes = args.sync_writes;

  const auto signals = block_shutdown_signals();
  try {
    Coordinator coordinator(config);
    CoordinatorServer server(coordinator, options);
    server.start();
    std::cout << "listening on " << server.url() << std::endl;
    std::atomic<bool> never{false};
    wait_for_signal(signals, never);
    server.stop();
    std::cerr << "coordinator stopped\n";
  } catch (const std::exception& e) {
    return report_error(e);
  }
  return kOk;
}

// --- runner -----------------------------------------------------------------

struct RunnerArgs {
  std::string coordinator;
  std::string token;
  std::string executor = "shell";
  int concurrency = 1;
  std::string workspace;
  std::vector<std::string> settings;
  double poll_interval_s = 1;
  std::string name;
  std::vector<std::string> tags;
  bool run_untagged = false;
};

int cmd_runner(const RunnerArgs& args) {
  const auto kind = executor_kind_from_string(args.executor);
  if (!kind) {
    std::cerr << "sciflow: unknown executor '" << args.executor << "'\n";
    return kInputError;
  }
  RunnerConfig config;
  config.coordinator_url = args.coordinator;
  config.executor_kind = *kind;
  config.concurrency = args.concurrency;
  config.workspace_root = args.workspace;
  config.poll_interval =
      std::chrono::milliseconds(static_cast<long long>(args.poll_interval_s * 1000));
  for (const auto& kv : args.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::cerr << "sciflow: --executor-setting expects K=V, got '" << kv << "'\n";
      return kInputError;
    }
    config.executor_settings[kv.substr(0, eq)] = kv.substr(eq + 1);
  }

  try {
    config.token = args.token;
    if (config.token.empty()) {
      if (args.name.empty()) {
        std::cerr << "sciflow: runner needs --token, or --name to register\n";
        return kInputError;
      }
      CoordinatorClient client(args.coordinator);
      const std::set<std::string> tags(args.tags.begin(), args.tags.end());
      const auto issued = client.register_runner(args.name, tags, *kind, args.run_untagged);
      config.token = issued.token;
      std::cerr << "registered runner " << issued.runner_id << "\n";
      std::cout << "token " << issued.token << std::endl;
    }
    config.validate();

    const auto signals = block_shutdown_signals();
    std::atomic<bool> done{false};
    std::stop_source stop;
    std::thread watcher([&] {
      wait_for_signal(signals, done);
      stop.request_stop();
    });
    RunnerAgent agent(config, std::make_shared<HttpRunnerLink>(config.coordinator_url, config.token));
    std::cerr << "runner polling " << config.coordinator_url << "\n";
    int code = kOk;
    try {
      agent.run(stop.get_token());
    } catch (const std::exception& e) {
      code = report_error(e);
    }
    done = true;
    watcher.join();
    std::cerr << "runner stopped after " << agent.leases_handled() << " job(s)\n";
    return code;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

// --- validate ---------------------------------------------------------------

int cmd_validate(const std::string& path, bool as_json) {
  const auto source = read_file(path);
  if (!source) {
    std::cerr << "sciflow: cannot read '" << path << "'\n";
    return kInputError;
  }
  ValidationReport report;
  try {
    report = validate_pipeline(parse_pipeline(*source));
  } catch (const PipelineParseError& e) {
    report.errors = e.diagnostics();
  } catch (const Error& e) {
    std::cerr << "sciflow: " << e.what() << "\n";
    return kDomainFailure;
  }
  if (as_json) {
    std::cout << report_to_json(report).dump(2) << "\n";
  } else {
    std::cout << report.to_text();
    if (report.ok()) std::cout << path << ": ok\n";
  }
  return report.ok() ? kOk : kDomainFailure;
}

// --- submit -----------------------------------------------------------------

int cmd_submit(const std::string& url, const std::string& repo, const std::string& commit,
               const std::string& path, bool as_json) {
  const auto source = read_file(path);
  if (!source) {
    std::cerr << "sciflow: cannot read '" << path << "'\n";
    return kInputError;
  }
  try {
    CoordinatorClient client(url);
    const auto reply = client.submit_pipeline_json(repo, commit, *source);
    if (as_json) {
      std::cout << reply.dump(2) << "\n";
    } else {
      std::cout << reply.at("pipeline_id").get<std::string>() << "\n";
    }
    return kOk;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

// --- status -----------------------------------------------------------------

std::string format_duration(const JobTimes& times, Timestamp now) {
  if (!times.started) return "-";
  const auto end = times.finished.value_or(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(end - *times.started);
  std::ostringstream out;
  out << std::fixed << std::setprecision(1) << static_cast<double>(ms.count()) / 1000.0 << "s";
  return out.str();
}

void print_table(const PipelineView& view) {
  std::size_t name_w = 4;
  std::size_t stage_w = 5;
  for (const auto& job : view.jobs) {
    name_w = std::max(name_w, job.name.size());
    stage_w = std::max(stage_w, job.stage.size());
  }
  const auto now = Clock::now();
  auto row = [&](std::string_view a, std::string_view b, std::string_view c,
                 std::string_view d) {
    std::cout << std::left << std::setw(static_cast<int>(name_w + 2)) << a
              << std::setw(static_cast<int>(stage_w + 2)) << b << std::setw(10) << c << d
              << "\n";
  };
  row("JOB", "STAGE", "STATUS", "DURATION");
  for (const auto& job : view.jobs) {
    row(job.name, job.stage, to_string(job.status), format_duration(job.times, now));
  }
  std::cout << "pipeline " << view.pipeline_id << ": " << to_string(view.status) << "\n";
  for (const auto& child : view.children) std::cout << "child pipeline " << child << "\n";
}

int cmd_status(const std::string& url, const std::string& id, bool watch,
               std::chrono::milliseconds interval, bool as_json) {
  try {
    CoordinatorClient client(url);
    while (true) {
      const auto payload = client.pipeline_json(id);
      const auto view = pipeline_view_from_json(payload);
      const bool terminal = view.status != PipelineStatus::kRunning;
      if (!watch || terminal) {
        if (as_json) {
          std::cout << payload.dump(2) << "\n";
        } else {
          print_table(view);
        }
        return view.status == PipelineStatus::kFailed ? kDomainFailure : kOk;
      }
      if (!as_json) {
        print_table(view);
        std::cout << std::endl;
      }
      std::this_thread::sleep_for(interval);
    }
  } catch (const Error& e) {
    std::cerr << "sciflow: " << e.what() << "\n";
    return exit_for(e);
  } catch (const std::exception& e) {
    std::cerr << "sciflow: " << e.what() << "\n";
    return kTransportFailure;
  }
}

// --- logs -------------------------------------------------------------------

int cmd_logs(const std::string& url, const std::string& id, const std::string& job,
             bool as_json) {
  try {
    CoordinatorClient client(url);
    const auto payload = client.job_log_json(id, job);
    if (as_json) {
      std::cout << payload.dump(2) << "\n";
    } else {
      std::cout << payload.at("log").get<std::string>();
    }
    return kOk;
  } catch (const Error& e) {
    std::cerr << "sciflow: " << e.what() << "\n";
    return exit_for(e);
  } catch (const std::exception& e) {
    std::cerr << "sciflow: " << e.what() << "\n";
    return kTransportFailure;
  }
}

// --- artifacts --------------------------------------------------------------

int cmd_artifacts(const std::string& url, const std::string& id, const std::string& download,
                  const std::string& output, bool as_json) {
  try {
    CoordinatorClient client(url);
    const auto payload = client.pipeline_json(id);
    const auto view = pipeline_view_from_json(payload);
    if (download.empty()) {
      if (as_json) {
        std::cout << payload.at("artifacts").dump(2) << "\n";
        return kOk;
      }
      for (const auto& a : view.artifacts) {
        std::cout << a.artifact_id << "  " << a.job << "  " << a.path << "  " << a.size
                  << "\n";
      }
      return kOk;
    }
    const bool listed = std::any_of(view.artifacts.begin(), view.artifacts.end(),
                                    [&](const ArtifactRecord& a) { return a.artifact_id == download; });
    if (!listed) {
      std::cerr << "sciflow: pipeline " << id << " has no artifact " << download << "\n";
      return kInputError;
    }
    const auto bytes = client.get_artifact(download);
    if (sha256_hex(bytes) != download) {
      std::cerr << "sciflow: artifact " << download << " failed its hash check\n";
      return kTransportFailure;
    }
    if (output.empty() || output == "-") {
      std::cout.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      return kOk;
    }
    std::ofstream out(output, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) {
      std::cerr << "sciflow: cannot write '" << output << "'\n";
      return kInputError;
    }
    std::cerr << "wrote " << bytes.size() << " bytes to " << output << "\n";
    return kOk;
  } catch (const Error& e) {
    std::cerr << "sciflow: " << e.what() << "\n";
    return exit_for(e);
  } catch (const std::exception& e) {
    std::cerr << "sciflow: " << e.what() << "\n";
    return kTransportFailure;
  }
}

// Options missing from the command line are taken from the config file,
// then from PREFIX<NAME> environment variables (dashes become underscores).
// CLI11 itself only reads config files for the top-level app.
void fill_from_config_and_env(CLI::App& sub, const std::string& config_path,
                              const std::string& env_prefix) {
  std::map<std::string, std::vector<std::string>> from_file;
  if (!config_path.empty()) {
    for (const auto& item : CLI::ConfigTOML().from_file(config_path)) {
      if (item.name == "++" || item.name == "--") continue;  // section markers
      if (!item.parents.empty()) {
        throw CLI::ConversionError("config sections are not supported: " + item.fullname());
      }
      from_file[item.name] = item.inputs;
    }
  }
  for (CLI::Option* opt : sub.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty()) continue;
    const auto& name = names.front();
    if (name == "help" || name == "help-all" || name == "config") continue;
    auto it = from_file.find(name);
    std::vector<std::string> values;
    if (it != from_file.end()) {
      values = std::move(it->second);
      from_file.erase(it);
    }
    if (opt->count() > 0) continue;
    if (values.empty()) {
      std::string env_name = env_prefix;
      for (char c : name) env_name.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(c)));
      if (const char* v = std::getenv(env_name.c_str())) values.emplace_back(v);
    }
    if (values.empty()) continue;
    for (const auto& v : values) opt->add_result(v);
    opt->run_callback();
  }
  for (const auto& [name, _] : from_file) {
    if (name != "config") throw CLI::ConversionError("unknown config key '" + name + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sciflow: pipelines for research code"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  ServerArgs server_args;
  auto* server = app.add_subcommand("server", "Run the coordinator");
  server->add_option("--listen", server_args.listen, "HOST:PORT; port 0 picks a free port")
      ->capture_default_str();
  server->add_option("--data-dir", server_args.data_dir,
                     "Event log and artifact directory; in-memory when unset");
  server->add_option("--lease-ttl", server_args.lease_ttl_s, "Seconds a lease lives without a heartbeat")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  server->add_option("--max-artifact-bytes", server_args.max_artifact_bytes)
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  server->add_option("--max-child-depth", server_args.max_child_depth)
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  server->add_flag("--sync-writes", server_args.sync_writes, "fsync every event");

  RunnerArgs runner_args;
  std::string runner_config;
  auto* runner = app.add_subcommand("runner", "Run a runner agent");
  runner->add_option("--config", runner_config, "TOML file with runner options");
  runner->add_option("--coordinator", runner_args.coordinator, "Coordinator base URL (required)");
  runner->add_option("--token", runner_args.token);
  runner->add_option("--executor", runner_args.executor, "shell, container, batch or kubernetes")
      ->capture_default_str();
  runner->add_option("--concurrency", runner_args.concurrency)
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  runner->add_option("--workspace", runner_args.workspace, "Workspace root (required)");
  runner->add_option("--executor-setting", runner_args.settings, "K=V, repeatable");
  runner->add_option("--poll-interval", runner_args.poll_interval_s, "Seconds")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  runner->add_option("--name", runner_args.name, "Register under this name when no token is given");
  runner->add_option("--tag", runner_args.tags, "Tag for registration, repeatable");
  runner->add_flag("--run-untagged", runner_args.run_untagged);
  runner->footer(
      "Every option may also come from the --config file (key = option name without\n"
      "dashes) or from RUNNER_<NAME> in the environment, e.g. RUNNER_POLL_INTERVAL.\n"
      "Flags win over the file, the file wins over the environment.");

  std::string file;
  bool as_json = false;
  auto* validate = app.add_subcommand("validate", "Check a pipeline definition offline");
  validate->add_option("file", file)->required();
  validate->add_flag("--json", as_json, "Print the report as JSON");

  std::string url;
  auto add_coordinator = [&](CLI::App* sub) {
    sub->add_option("--coordinator", url, "Coordinator base URL")
        ->envname("SCIFLOW_COORDINATOR")
        ->required();
    sub->add_flag("--json", as_json, "Print the wire payload");
  };

  std::string repo;
  std::string commit;
  auto* submit = app.add_subcommand("submit", "Submit a pipeline");
  add_coordinator(submit);
  submit->add_option("--repo", repo, "Repository URL")->required();
  submit->add_option("--commit", commit, "Commit to build")->required();
  submit->add_option("file", file)->required();

  std::string id;
  bool watch = false;
  int watch_ms = 2000;
  auto* status = app.add_subcommand("status", "Show a pipeline");
  add_coordinator(status);
  status->add_option("id", id)->required();
  status->add_flag("--watch", watch, "Repoll until the pipeline finishes");
  status->add_option("--watch-interval-ms", watch_ms)->group("")->check(CLI::PositiveNumber);

  std::string job;
  auto* logs = app.add_subcommand("logs", "Print a job's log");
  add_coordinator(logs);
  logs->add_option("id", id)->required();
  logs->add_option("job", job)->required();

  std::string download;
  std::string output;
  auto* artifacts = app.add_subcommand("artifacts", "List or fetch a pipeline's artifacts");
  add_coordinator(artifacts);
  artifacts->add_option("id", id)->required();
  artifacts->add_option("--download", download, "Artifact id to fetch");
  artifacts->add_option("--output", output, "Destination file; stdout when unset")
      ->needs(artifacts->get_option("--download"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n";
    std::cerr << app.help();
    return kInputError;
  }

  if (*server) return cmd_server(server_args);
  if (*runner) {
    try {
      fill_from_config_and_env(*runner, runner_config, "RUNNER_");
    } catch (const CLI::Error& e) {
      std::cerr << "sciflow: " << e.what() << "\n";
      return kInputError;
    }
    for (const auto* name : {"--coordinator", "--workspace"}) {
      if (runner->get_option(name)->count() == 0) {
        std::cerr << "sciflow: runner needs " << name << "\n\n" << runner->help();
        return kInputError;
      }
    }
    return cmd_runner(runner_args);
  }
  if (*validate) return cmd_validate(file, as_json);
  if (*submit) return cmd_submit(url, repo, commit, file, as_json);
  if (*status) {
    return cmd_status(url, id, watch, std::chrono::milliseconds(watch_ms), as_json);
  }
  if (*logs) return cmd_logs(url, id, job, as_json);
  if (*artifacts) return cmd_artifacts(url, id, download, output, as_json);
  return kInputError;
}
