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

// Stand-in for `sbatch --wait` on machines without a scheduler.
//
// Honors -c/--cpus-per-task, --mem and -t/--time (the time limit is enforced
// as a wall-clock kill), reads the batch script from stdin, runs it with
// /bin/sh and exits with the script's exit code. When
// SCIFLOW_MOCK_SBATCH_LEDGER names a file, one JSON line per submission is
// appended to it with the exact argv received.

#include <sys/file.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "sciflow/process.hpp"

namespace {

struct Request {
  std::optional<int> cpus;
  std::optional<std::string> memory;
  std::optional<long long> time_limit_seconds;
  bool wait = false;
};

[[noreturn]] void reject(const std::string& message) {
  std::cerr << "sbatch: error: " << message << "\n";
  std::exit(1);
}

// Accepts minutes, minutes:seconds, hours:minutes:seconds, days-hours,
// days-hours:minutes and days-hours:minutes:seconds.
std::optional<long long> parse_time_limit(const std::string& text) {
  static const std::regex kForm(R"(^(?:(\d+)-)?(\d+)(?::(\d+))?(?::(\d+))?$)");
  std::smatch m;
  if (!std::regex_match(text, m, kForm)) return std::nullopt;
  auto num = [&](int i) { return m[i].matched ? std::stoll(m[i].str()) : 0LL; };
  const bool has_days = m[1].matched;
  const int fields = 1 + (m[3].matched ? 1 : 0) + (m[4].matched ? 1 : 0);
  const long long days = num(1);
  if (has_days) {
    // days-hours[:minutes[:seconds]]
    return days * 86400 + num(2) * 3600 + num(3) * 60 + num(4);
  }
  switch (fields) {
    case 1: return num(2) * 60;
    case 2: return num(2) * 60 + num(3);
    default: return num(2) * 3600 + num(3) * 60 + num(4);
  }
}

Request parse_args(const std::vector<std::string>& args) {
  Request req;
  static const std::regex kMemory(R"(^\d+[KMGT]?$)");
  static const std::regex kCount(R"(^[1-9]\d*$)");
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string flag = args[i];
    std::optional<std::string> inline_value;
    if (flag.starts_with("--") && flag.find('=') != std::string::npos) {
      inline_value = flag.substr(flag.find('=') + 1);
      flag = flag.substr(0, flag.find('='));
    }
    auto value = [&]() -> std::string {
      if (inline_value) return *inline_value;
      if (i + 1 >= args.size()) reject("option '" + flag + "' requires an argument");
      return args[++i];
    };
    if (flag == "--wait" || flag == "-W") {
      req.wait = true;
    } else if (flag == "-c" || flag == "--cpus-per-task") {
      auto v = value();
      if (!std::regex_match(v, kCount)) reject("invalid cpu count '" + v + "'");
      req.cpus = std::stoi(v);
    } else if (flag == "--mem") {
      auto v = value();
      if (!std::regex_match(v, kMemory)) reject("invalid memory specification '" + v + "'");
      req.memory = v;
    } else if (flag == "-t" || flag == "--time") {
      auto v = value();
      auto limit = parse_time_limit(v);
      if (!limit) reject("invalid time limit specification '" + v + "'");
      req.time_limit_seconds = *limit;
    } else {
      reject("unrecognized option '" + args[i] + "'");
    }
  }
  return req;
}

void record(const std::vector<std::string>& argv, const Request& req) {
  const char* ledger = std::getenv("SCIFLOW_MOCK_SBATCH_LEDGER");
  if (ledger == nullptr || *ledger == '\0') return;
  nlohmann::json entry = {{"argv", argv}, {"wait", req.wait}};
  if (req.cpus) entry["cpus"] = *req.cpus;
  if (req.memory) entry["mem"] = *req.memory;
  if (req.time_limit_seconds) entry["time_limit_seconds"] = *req.time_limit_seconds;
  const std::string line = entry.dump() + "\n";
  FILE* f = std::fopen(ledger, "a");
  if (f == nullptr) reject(std::string("cannot open ledger ") + ledger);
  ::flock(::fileno(f), LOCK_EX);
  std::fwrite(line.data(), 1, line.size(), f);
  std::fflush(f);
  ::flock(::fileno(f), LOCK_UN);
  std::fclose(f);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> all(argv, argv + argc);
  const auto req = parse_args({all.begin() + 1, all.end()});
  record(all, req);

  std::string script{std::istreambuf_iterator<char>(std::cin),
                     std::istreambuf_iterator<char>()};
  if (script.empty()) reject("batch script is empty");

  const auto job_id = std::to_string(::getpid());
  const auto script_path =
      std::filesystem::temp_directory_path() / ("mock-sbatch-" + job_id + ".sh");
  {
    std::ofstream out(script_path);
    out << script;
  }
  std::cout << "Submitted batch job " << job_id << std::endl;

  sciflow::ProcessSpec spec;
  spec.argv = {"/bin/sh", script_path.string()};
  spec.env = {{"SLURM_JOB_ID", job_id}};
  if (req.cpus) spec.env["SLURM_CPUS_PER_TASK"] = std::to_string(*req.cpus);
  if (req.time_limit_seconds) {
    spec.timeout = std::chrono::seconds(*req.time_limit_seconds);
  }
  spec.on_output = [](std::string_view chunk) {
    std::cout.write(chunk.data(), static_cast<std::streamsize>(chunk.size()));
    std::cout.flush();
  };
  const auto result = sciflow::run_process(spec);
  std::filesystem::remove(script_path);

  if (result.timed_out) {
    std::cerr << "slurmstepd: error: *** JOB " << job_id
              << " CANCELLED DUE TO TIME LIMIT ***" << std::endl;
  }
  return result.exit_code;
}
