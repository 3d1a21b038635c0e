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

#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sciflow {

/// Exit code reported when the program could not be started.
inline constexpr int kSpawnFailureExitCode = 127;

struct ProcessSpec {
  std::vector<std::string> argv;
  std::filesystem::path cwd;  // empty: inherit
  std::map<std::string, std::string> env;  // overlaid on the current environment
  std::optional<std::string> stdin_data;
  std::optional<std::chrono::milliseconds> timeout;
  /// Called with each chunk of combined stdout/stderr as it arrives.
  std::function<void(std::string_view)> on_output;
};

struct ProcessResult {
  int exit_code = 0;
  std::string output;  // stdout and stderr, interleaved
  bool timed_out = false;
  bool spawn_failed = false;
  std::string diagnostic;
  std::chrono::steady_clock::duration elapsed{};
};

/// Runs argv[0] (resolved against PATH) in its own process group. On timeout
/// the whole group is killed. Signals map to 128 + signo.
ProcessResult run_process(const ProcessSpec& spec);

/// PATH lookup; absolute or slash-containing names are checked directly.
std::optional<std::filesystem::path> find_program(
    std::string_view name, std::optional<std::string_view> path_env = std::nullopt);

/// Single-quotes a string for POSIX sh.
std::string shell_quote(std::string_view text);

}  // namespace sciflow
