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

// Stand-in container runtime for hosts without one. Understands the subset
// of docker (`run`) and singularity/apptainer (`exec`) command lines that the
// executors generate, then runs the command directly on the host: bind
// mounts map the working directory back to the host path, environment flags
// become real environment variables, and SCIFLOW_CONTAINER_IMAGE carries the
// image name. Images named "missing/..." fail the way a failed pull does.
// SCIFLOW_MOCK_CONTAINER_LEDGER, when set, receives one JSON line per run.

#include <sys/file.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

namespace {

[[noreturn]] void usage(const std::string& message) {
  std::cerr << "mock-container: " << message << "\n";
  std::exit(125);
}

struct Invocation {
  std::string image;
  std::string workdir;
  std::vector<std::pair<std::string, std::string>> binds;  // host, container
  std::vector<std::string> env;
  std::vector<std::string> command;
};

Invocation parse(const std::vector<std::string>& args) {
  if (args.empty()) usage("missing subcommand");
  const bool docker = args[0] == "run";
  if (!docker && args[0] != "exec") usage("unsupported subcommand '" + args[0] + "'");
  Invocation inv;
  std::size_t i = 1;
  auto value = [&](const std::string& flag) {
    if (i + 1 >= args.size()) usage(flag + " needs a value");
    return args[++i];
  };
  for (; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a.empty() || a[0] != '-') break;
    if (a == "--rm" || a == "--cleanenv" || a == "-i" || a == "-t") continue;
    if (a == "-v" || a == "--volume" || a == "--bind" || a == "-B") {
      auto spec = value(a);
      auto colon = spec.find(':');
      if (colon == std::string::npos) usage("bad bind '" + spec + "'");
      inv.binds.emplace_back(spec.substr(0, colon), spec.substr(colon + 1));
    } else if (a == "-w" || a == "--workdir" || a == "--pwd") {
      inv.workdir = value(a);
    } else if (a == "-e" || a == "--env") {
      inv.env.push_back(value(a));
    } else {
      usage("unsupported flag '" + a + "'");
    }
  }
  if (i >= args.size()) usage("missing image");
  inv.image = args[i++];
  if (inv.image.starts_with("docker://")) inv.image = inv.image.substr(9);
  inv.command.assign(args.begin() + static_cast<std::ptrdiff_t>(i), args.end());
  if (inv.command.empty()) usage("missing command");
  return inv;
}

std::string host_path(const Invocation& inv, const std::string& path) {
  for (const auto& [host, inside] : inv.binds) {
    if (path == inside) return host;
    if (path.starts_with(inside + "/")) return host + path.substr(inside.size());
  }
  return path;
}

void record(const Invocation& inv, const std::vector<std::string>& argv,
            const std::string& cwd) {
  const char* ledger = std::getenv("SCIFLOW_MOCK_CONTAINER_LEDGER");
  if (ledger == nullptr || *ledger == '\0') return;
  const std::string line =
      nlohmann::json{{"image", inv.image}, {"argv", argv}, {"cwd", cwd}, {"env", inv.env}}
          .dump() +
      "\n";
  FILE* f = std::fopen(ledger, "a");
  if (f == nullptr) return;
  ::flock(::fileno(f), LOCK_EX);
  std::fwrite(line.data(), 1, line.size(), f);
  std::fflush(f);
  ::flock(::fileno(f), LOCK_UN);
  std::fclose(f);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> all(argv, argv + argc);
  const auto inv = parse({all.begin() + 1, all.end()});
  if (inv.image.starts_with("missing/")) {
    std::cerr << "Error response from daemon: pull access denied for " << inv.image
              << ", repository does not exist\n";
    return 125;
  }
  const auto cwd = inv.workdir.empty() ? std::string() : host_path(inv, inv.workdir);
  record(inv, all, cwd);

  if (!cwd.empty() && ::chdir(cwd.c_str()) != 0) {
    std::cerr << "mock-container: cannot enter " << cwd << ": " << std::strerror(errno) << "\n";
    return 125;
  }
  for (const auto& kv : inv.env) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    ::setenv(kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str(), 1);
  }
  ::setenv("SCIFLOW_CONTAINER_IMAGE", inv.image.c_str(), 1);

  std::vector<char*> cargv;
  for (const auto& s : inv.command) cargv.push_back(const_cast<char*>(s.c_str()));
  cargv.push_back(nullptr);
  ::execvp(cargv[0], cargv.data());
  std::cerr << "mock-container: cannot execute " << inv.command[0] << ": "
            << std::strerror(errno) << "\n";
  return 127;
}
