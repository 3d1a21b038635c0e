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

#include "sciflow/process.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstring>
#include <mutex>
#include <system_error>
#include <utility>

extern char** environ;

namespace sciflow {

namespace {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Fd& operator=(Fd&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

struct Pipe {
  Fd read;
  Fd write;
};

Pipe make_pipe() {
  std::array<int, 2> fds{};
  if (::pipe2(fds.data(), O_CLOEXEC) != 0) {
    throw std::system_error(errno, std::generic_category(), "pipe2");
  }
  return {Fd(fds[0]), Fd(fds[1])};
}

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

int decode_wait_status(int status) {
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return -1;
}

}  // namespace

std::optional<std::filesystem::path> find_program(
    std::string_view name, std::optional<std::string_view> path_env) {
  namespace fs = std::filesystem;
  if (name.empty()) return std::nullopt;
  auto executable = [](const fs::path& p) {
    return ::access(p.c_str(), X_OK) == 0 && !fs::is_directory(p);
  };
  if (name.find('/') != std::string_view::npos) {
    fs::path p(name);
    if (executable(p)) return p;
    return std::nullopt;
  }
  std::string path_value;
  if (path_env) {
    path_value = std::string(*path_env);
  } else if (const char* env = std::getenv("PATH")) {
    path_value = env;
  } else {
    path_value = "/usr/local/bin:/usr/bin:/bin";
  }
  std::string_view rest = path_value;
  while (true) {
    const auto sep = rest.find(':');
    auto dir = rest.substr(0, sep);
    fs::path candidate = fs::path(dir.empty() ? "." : std::string(dir)) / name;
    if (executable(candidate)) return candidate;
    if (sep == std::string_view::npos) break;
    rest.remove_prefix(sep + 1);
  }
  return std::nullopt;
}

std::string shell_quote(std::string_view text) {
  std::string out = "'";
  for (char c : text) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out.push_back(c);
    }
  }
  out += "'";
  return out;
}

ProcessResult run_process(const ProcessSpec& spec) {
  ignore_sigpipe();
  ProcessResult result;
  const auto started = std::chrono::steady_clock::now();

  auto fail_spawn = [&](std::string message) {
    result.spawn_failed = true;
    result.exit_code = kSpawnFailureExitCode;
    result.diagnostic = std::move(message);
    result.output = result.diagnostic + "\n";
    if (spec.on_output) spec.on_output(result.output);
    result.elapsed = std::chrono::steady_clock::now() - started;
    return result;
  };

  if (spec.argv.empty()) return fail_spawn("empty command line");

  // Everything the child needs is prepared before fork.
  std::map<std::string, std::string> env;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    std::string_view entry(*e);
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    env.emplace(std::string(entry.substr(0, eq)), std::string(entry.substr(eq + 1)));
  }
  for (const auto& [key, value] : spec.env) env.insert_or_assign(key, value);

  std::optional<std::string_view> path_env;
  if (auto it = env.find("PATH"); it != env.end()) path_env = it->second;
  const auto program = find_program(spec.argv.front(), path_env);
  if (!program) return fail_spawn("command not found: " + spec.argv.front());

  std::vector<std::string> env_strings;
  env_strings.reserve(env.size());
  for (const auto& [key, value] : env) env_strings.push_back(key + "=" + value);
  std::vector<char*> envp;
  for (auto& s : env_strings) envp.push_back(s.data());
  envp.push_back(nullptr);

  std::vector<std::string> argv_strings = spec.argv;
  std::vector<char*> argv;
  for (auto& s : argv_strings) argv.push_back(s.data());
  argv.push_back(nullptr);
  const std::string program_path = program->string();
  const std::string cwd = spec.cwd.string();

  Pipe out = make_pipe();
  Pipe err = make_pipe();
  Pipe in;
  const bool feed_stdin = spec.stdin_data.has_value();
  if (feed_stdin) in = make_pipe();

  const pid_t pid = ::fork();
  if (pid < 0) return fail_spawn(std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    ::setpgid(0, 0);
    if (feed_stdin) {
      ::dup2(in.read.get(), STDIN_FILENO);
    } else {
      int devnull = ::open("/dev/null", O_RDONLY);
      if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
    }
    ::dup2(out.write.get(), STDOUT_FILENO);
    ::dup2(out.write.get(), STDERR_FILENO);
    if (!cwd.empty() && ::chdir(cwd.c_str()) != 0) {
      int code = errno;
      [[maybe_unused]] auto n = ::write(err.write.get(), &code, sizeof(code));
      ::_exit(kSpawnFailureExitCode);
    }
    ::execve(program_path.c_str(), argv.data(), envp.data());
    int code = errno;
    [[maybe_unused]] auto n = ::write(err.write.get(), &code, sizeof(code));
    ::_exit(kSpawnFailureExitCode);
  }

  ::setpgid(pid, pid);
  out.write.reset();
  err.write.reset();
  in.read.reset();

  int child_errno = 0;
  ssize_t got = 0;
  do {
    got = ::read(err.read.get(), &child_errno, sizeof(child_errno));
  } while (got < 0 && errno == EINTR);
  if (got == static_cast<ssize_t>(sizeof(child_errno))) {
    int status = 0;
    ::waitpid(pid, &status, 0);
    return fail_spawn("cannot start " + spec.argv.front() +
                      (cwd.empty() ? "" : " in " + cwd) + ": " +
                      std::strerror(child_errno));
  }

  ::fcntl(out.read.get(), F_SETFL, O_NONBLOCK);
  std::string_view pending_input;
  if (feed_stdin) {
    ::fcntl(in.write.get(), F_SETFL, O_NONBLOCK);
    pending_input = *spec.stdin_data;
    if (pending_input.empty()) in.write.reset();
  }

  const auto deadline =
      spec.timeout ? std::optional(started + *spec.timeout) : std::nullopt;
  bool exited = false;
  int wait_status = 0;
  std::array<char, 8192> buffer{};

  auto drain = [&] {
    while (true) {
      const ssize_t n = ::read(out.read.get(), buffer.data(), buffer.size());
      if (n > 0) {
        std::string_view chunk(buffer.data(), static_cast<std::size_t>(n));
        result.output.append(chunk);
        if (spec.on_output) spec.on_output(chunk);
        continue;
      }
      if (n < 0 && errno == EINTR) continue;
      return n == 0;  // true on EOF
    }
  };

  bool eof = false;
  while (!exited) {
    std::array<pollfd, 2> fds{};
    nfds_t count = 0;
    int out_slot = -1;
    int in_slot = -1;
    if (!eof) {
      out_slot = static_cast<int>(count);
      fds[count++] = {out.read.get(), POLLIN, 0};
    }
    if (in.write) {
      in_slot = static_cast<int>(count);
      fds[count++] = {in.write.get(), POLLOUT, 0};
    }
    int wait_ms = 50;
    if (deadline) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          *deadline - std::chrono::steady_clock::now());
      wait_ms = static_cast<int>(std::clamp<long long>(left.count(), 0, 50));
    }
    const int ready = ::poll(fds.data(), count, wait_ms);
    if (ready < 0 && errno != EINTR) break;

    if (out_slot >= 0 && (fds[out_slot].revents & (POLLIN | POLLHUP | POLLERR))) {
      eof = drain();
    }
    if (in_slot >= 0 && (fds[in_slot].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t n =
          ::write(in.write.get(), pending_input.data(), pending_input.size());
      if (n > 0) pending_input.remove_prefix(static_cast<std::size_t>(n));
      if ((n < 0 && errno != EAGAIN && errno != EINTR) || pending_input.empty()) {
        in.write.reset();
      }
    }

    if (deadline && !result.timed_out && std::chrono::steady_clock::now() >= *deadline) {
      result.timed_out = true;
      ::kill(-pid, SIGKILL);
    }
    if (::waitpid(pid, &wait_status, WNOHANG) == pid) {
      exited = true;
      // Background grandchildren may still hold the pipe open; take what is
      // buffered and stop.
      if (!eof) drain();
    }
  }
  in.write.reset();
  if (result.timed_out) ::kill(-pid, SIGKILL);
  result.exit_code = decode_wait_status(wait_status);
  result.elapsed = std::chrono::steady_clock::now() - started;
  return result;
}

}  // namespace sciflow
