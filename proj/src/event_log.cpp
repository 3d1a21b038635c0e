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

#include "sciflow/event_log.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sciflow/error.hpp"

namespace sciflow {

namespace {

[[noreturn]] void io_fail(const std::string& what) {
  throw Error(ErrorCode::kIoError, what + ": " + std::strerror(errno));
}

}  // namespace

EventLog::EventLog(std::filesystem::path path, bool sync_writes)
    : path_(std::move(path)), sync_(sync_writes) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::string content;
  {
    std::ifstream in(path_, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    content = buf.str();
  }

  std::size_t pos = 0;
  std::size_t good_end = 0;
  int line_no = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const auto line = content.substr(pos, complete ? nl - pos : std::string::npos);
    ++line_no;
    auto event = nlohmann::json::parse(line, nullptr, false);
    if (event.is_discarded() || !event.is_object()) {
      if (!complete) break;  // torn tail
      throw Error(ErrorCode::kIoError, path_.string() + ": corrupt event on line " +
                                           std::to_string(line_no));
    }
    recovered_.push_back(std::move(event));
    pos = complete ? nl + 1 : content.size();
    good_end = complete ? pos : content.size();
  }

  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) io_fail("open " + path_.string());
  if (good_end < content.size()) {
    if (::ftruncate(fd_, static_cast<off_t>(good_end)) != 0) io_fail("truncate");
  } else if (!content.empty() && content.back() != '\n') {
    // A complete final event that lost only its newline.
    if (::write(fd_, "\n", 1) != 1) io_fail("write");
  }
}

EventLog::~EventLog() {
  if (fd_ >= 0) ::close(fd_);
}

void EventLog::append(const nlohmann::json& event) {
  const auto line = event.dump() + "\n";
  std::lock_guard lock(mu_);
  std::size_t written = 0;
  while (written < line.size()) {
    const auto n = ::write(fd_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail("append to " + path_.string());
    }
    written += static_cast<std::size_t>(n);
  }
  if (sync_ && ::fdatasync(fd_) != 0) io_fail("fdatasync");
}

}  // namespace sciflow
