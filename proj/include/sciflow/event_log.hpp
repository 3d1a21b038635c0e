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

// Append-only JSON-lines log. One event is one line written by a single
// write(2), so a killed process leaves at most one torn line at the end;
// that line is dropped on open.

#pragma once

#include <filesystem>
#include <mutex>
#include <vector>

#include <nlohmann/json.hpp>

namespace sciflow {

class EventLog {
 public:
  /// Opens (creating if needed) and reads back every complete event.
  /// A malformed line anywhere but at the end is kIoError.
  EventLog(std::filesystem::path path, bool sync_writes);
  ~EventLog();
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  const std::vector<nlohmann::json>& recovered() const noexcept { return recovered_; }
  void release_recovered() { recovered_.clear(); recovered_.shrink_to_fit(); }

  void append(const nlohmann::json& event);

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  bool sync_;
  int fd_ = -1;
  std::mutex mu_;
  std::vector<nlohmann::json> recovered_;
};

}  // namespace sciflow
