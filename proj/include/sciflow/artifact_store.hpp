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

// Content-addressed payload storage. An artifact id is the SHA-256 of its
// payload, so identical uploads share one stored copy.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace sciflow {

struct ArtifactRecord {
  std::string artifact_id;
  std::string pipeline_id;
  std::string job;
  std::string path;
  std::uint64_t size = 0;

  bool operator==(const ArtifactRecord&) const = default;
};

class ArtifactStore {
 public:
  /// An empty directory keeps payloads in memory.
  explicit ArtifactStore(std::filesystem::path dir = {});

  /// Stores the payload unless already present; returns its id.
  std::string put(std::string_view payload);
  std::optional<std::string> get(const std::string& artifact_id) const;
  bool contains(const std::string& artifact_id) const;
  /// Number of distinct payloads held.
  std::size_t size() const;

 private:
  std::filesystem::path file_for(const std::string& artifact_id) const;

  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> memory_;
};

}  // namespace sciflow
