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

#include "sciflow/artifact_store.hpp"

#include <fstream>
#include <sstream>

#include "sciflow/crypto.hpp"
#include "sciflow/error.hpp"

namespace sciflow {

ArtifactStore::ArtifactStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) std::filesystem::create_directories(dir_);
}

std::filesystem::path ArtifactStore::file_for(const std::string& artifact_id) const {
  return dir_ / artifact_id.substr(0, 2) / artifact_id;
}

std::string ArtifactStore::put(std::string_view payload) {
  auto id = sha256_hex(payload);
  std::lock_guard lock(mu_);
  if (dir_.empty()) {
    memory_.try_emplace(id, payload);
    return id;
  }
  const auto target = file_for(id);
  if (std::filesystem::exists(target)) return id;
  std::filesystem::create_directories(target.parent_path());
  const auto tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out.flush()) throw Error(ErrorCode::kIoError, "cannot write " + tmp);
  }
  std::filesystem::rename(tmp, target);
  return id;
}

std::optional<std::string> ArtifactStore::get(const std::string& artifact_id) const {
  std::lock_guard lock(mu_);
  if (dir_.empty()) {
    auto it = memory_.find(artifact_id);
    if (it == memory_.end()) return std::nullopt;
    return it->second;
  }
  if (artifact_id.size() != 64 ||
      artifact_id.find_first_not_of("0123456789abcdef") != std::string::npos) {
    return std::nullopt;
  }
  std::ifstream in(file_for(artifact_id), std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool ArtifactStore::contains(const std::string& artifact_id) const {
  if (dir_.empty()) {
    std::lock_guard lock(mu_);
    return memory_.count(artifact_id) > 0;
  }
  return get(artifact_id).has_value();
}

std::size_t ArtifactStore::size() const {
  std::lock_guard lock(mu_);
  if (dir_.empty()) return memory_.size();
  std::size_t n = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir_)) {
    if (entry.is_regular_file() && entry.path().extension() != ".tmp") ++n;
  }
  return n;
}

}  // namespace sciflow
