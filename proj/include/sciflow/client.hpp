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

// Client side of the coordinator's HTTP protocol. Connection failures are
// kTransportError; error bodies from the server are rethrown as the same
// exception types the coordinator raised.

#pragma once

#include <chrono>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "sciflow/coordinator.hpp"
#include "sciflow/runner.hpp"

namespace httplib {
class Client;
}

namespace sciflow {

class CoordinatorClient {
 public:
  explicit CoordinatorClient(const std::string& base_url,
                             std::chrono::milliseconds timeout = std::chrono::seconds(30));
  ~CoordinatorClient();

  /// Raw response bodies, for callers that print the wire payload.
  nlohmann::json submit_pipeline_json(const std::string& repo_url, const std::string& commit,
                                      const std::string& definition);
  nlohmann::json pipeline_json(const std::string& pipeline_id);
  nlohmann::json job_log_json(const std::string& pipeline_id, const std::string& job);

  std::string submit_pipeline(const std::string& repo_url, const std::string& commit,
                              const std::string& definition);
  IssuedRunner register_runner(const std::string& name, const std::set<std::string>& tags,
                               ExecutorKind kind, bool run_untagged);
  PollResult poll_job(const std::string& token);
  JobStatus update_job(const std::string& token, const std::string& lease_id, JobStatus to,
                       std::string_view log_chunk = {});
  std::string upload_artifact(const std::string& token, const std::string& lease_id,
                              const std::string& path, std::string_view payload);
  std::string trigger_child_pipeline(const std::string& token, const std::string& lease_id,
                                     const std::string& artifact_id);
  PipelineView get_pipeline(const std::string& pipeline_id);
  std::string job_log(const std::string& pipeline_id, const std::string& job);
  std::string get_artifact(const std::string& artifact_id);

 private:
  std::string post(const std::string& path, const std::string& body,
                   const std::string& content_type, const std::string& token);
  std::string get(const std::string& path);

  std::string base_url_;
  std::unique_ptr<httplib::Client> http_;
};

/// RunnerLink over HTTP.
class HttpRunnerLink final : public RunnerLink {
 public:
  HttpRunnerLink(const std::string& base_url, std::string token);

  PollResult poll() override { return client_.poll_job(token_); }
  JobStatus update(const std::string& lease_id, JobStatus to,
                   std::string_view log_chunk) override {
    return client_.update_job(token_, lease_id, to, log_chunk);
  }
  std::string upload(const std::string& lease_id, const std::string& path,
                     std::string_view payload) override {
    return client_.upload_artifact(token_, lease_id, path, payload);
  }
  std::string trigger(const std::string& lease_id, const std::string& artifact_id) override {
    return client_.trigger_child_pipeline(token_, lease_id, artifact_id);
  }

 private:
  CoordinatorClient client_;
  std::string token_;
};

}  // namespace sciflow
