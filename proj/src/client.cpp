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

#include "sciflow/client.hpp"

#include "httplib.h"
#include "sciflow/crypto.hpp"
#include "sciflow/wire.hpp"

namespace sciflow {

using nlohmann::json;

namespace {

std::string encode_segment(const std::string& s) {
  return httplib::detail::encode_query_param(s);
}

}  // namespace

CoordinatorClient::CoordinatorClient(const std::string& base_url,
                                     std::chrono::milliseconds timeout)
    : base_url_(base_url) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
  if (base_url_.rfind("http://", 0) != 0) {
    throw Error(ErrorCode::kTransportError,
                "unsupported coordinator url '" + base_url + "' (expected http://host:port)");
  }
  http_ = std::make_unique<httplib::Client>(base_url_);
  if (!http_->is_valid()) {
    throw Error(ErrorCode::kTransportError, "invalid coordinator url '" + base_url + "'");
  }
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  http_->set_url_encode(false);  // segments are encoded by the caller
  http_->set_connection_timeout(secs.count(), usecs.count());
  http_->set_read_timeout(secs.count(), usecs.count());
  http_->set_write_timeout(secs.count(), usecs.count());
}

CoordinatorClient::~CoordinatorClient() = default;

namespace {

std::string check(const httplib::Result& res, const std::string& what) {
  if (!res) {
    throw Error(ErrorCode::kTransportError, what + ": " + httplib::to_string(res.error()));
  }
  if (res->status >= 200 && res->status < 300) return res->body;
  auto body = json::parse(res->body, nullptr, false);
  if (body.is_object() && body.contains("error")) throw_error_from_json(body);
  if (res->status == 413) {
    throw Error(ErrorCode::kPayloadTooLarge, what + ": request body too large");
  }
  throw Error(ErrorCode::kTransportError,
              what + ": unexpected HTTP status " + std::to_string(res->status));
}

json parse_body(const std::string& body) {
  auto j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kTransportError, "malformed response body");
  return j;
}

}  // namespace

std::string CoordinatorClient::post(const std::string& path, const std::string& body,
                                    const std::string& content_type, const std::string& token) {
  httplib::Headers headers;
  if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
  return check(http_->Post(path, headers, body, content_type), "POST " + path);
}

std::string CoordinatorClient::get(const std::string& path) {
  return check(http_->Get(path), "GET " + path);
}

json CoordinatorClient::submit_pipeline_json(const std::string& repo_url,
                                             const std::string& commit,
                                             const std::string& definition) {
  const json body = {{"repo_url", repo_url}, {"commit", commit}, {"definition", definition}};
  return parse_body(post("/pipelines", body.dump(), "application/json", {}));
}

std::string CoordinatorClient::submit_pipeline(const std::string& repo_url,
                                               const std::string& commit,
                                               const std::string& definition) {
  return submit_pipeline_json(repo_url, commit, definition).at("pipeline_id");
}

IssuedRunner CoordinatorClient::register_runner(const std::string& name,
                                                const std::set<std::string>& tags,
                                                ExecutorKind kind, bool run_untagged) {
  const json body = {{"name", name},
                     {"tags", tags},
                     {"executor", std::string(to_string(kind))},
                     {"run_untagged", run_untagged}};
  const auto out = parse_body(post("/runners", body.dump(), "application/json", {}));
  return {out.at("runner_id"), out.at("token")};
}

PollResult CoordinatorClient::poll_job(const std::string& token) {
  const auto out = parse_body(post("/runners/poll", "{}", "application/json", token));
  PollResult result;
  if (!out.at("lease").is_null()) result.lease = lease_from_json(out["lease"]);
  result.retry_after = std::chrono::milliseconds(out.value("retry_after_ms", 0));
  return result;
}

JobStatus CoordinatorClient::update_job(const std::string& token, const std::string& lease_id,
                                        JobStatus to, std::string_view log_chunk) {
  const json body = {{"status", std::string(to_string(to))},
                     {"log", base64_encode(log_chunk)}};
  const auto out = parse_body(post("/leases/" + encode_segment(lease_id) + "/status",
                                   body.dump(), "application/json", token));
  return job_status_from_string(out.at("job_status").get<std::string>()).value_or(to);
}

std::string CoordinatorClient::upload_artifact(const std::string& token,
                                               const std::string& lease_id,
                                               const std::string& path,
                                               std::string_view payload) {
  const auto out = parse_body(post("/leases/" + encode_segment(lease_id) +
                                       "/artifacts?path=" + encode_segment(path),
                                   std::string(payload), "application/octet-stream", token));
  return out.at("artifact_id");
}

std::string CoordinatorClient::trigger_child_pipeline(const std::string& token,
                                                      const std::string& lease_id,
                                                      const std::string& artifact_id) {
  const json body = {{"artifact_id", artifact_id}};
  const auto out = parse_body(post("/leases/" + encode_segment(lease_id) + "/trigger",
                                   body.dump(), "application/json", token));
  return out.at("pipeline_id");
}

json CoordinatorClient::pipeline_json(const std::string& pipeline_id) {
  return parse_body(get("/pipelines/" + encode_segment(pipeline_id)));
}

PipelineView CoordinatorClient::get_pipeline(const std::string& pipeline_id) {
  return pipeline_view_from_json(pipeline_json(pipeline_id));
}

json CoordinatorClient::job_log_json(const std::string& pipeline_id, const std::string& job) {
  return parse_body(
      get("/pipelines/" + encode_segment(pipeline_id) + "/jobs/" + encode_segment(job) + "/log"));
}

std::string CoordinatorClient::job_log(const std::string& pipeline_id, const std::string& job) {
  return job_log_json(pipeline_id, job).at("log");
}

std::string CoordinatorClient::get_artifact(const std::string& artifact_id) {
  return get("/artifacts/" + encode_segment(artifact_id));
}

HttpRunnerLink::HttpRunnerLink(const std::string& base_url, std::string token)
    : client_(base_url), token_(std::move(token)) {}

}  // namespace sciflow
