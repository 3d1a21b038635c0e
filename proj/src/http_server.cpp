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

#include "sciflow/http_server.hpp"

#include <condition_variable>

#include "httplib.h"
#include "sciflow/crypto.hpp"
#include "sciflow/wire.hpp"

namespace sciflow {

using nlohmann::json;

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound:
    case ErrorCode::kUnknownJob: return 404;
    case ErrorCode::kAuthenticationFailed: return 401;
    case ErrorCode::kStaleLease:
    case ErrorCode::kIllegalTransition: return 409;
    case ErrorCode::kPayloadTooLarge: return 413;
    case ErrorCode::kSyntaxError:
    case ErrorCode::kSchemaError:
    case ErrorCode::kValidationFailed:
    case ErrorCode::kDepthExceeded:
    case ErrorCode::kArtifactNotDeclared: return 422;
    case ErrorCode::kPathTraversal:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kConfigError: return 400;
    default: return 500;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(-1, ' ', false, json::error_handler_t::replace),
                  "application/json");
}

std::string bearer(const httplib::Request& req) {
  const auto header = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (header.rfind(prefix, 0) != 0) return {};
  return header.substr(prefix.size());
}

json body_json(const httplib::Request& req) {
  auto body = json::parse(req.body, nullptr, false);
  if (!body.is_object()) throw Error(ErrorCode::kInvalidArgument, "request body must be a JSON object");
  return body;
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

/// Turns exceptions into error bodies.
Handler guarded(Handler inner) {
  return [inner = std::move(inner)](const httplib::Request& req, httplib::Response& res) {
    try {
      inner(req, res);
    } catch (const Error& e) {
      send_json(res, http_status_for(e.code()), error_to_json(e));
    } catch (const json::exception& e) {
      send_json(res, 400, error_to_json(Error(ErrorCode::kInvalidArgument, e.what())));
    } catch (const std::exception& e) {
      send_json(res, 500, error_to_json(Error(ErrorCode::kIoError, e.what())));
    }
  };
}

}  // namespace

CoordinatorServer::CoordinatorServer(Coordinator& coordinator, ServerOptions options)
    : coordinator_(coordinator),
      options_(std::move(options)),
      server_(std::make_unique<httplib::Server>()) {
  const auto threads = options_.worker_threads;
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  // Room for the largest accepted artifact; anything bigger is refused by
  // the transport with 413 before it reaches the coordinator.
  server_->set_payload_max_length(coordinator_.config().max_artifact_bytes + (1u << 20));
  install_routes();
}

CoordinatorServer::~CoordinatorServer() { stop(); }

std::string CoordinatorServer::url() const {
  return "http://" + options_.host + ":" + std::to_string(port_);
}

void CoordinatorServer::install_routes() {
  auto& c = coordinator_;
  auto& s = *server_;

  s.Post("/pipelines", guarded([&c](const auto& req, auto& res) {
    const auto body = body_json(req);
    const auto id = c.submit_pipeline(body.at("repo_url"), body.at("commit"),
                                      body.at("definition"));
    send_json(res, 201, {{"pipeline_id", id}});
  }));

  s.Post("/runners", guarded([&c](const auto& req, auto& res) {
    const auto body = body_json(req);
    const auto kind_text = body.value("executor", std::string("shell"));
    const auto kind = executor_kind_from_string(kind_text);
    if (!kind) throw Error(ErrorCode::kInvalidArgument, "unknown executor '" + kind_text + "'");
    const auto issued = c.register_runner(
        body.at("name"), body.value("tags", std::set<std::string>{}), *kind,
        body.value("run_untagged", false));
    send_json(res, 201, {{"runner_id", issued.runner_id}, {"token", issued.token}});
  }));

  s.Post("/runners/poll", guarded([&c](const auto& req, auto& res) {
    const auto result = c.poll_job(bearer(req));
    send_json(res, 200,
              {{"lease", result.lease ? lease_to_json(*result.lease) : json(nullptr)},
               {"retry_after_ms", result.retry_after.count()}});
  }));

  s.Post(R"(/leases/([^/]+)/status)", guarded([&c](const auto& req, auto& res) {
    const auto body = body_json(req);
    const auto to_text = body.at("status").template get<std::string>();
    const auto to = job_status_from_string(to_text);
    if (!to) throw Error(ErrorCode::kInvalidArgument, "unknown status '" + to_text + "'");
    const auto log = base64_decode(body.value("log", std::string()));
    const auto status = c.update_job(bearer(req), req.matches[1], *to, log);
    send_json(res, 200, {{"job_status", std::string(to_string(status))}});
  }));

  s.Post(R"(/leases/([^/]+)/artifacts)", guarded([&c](const auto& req, auto& res) {
    if (!req.has_param("path")) throw Error(ErrorCode::kInvalidArgument, "missing ?path=");
    const auto id = c.upload_artifact(bearer(req), req.matches[1], req.get_param_value("path"),
                                      req.body);
    send_json(res, 201, {{"artifact_id", id}});
  }));

  s.Post(R"(/leases/([^/]+)/trigger)", guarded([&c](const auto& req, auto& res) {
    const auto body = body_json(req);
    const auto id = c.trigger_child_pipeline(bearer(req), req.matches[1], body.at("artifact_id"));
    send_json(res, 201, {{"pipeline_id", id}});
  }));

  s.Get(R"(/pipelines/([^/]+))", guarded([&c](const auto& req, auto& res) {
    send_json(res, 200, pipeline_view_to_json(c.get_pipeline(req.matches[1])));
  }));

  s.Get(R"(/pipelines/([^/]+)/jobs/([^/]+)/log)", guarded([&c](const auto& req, auto& res) {
    send_json(res, 200,
              {{"pipeline_id", req.matches[1]},
               {"job", req.matches[2]},
               {"log", c.job_log(req.matches[1], req.matches[2])}});
  }));

  s.Get(R"(/artifacts/([^/]+))", guarded([&c](const auto& req, auto& res) {
    res.status = 200;
    res.set_content(c.get_artifact(req.matches[1]), "application/octet-stream");
  }));
}

int CoordinatorServer::start() {
  if (options_.port == 0) {
    port_ = server_->bind_to_any_port(options_.host);
  } else {
    port_ = server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
  }
  if (port_ <= 0) {
    throw Error(ErrorCode::kConfigError,
                "cannot listen on " + options_.host + ":" + std::to_string(options_.port));
  }
  listener_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  sweeper_ = std::jthread([this](std::stop_token stop) {
    std::mutex mu;
    std::condition_variable_any cv;
    std::unique_lock lock(mu);
    while (!cv.wait_for(lock, stop, options_.sweep_interval, [] { return false; })) {
      if (stop.stop_requested()) break;
      try {
        coordinator_.expire_leases();
      } catch (const std::exception&) {
        // Retried on the next sweep.
      }
    }
  });
  return port_;
}

void CoordinatorServer::stop() {
  if (sweeper_.joinable()) {
    sweeper_.request_stop();
    sweeper_.join();
  }
  if (server_) server_->stop();
  if (listener_.joinable()) listener_.join();
}

}  // namespace sciflow
