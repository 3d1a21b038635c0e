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

// HTTP front end for a Coordinator.
//
//   POST /pipelines                  {repo_url, commit, definition}
//   POST /runners                    {name, tags, executor, run_untagged}
//   POST /runners/poll               bearer token
//   POST /leases/{id}/status         bearer; {status, log (base64)}
//   POST /leases/{id}/artifacts      bearer; ?path=..., raw body
//   POST /leases/{id}/trigger        bearer; {artifact_id}
//   GET  /pipelines/{id}
//   GET  /pipelines/{id}/jobs/{job}/log
//   GET  /artifacts/{id}             raw body
//
// Errors come back as {"error": {"code", "message"}} with a matching HTTP
// status; validation failures add the report.

#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <thread>

#include "sciflow/coordinator.hpp"

namespace httplib {
class Server;
}

namespace sciflow {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::chrono::milliseconds sweep_interval{std::chrono::seconds(1)};
  std::size_t worker_threads = 16;
};

class CoordinatorServer {
 public:
  CoordinatorServer(Coordinator& coordinator, ServerOptions options);
  ~CoordinatorServer();
  CoordinatorServer(const CoordinatorServer&) = delete;
  CoordinatorServer& operator=(const CoordinatorServer&) = delete;

  /// Binds and serves on background threads; returns the bound port.
  int start();
  void stop();

  int port() const noexcept { return port_; }
  std::string url() const;

 private:
  void install_routes();

  Coordinator& coordinator_;
  ServerOptions options_;
  std::unique_ptr<httplib::Server> server_;
  int port_ = 0;
  std::thread listener_;
  std::jthread sweeper_;
};

/// HTTP status used for an error code.
int http_status_for(ErrorCode code);

}  // namespace sciflow
