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

// JSON shapes shared by the HTTP server, the client and the CLI's --json
// output. Timestamps travel as ISO-8601 UTC with millisecond precision.

#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "sciflow/coordinator.hpp"

namespace sciflow {

std::string format_timestamp(Timestamp t);
/// Accepts "YYYY-MM-DDTHH:MM:SS[.fff]Z"; throws kInvalidArgument.
Timestamp parse_timestamp(const std::string& text);

nlohmann::json job_spec_to_json(const ResolvedJobSpec& spec);
ResolvedJobSpec job_spec_from_json(const nlohmann::json& j);

nlohmann::json lease_to_json(const JobLease& lease);
JobLease lease_from_json(const nlohmann::json& j);

nlohmann::json pipeline_view_to_json(const PipelineView& view);
PipelineView pipeline_view_from_json(const nlohmann::json& j);

nlohmann::json artifact_to_json(const ArtifactRecord& record);
ArtifactRecord artifact_from_json(const nlohmann::json& j);

nlohmann::json diagnostic_to_json(const Diagnostic& d);
Diagnostic diagnostic_from_json(const nlohmann::json& j);
nlohmann::json report_to_json(const ValidationReport& report);
ValidationReport report_from_json(const nlohmann::json& j);

/// {"error": {"code", "message"}} plus "report" or "diagnostics" when the
/// exception carries them.
nlohmann::json error_to_json(const Error& error);
/// Rebuilds the matching exception type from an error body and throws it.
[[noreturn]] void throw_error_from_json(const nlohmann::json& body);

}  // namespace sciflow
