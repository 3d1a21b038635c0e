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

#include "sciflow/wire.hpp"

#include <cstdio>
#include <ctime>

namespace sciflow {

using nlohmann::json;

std::string format_timestamp(Timestamp t) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch());
  const auto secs = std::chrono::floor<std::chrono::seconds>(ms);
  const std::time_t tt = secs.count();
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<int>((ms - secs).count()));
  return buf;
}

Timestamp parse_timestamp(const std::string& text) {
  std::tm tm{};
  int millis = 0;
  char frac[16] = {0};
  const int n = std::sscanf(text.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%15s", &tm.tm_year,
                            &tm.tm_mon, &tm.tm_mday, &tm.tm_hour, &tm.tm_min, &tm.tm_sec, frac);
  const std::string rest = n == 7 ? frac : "";
  bool ok = n == 7 && !rest.empty() && rest.back() == 'Z';
  if (ok && rest.size() > 1) {
    ok = rest[0] == '.' && rest.size() >= 3;
    std::string digits = ok ? rest.substr(1, rest.size() - 2) : "";
    ok = ok && digits.find_first_not_of("0123456789") == std::string::npos;
    if (ok) millis = std::stoi((digits + "000").substr(0, 3));
  }
  if (!ok) throw Error(ErrorCode::kInvalidArgument, "bad timestamp '" + text + "'");
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  return Clock::from_time_t(timegm(&tm)) + std::chrono::milliseconds(millis);
}

namespace {

json optional_time(const std::optional<Timestamp>& t) {
  return t ? json(format_timestamp(*t)) : json(nullptr);
}

std::optional<Timestamp> optional_time(const json& j) {
  if (j.is_null()) return std::nullopt;
  return parse_timestamp(j.get<std::string>());
}

}  // namespace

json job_spec_to_json(const ResolvedJobSpec& spec) {
  return {{"name", spec.name},
          {"stage", spec.stage},
          {"stage_index", spec.stage_index},
          {"image", spec.image ? json(*spec.image) : json(nullptr)},
          {"tags", spec.tags},
          {"variables", spec.variables},
          {"script", spec.script},
          {"artifact_paths", spec.artifact_paths},
          {"trigger_artifact",
           spec.trigger_artifact ? json(*spec.trigger_artifact) : json(nullptr)}};
}

ResolvedJobSpec job_spec_from_json(const json& j) {
  ResolvedJobSpec spec;
  spec.name = j.at("name");
  spec.stage = j.at("stage");
  spec.stage_index = j.at("stage_index");
  if (!j.at("image").is_null()) spec.image = j["image"].get<std::string>();
  spec.tags = j.at("tags").get<std::vector<std::string>>();
  spec.variables = j.at("variables").get<VariableMap>();
  spec.script = j.at("script").get<std::vector<std::string>>();
  spec.artifact_paths = j.value("artifact_paths", std::vector<std::string>{});
  if (j.contains("trigger_artifact") && !j["trigger_artifact"].is_null()) {
    spec.trigger_artifact = j["trigger_artifact"].get<std::string>();
  }
  return spec;
}

json lease_to_json(const JobLease& lease) {
  return {{"lease_id", lease.lease_id},
          {"pipeline_id", lease.pipeline_id},
          {"job", job_spec_to_json(lease.job)},
          {"repo", {{"url", lease.repo.url}, {"commit", lease.repo.commit}}},
          {"artifact_manifest", lease.artifact_manifest},
          {"deadline", format_timestamp(lease.deadline)}};
}

JobLease lease_from_json(const json& j) {
  JobLease lease;
  lease.lease_id = j.at("lease_id");
  lease.pipeline_id = j.at("pipeline_id");
  lease.job = job_spec_from_json(j.at("job"));
  lease.repo = {j.at("repo").at("url"), j.at("repo").at("commit")};
  lease.artifact_manifest = j.at("artifact_manifest").get<std::vector<std::string>>();
  lease.deadline = parse_timestamp(j.at("deadline"));
  return lease;
}

json artifact_to_json(const ArtifactRecord& r) {
  return {{"artifact_id", r.artifact_id}, {"pipeline_id", r.pipeline_id}, {"job", r.job},
          {"path", r.path},               {"size", r.size}};
}

ArtifactRecord artifact_from_json(const json& j) {
  return {j.at("artifact_id"), j.at("pipeline_id"), j.at("job"), j.at("path"), j.at("size")};
}

json pipeline_view_to_json(const PipelineView& v) {
  json jobs = json::array();
  for (const auto& job : v.jobs) {
    jobs.push_back({{"name", job.name},
                    {"stage", job.stage},
                    {"status", std::string(to_string(job.status))},
                    {"queued_at", optional_time(job.times.queued)},
                    {"started_at", optional_time(job.times.started)},
                    {"finished_at", optional_time(job.times.finished)},
                    {"runner_id", job.runner_id.empty() ? json(nullptr) : json(job.runner_id)}});
  }
  json artifacts = json::array();
  for (const auto& a : v.artifacts) artifacts.push_back(artifact_to_json(a));
  return {{"pipeline_id", v.pipeline_id},
          {"status", std::string(to_string(v.status))},
          {"repo", {{"url", v.repo.url}, {"commit", v.repo.commit}}},
          {"parent", v.parent ? json{{"pipeline_id", v.parent->pipeline_id},
                                     {"job", v.parent->job}}
                              : json(nullptr)},
          {"created_at", format_timestamp(v.created_at)},
          {"jobs", jobs},
          {"artifacts", artifacts},
          {"children", v.children}};
}

PipelineView pipeline_view_from_json(const json& j) {
  PipelineView v;
  v.pipeline_id = j.at("pipeline_id");
  v.status = pipeline_status_from_string(j.at("status").get<std::string>())
                 .value_or(PipelineStatus::kRunning);
  v.repo = {j.at("repo").at("url"), j.at("repo").at("commit")};
  if (!j.at("parent").is_null()) v.parent = ParentLink{j["parent"].at("pipeline_id"),
                                                       j["parent"].at("job")};
  v.created_at = parse_timestamp(j.at("created_at"));
  for (const auto& jj : j.at("jobs")) {
    JobView job;
    job.name = jj.at("name");
    job.stage = jj.at("stage");
    job.status =
        job_status_from_string(jj.at("status").get<std::string>()).value_or(JobStatus::kCreated);
    job.times.queued = optional_time(jj.at("queued_at"));
    job.times.started = optional_time(jj.at("started_at"));
    job.times.finished = optional_time(jj.at("finished_at"));
    if (!jj.at("runner_id").is_null()) job.runner_id = jj["runner_id"];
    v.jobs.push_back(std::move(job));
  }
  for (const auto& a : j.at("artifacts")) v.artifacts.push_back(artifact_from_json(a));
  v.children = j.at("children").get<std::vector<std::string>>();
  return v;
}

json diagnostic_to_json(const Diagnostic& d) {
  return {{"code", d.code},
          {"message", d.message},
          {"line", d.location.line},
          {"column", d.location.column},
          {"path", d.location.path}};
}

Diagnostic diagnostic_from_json(const json& j) {
  return {j.at("code"), j.at("message"),
          SourceLocation{j.value("line", 0), j.value("column", 0), j.value("path", "")}};
}

json report_to_json(const ValidationReport& report) {
  json errors = json::array();
  json warnings = json::array();
  for (const auto& d : report.errors) errors.push_back(diagnostic_to_json(d));
  for (const auto& d : report.warnings) warnings.push_back(diagnostic_to_json(d));
  return {{"ok", report.ok()}, {"errors", errors}, {"warnings", warnings}};
}

ValidationReport report_from_json(const json& j) {
  ValidationReport report;
  for (const auto& d : j.at("errors")) report.errors.push_back(diagnostic_from_json(d));
  for (const auto& d : j.at("warnings")) report.warnings.push_back(diagnostic_from_json(d));
  return report;
}

json error_to_json(const Error& error) {
  json body = {{"error", {{"code", std::string(to_string(error.code()))},
                          {"message", error.detail()}}}};
  if (const auto* vf = dynamic_cast<const ValidationFailed*>(&error)) {
    body["report"] = report_to_json(vf->report());
  } else if (const auto* pe = dynamic_cast<const PipelineParseError*>(&error)) {
    json diags = json::array();
    for (const auto& d : pe->diagnostics()) diags.push_back(diagnostic_to_json(d));
    body["diagnostics"] = diags;
  }
  return body;
}

void throw_error_from_json(const json& body) {
  const auto& err = body.at("error");
  const auto code = error_code_from_string(err.at("code").get<std::string>())
                        .value_or(ErrorCode::kTransportError);
  if (body.contains("report")) throw ValidationFailed(report_from_json(body["report"]));
  if (body.contains("diagnostics")) {
    std::vector<Diagnostic> diags;
    for (const auto& d : body["diagnostics"]) diags.push_back(diagnostic_from_json(d));
    throw PipelineParseError(code, std::move(diags));
  }
  throw Error(code, err.at("message").get<std::string>());
}

}  // namespace sciflow
