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

// Pipeline documents: parsing, validation and per-job resolution.
//
// The accepted dialect is a small YAML subset:
//
//   default:            image / tags / variables applied to every job
//   stages:             ordered list of stage names (mandatory)
//   <job-name>:         stage, script, and optionally tags, image,
//                       variables, artifacts.paths, trigger.artifact
//
// Everything here is a pure function of its inputs.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sciflow/error.hpp"

namespace sciflow {

struct SourceLocation {
  int line = 0;    // 1-based; 0 when unknown
  int column = 0;  // 1-based; 0 when unknown
  std::string path;  // dotted key path, e.g. "job1.script"

  bool operator==(const SourceLocation&) const = default;
};

std::string to_string(const SourceLocation& loc);

struct Diagnostic {
  std::string code;
  std::string message;
  SourceLocation location;

  bool operator==(const Diagnostic&) const = default;
};

/// Thrown by parse_pipeline for malformed documents (kSyntaxError) and for
/// documents whose shape does not fit the dialect (kSchemaError).
class PipelineParseError : public Error {
 public:
  PipelineParseError(ErrorCode code, std::vector<Diagnostic> diagnostics);
  const std::vector<Diagnostic>& diagnostics() const noexcept {
    return diagnostics_;
  }

 private:
  std::vector<Diagnostic> diagnostics_;
};

using VariableMap = std::map<std::string, std::string>;

struct DefaultSection {
  std::optional<std::string> image;
  std::optional<std::vector<std::string>> tags;
  std::optional<VariableMap> variables;

  bool operator==(const DefaultSection&) const = default;
};

struct JobDefinition {
  std::string name;
  std::string stage;
  std::vector<std::string> script;
  std::optional<std::vector<std::string>> tags;
  std::optional<std::string> image;
  std::optional<VariableMap> variables;
  std::vector<std::string> artifact_paths;
  std::optional<std::string> trigger_artifact;
  SourceLocation location;

  bool operator==(const JobDefinition& other) const;
};

struct PipelineDefinition {
  DefaultSection defaults;
  std::vector<std::string> stages;
  std::vector<SourceLocation> stage_locations;
  std::vector<JobDefinition> jobs;  // document order
  std::vector<Diagnostic> unknown_keys;

  const JobDefinition* find_job(std::string_view name) const;
  std::optional<std::size_t> stage_index(std::string_view stage) const;

  /// Structural equality: locations and retained unknown keys are ignored.
  bool operator==(const PipelineDefinition& other) const;
};

struct ResolvedJobSpec {
  std::string name;
  std::string stage;
  std::size_t stage_index = 0;
  std::optional<std::string> image;
  std::vector<std::string> tags;
  VariableMap variables;
  std::vector<std::string> script;
  std::vector<std::string> artifact_paths;
  std::optional<std::string> trigger_artifact;

  bool operator==(const ResolvedJobSpec&) const = default;
};

struct ValidationReport {
  std::vector<Diagnostic> errors;
  std::vector<Diagnostic> warnings;

  bool ok() const noexcept { return errors.empty(); }
  bool has_error(std::string_view code) const;
  bool has_warning(std::string_view code) const;
  std::string to_text() const;
};

/// Thrown when a definition is used for execution while its report carries
/// errors.
class ValidationFailed : public Error {
 public:
  explicit ValidationFailed(ValidationReport report);
  const ValidationReport& report() const noexcept { return report_; }

 private:
  ValidationReport report_;
};

namespace codes {
inline constexpr std::string_view kJobUnknownStage = "JOB_UNKNOWN_STAGE";
inline constexpr std::string_view kJobMissingStage = "JOB_MISSING_STAGE";
inline constexpr std::string_view kStageUnused = "STAGE_UNUSED";
inline constexpr std::string_view kDuplicateStage = "DUPLICATE_STAGE";
inline constexpr std::string_view kDuplicateJob = "DUPLICATE_JOB";
inline constexpr std::string_view kEmptyStageName = "EMPTY_STAGE_NAME";
inline constexpr std::string_view kEmptyJobName = "EMPTY_JOB_NAME";
inline constexpr std::string_view kScriptEmpty = "SCRIPT_EMPTY";
inline constexpr std::string_view kEmptyCommand = "EMPTY_COMMAND";
inline constexpr std::string_view kInvalidTag = "INVALID_TAG";
inline constexpr std::string_view kInvalidArtifactPath = "INVALID_ARTIFACT_PATH";
inline constexpr std::string_view kNoJobs = "NO_JOBS";
inline constexpr std::string_view kUnknownKey = "UNKNOWN_KEY";
}  // namespace codes

/// Parses a pipeline document. Stages and jobs keep document order and jobs
/// carry their raw, unmerged fields. Unknown keys are retained (see
/// PipelineDefinition::unknown_keys) and surface as validation warnings.
PipelineDefinition parse_pipeline(std::string_view source);

ValidationReport validate_pipeline(const PipelineDefinition& def);

/// parse_pipeline followed by validate_pipeline; throws ValidationFailed when
/// the report has errors.
PipelineDefinition load_pipeline(std::string_view source);

/// Merges defaults into the named job: image and tags fall back to the
/// default section only when the job does not declare them (a declared
/// `tags` replaces the default list entirely); variables overlay per key.
ResolvedJobSpec resolve_job(const PipelineDefinition& def,
                            std::string_view name);

/// Emits the definition back into the document dialect.
std::string serialize_pipeline(const PipelineDefinition& def);

bool is_valid_tag(std::string_view tag);

/// A relative path without `..` components, not absolute, not empty.
bool is_safe_relative_path(std::string_view path);

}  // namespace sciflow
