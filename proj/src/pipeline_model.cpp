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

#include "sciflow/pipeline_model.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

namespace sciflow {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSyntaxError: return "SYNTAX_ERROR";
    case ErrorCode::kSchemaError: return "SCHEMA_ERROR";
    case ErrorCode::kValidationFailed: return "VALIDATION_FAILED";
    case ErrorCode::kUnknownJob: return "UNKNOWN_JOB";
    case ErrorCode::kIllegalTransition: return "ILLEGAL_TRANSITION";
    case ErrorCode::kNotFound: return "NOT_FOUND";
    case ErrorCode::kAuthenticationFailed: return "AUTHENTICATION_FAILED";
    case ErrorCode::kStaleLease: return "STALE_LEASE";
    case ErrorCode::kPathTraversal: return "PATH_TRAVERSAL";
    case ErrorCode::kPayloadTooLarge: return "PAYLOAD_TOO_LARGE";
    case ErrorCode::kArtifactNotDeclared: return "ARTIFACT_NOT_DECLARED";
    case ErrorCode::kDepthExceeded: return "DEPTH_EXCEEDED";
    case ErrorCode::kConfigError: return "CONFIG_ERROR";
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kTransportError: return "TRANSPORT_ERROR";
    case ErrorCode::kCloneError: return "CLONE_ERROR";
    case ErrorCode::kExecutorUnavailable: return "EXECUTOR_UNAVAILABLE";
    case ErrorCode::kIoError: return "IO_ERROR";
  }
  return "UNKNOWN";
}

std::optional<ErrorCode> error_code_from_string(std::string_view text) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::kIoError); ++i) {
    const auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == text) return code;
  }
  return std::nullopt;
}

std::string to_string(const SourceLocation& loc) {
  std::string out;
  if (loc.line > 0) {
    out = "line " + std::to_string(loc.line);
    if (loc.column > 0) out += ", column " + std::to_string(loc.column);
  }
  if (!loc.path.empty()) {
    if (!out.empty()) out += " ";
    out += "(" + loc.path + ")";
  }
  return out;
}

namespace {

std::string summarize(const std::vector<Diagnostic>& diagnostics) {
  std::string out;
  for (const auto& d : diagnostics) {
    if (!out.empty()) out += "; ";
    out += d.code + ": " + d.message;
    if (auto where = to_string(d.location); !where.empty()) {
      out += " at " + where;
    }
  }
  return out;
}

}  // namespace

PipelineParseError::PipelineParseError(ErrorCode code,
                                       std::vector<Diagnostic> diagnostics)
    : Error(code, summarize(diagnostics)), diagnostics_(std::move(diagnostics)) {}

ValidationFailed::ValidationFailed(ValidationReport report)
    : Error(ErrorCode::kValidationFailed, summarize(report.errors)),
      report_(std::move(report)) {}

bool JobDefinition::operator==(const JobDefinition& other) const {
  return name == other.name && stage == other.stage && script == other.script &&
         tags == other.tags && image == other.image &&
         variables == other.variables &&
         artifact_paths == other.artifact_paths &&
         trigger_artifact == other.trigger_artifact;
}

bool PipelineDefinition::operator==(const PipelineDefinition& other) const {
  return defaults == other.defaults && stages == other.stages &&
         jobs == other.jobs;
}

const JobDefinition* PipelineDefinition::find_job(std::string_view name) const {
  auto it = std::find_if(jobs.begin(), jobs.end(),
                         [&](const JobDefinition& j) { return j.name == name; });
  return it == jobs.end() ? nullptr : &*it;
}

std::optional<std::size_t> PipelineDefinition::stage_index(
    std::string_view stage) const {
  auto it = std::find(stages.begin(), stages.end(), stage);
  if (it == stages.end()) return std::nullopt;
  return static_cast<std::size_t>(it - stages.begin());
}

bool ValidationReport::has_error(std::string_view code) const {
  return std::any_of(errors.begin(), errors.end(),
                     [&](const Diagnostic& d) { return d.code == code; });
}

bool ValidationReport::has_warning(std::string_view code) const {
  return std::any_of(warnings.begin(), warnings.end(),
                     [&](const Diagnostic& d) { return d.code == code; });
}

std::string ValidationReport::to_text() const {
  std::ostringstream out;
  auto emit = [&](std::string_view level, const Diagnostic& d) {
    out << level << " " << d.code << ": " << d.message;
    if (auto where = to_string(d.location); !where.empty()) out << " at " << where;
    out << "\n";
  };
  for (const auto& d : errors) emit("error", d);
  for (const auto& d : warnings) emit("warning", d);
  out << errors.size() << " error(s), " << warnings.size() << " warning(s)\n";
  return out.str();
}

bool is_valid_tag(std::string_view tag) {
  if (tag.empty()) return false;
  return std::none_of(tag.begin(), tag.end(), [](unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
           c == '\f';
  });
}

bool is_safe_relative_path(std::string_view path) {
  if (path.empty() || path.front() == '/' || path.front() == '\\') return false;
  if (path.find('\0') != std::string_view::npos) return false;
  for (const auto& part : std::filesystem::path(std::string(path))) {
    if (part == "..") return false;
  }
  // Backslash-separated traversal ("..\\x") is rejected as well.
  std::string_view rest = path;
  while (!rest.empty()) {
    auto sep = rest.find_first_of("/\\");
    auto part = rest.substr(0, sep);
    if (part == "..") return false;
    if (sep == std::string_view::npos) break;
    rest.remove_prefix(sep + 1);
  }
  return true;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kDefaultKey = "default";
constexpr std::string_view kStagesKey = "stages";

SourceLocation location_of(const YAML::Node& node, std::string path) {
  const auto mark = node.Mark();
  if (mark.is_null()) return {0, 0, std::move(path)};
  return {mark.line + 1, mark.column + 1, std::move(path)};
}

class DocumentReader {
 public:
  PipelineDefinition read(const YAML::Node& root) {
    PipelineDefinition def;
    if (root.IsNull()) {
      fail("DOCUMENT_EMPTY", "document is empty", location_of(root, ""));
      throw_if_failed();
    }
    if (!root.IsMap()) {
      fail("DOCUMENT_NOT_MAPPING", "top level must be a mapping",
           location_of(root, ""));
      throw_if_failed();
    }

    std::set<std::string> seen;
    for (const auto& entry : root) {
      const auto key_loc = location_of(entry.first, "");
      if (!entry.first.IsScalar()) {
        fail("KEY_NOT_SCALAR", "top-level keys must be scalars", key_loc);
        continue;
      }
      const auto key = entry.first.Scalar();
      SourceLocation loc = key_loc;
      loc.path = key;
      if (!seen.insert(key).second) {
        fail(std::string(codes::kDuplicateJob),
             "key '" + key + "' appears more than once", loc);
        continue;
      }
      if (key == kDefaultKey) {
        read_defaults(entry.second, def);
      } else if (key == kStagesKey) {
        read_stages(entry.second, def);
      } else if (looks_like_job(entry.second)) {
        def.jobs.push_back(read_job(key, entry.second, loc));
      } else {
        def.unknown_keys.push_back({std::string(codes::kUnknownKey),
                                    "unsupported top-level key '" + key +
                                        "' ignored",
                                    loc});
      }
    }
    throw_if_failed();
    return def;
  }

 private:
  static bool looks_like_job(const YAML::Node& node) {
    return node.IsMap() && (node["script"] || node["stage"]);
  }

  void fail(std::string code, std::string message, SourceLocation loc) {
    errors_.push_back({std::move(code), std::move(message), std::move(loc)});
  }

  void throw_if_failed() {
    if (!errors_.empty()) {
      throw PipelineParseError(ErrorCode::kSchemaError, std::move(errors_));
    }
  }

  std::optional<std::string> scalar(const YAML::Node& node,
                                    const std::string& path) {
    if (!node.IsScalar()) {
      fail("NOT_A_SCALAR", "'" + path + "' must be a string",
           location_of(node, path));
      return std::nullopt;
    }
    return node.Scalar();
  }

  std::optional<std::vector<std::string>> string_list(const YAML::Node& node,
                                                      const std::string& path) {
    if (!node.IsSequence()) {
      fail("NOT_A_LIST", "'" + path + "' must be a list",
           location_of(node, path));
      return std::nullopt;
    }
    std::vector<std::string> out;
    std::size_t i = 0;
    for (const auto& item : node) {
      auto value = scalar(item, path + "[" + std::to_string(i++) + "]");
      if (value) out.push_back(*value);
    }
    return out;
  }

  std::optional<VariableMap> variable_map(const YAML::Node& node,
                                          const std::string& path) {
    if (node.IsNull()) return VariableMap{};
    if (!node.IsMap()) {
      fail("NOT_A_MAPPING", "'" + path + "' must be a mapping",
           location_of(node, path));
      return std::nullopt;
    }
    VariableMap out;
    for (const auto& entry : node) {
      if (!entry.first.IsScalar()) {
        fail("KEY_NOT_SCALAR", "variable names must be scalars",
             location_of(entry.first, path));
        continue;
      }
      const auto name = entry.first.Scalar();
      const auto item_path = path + "." + name;
      if (out.contains(name)) {
        fail("DUPLICATE_VARIABLE", "variable '" + name + "' defined twice",
             location_of(entry.first, item_path));
        continue;
      }
      if (entry.second.IsNull()) {
        out.emplace(name, "");
        continue;
      }
      if (auto value = scalar(entry.second, item_path)) {
        out.emplace(name, *value);
      }
    }
    return out;
  }

  void read_defaults(const YAML::Node& node, PipelineDefinition& def) {
    if (node.IsNull()) return;
    if (!node.IsMap()) {
      fail("NOT_A_MAPPING", "'default' must be a mapping",
           location_of(node, "default"));
      return;
    }
    for (const auto& entry : node) {
      const auto key = entry.first.Scalar();
      const auto path = "default." + key;
      if (key == "image") {
        def.defaults.image = scalar(entry.second, path);
      } else if (key == "tags") {
        def.defaults.tags = string_list(entry.second, path);
      } else if (key == "variables") {
        def.defaults.variables = variable_map(entry.second, path);
      } else {
        def.unknown_keys.push_back(
            {std::string(codes::kUnknownKey),
             "unsupported key '" + key + "' in default section ignored",
             location_of(entry.first, path)});
      }
    }
  }

  void read_stages(const YAML::Node& node, PipelineDefinition& def) {
    if (!node.IsSequence()) {
      fail("NOT_A_LIST", "'stages' must be a list", location_of(node, "stages"));
      return;
    }
    std::size_t i = 0;
    for (const auto& item : node) {
      const auto path = "stages[" + std::to_string(i++) + "]";
      if (auto name = scalar(item, path)) {
        def.stages.push_back(*name);
        def.stage_locations.push_back(location_of(item, path));
      }
    }
  }

  JobDefinition read_job(const std::string& name, const YAML::Node& node,
                         SourceLocation loc) {
    JobDefinition job;
    job.name = name;
    job.location = std::move(loc);
    std::set<std::string> seen;
    for (const auto& entry : node) {
      const auto key = entry.first.Scalar();
      const auto path = name + "." + key;
      if (!seen.insert(key).second) {
        fail("DUPLICATE_KEY", "key '" + path + "' appears more than once",
             location_of(entry.first, path));
        continue;
      }
      if (key == "stage") {
        if (auto v = scalar(entry.second, path)) job.stage = *v;
      } else if (key == "script") {
        if (auto v = string_list(entry.second, path)) job.script = *v;
      } else if (key == "tags") {
        job.tags = string_list(entry.second, path);
      } else if (key == "image") {
        job.image = scalar(entry.second, path);
      } else if (key == "variables") {
        job.variables = variable_map(entry.second, path);
      } else if (key == "artifacts") {
        read_artifacts(entry.second, path, job);
      } else if (key == "trigger") {
        read_trigger(entry.second, path, job);
      } else {
        unknown_job_keys_.push_back(
            {std::string(codes::kUnknownKey),
             "unsupported job key '" + key + "' ignored",
             location_of(entry.first, path)});
      }
    }
    return job;
  }

  void read_artifacts(const YAML::Node& node, const std::string& path,
                      JobDefinition& job) {
    if (!node.IsMap()) {
      fail("NOT_A_MAPPING", "'" + path + "' must be a mapping",
           location_of(node, path));
      return;
    }
    for (const auto& entry : node) {
      const auto key = entry.first.Scalar();
      if (key == "paths") {
        if (auto v = string_list(entry.second, path + ".paths")) {
          job.artifact_paths = *v;
        }
      } else {
        unknown_job_keys_.push_back(
            {std::string(codes::kUnknownKey),
             "unsupported key '" + key + "' in artifacts ignored",
             location_of(entry.first, path + "." + key)});
      }
    }
  }

  void read_trigger(const YAML::Node& node, const std::string& path,
                    JobDefinition& job) {
    if (!node.IsMap() || !node["artifact"]) {
      fail("NOT_A_MAPPING", "'" + path + "' must be a mapping with 'artifact'",
           location_of(node, path));
      return;
    }
    job.trigger_artifact = scalar(node["artifact"], path + ".artifact");
  }

 public:
  std::vector<Diagnostic> unknown_job_keys_;

 private:
  std::vector<Diagnostic> errors_;
};

}  // namespace

PipelineDefinition parse_pipeline(std::string_view source) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(source));
  } catch (const YAML::Exception& e) {
    SourceLocation loc;
    if (!e.mark.is_null()) loc = {e.mark.line + 1, e.mark.column + 1, ""};
    throw PipelineParseError(ErrorCode::kSyntaxError,
                             {{"SYNTAX_ERROR", e.msg, loc}});
  }
  DocumentReader reader;
  auto def = reader.read(root);
  for (auto& d : reader.unknown_job_keys_) {
    def.unknown_keys.push_back(std::move(d));
  }
  return def;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

ValidationReport validate_pipeline(const PipelineDefinition& def) {
  ValidationReport report;
  auto error = [&](std::string_view code, std::string message,
                   SourceLocation loc) {
    report.errors.push_back({std::string(code), std::move(message), std::move(loc)});
  };

  auto check_tags = [&](const std::vector<std::string>& tags,
                        const SourceLocation& loc) {
    for (const auto& tag : tags) {
      if (!is_valid_tag(tag)) {
        error(codes::kInvalidTag,
              "tag '" + tag + "' must be nonempty and contain no whitespace",
              loc);
      }
    }
  };

  std::set<std::string> stage_names;
  for (std::size_t i = 0; i < def.stages.size(); ++i) {
    const auto& stage = def.stages[i];
    SourceLocation loc = i < def.stage_locations.size()
                             ? def.stage_locations[i]
                             : SourceLocation{0, 0, "stages"};
    if (stage.empty()) {
      error(codes::kEmptyStageName, "stage names must be nonempty", loc);
    } else if (!stage_names.insert(stage).second) {
      error(codes::kDuplicateStage, "stage '" + stage + "' listed twice", loc);
    }
  }

  if (def.defaults.tags) {
    check_tags(*def.defaults.tags, {0, 0, "default.tags"});
  }

  if (def.jobs.empty()) {
    error(codes::kNoJobs, "pipeline defines no jobs", {});
  }

  std::set<std::string> job_names;
  std::set<std::string> used_stages;
  for (const auto& job : def.jobs) {
    if (job.name.empty()) {
      error(codes::kEmptyJobName, "job names must be nonempty", job.location);
    } else if (!job_names.insert(job.name).second) {
      error(codes::kDuplicateJob, "job '" + job.name + "' defined twice",
            job.location);
    }
    if (job.stage.empty()) {
      error(codes::kJobMissingStage, "job '" + job.name + "' has no stage",
            job.location);
    } else if (!stage_names.contains(job.stage)) {
      error(codes::kJobUnknownStage,
            "job references stage absent from stages list: job '" + job.name +
                "' uses stage '" + job.stage + "'",
            job.location);
    } else {
      used_stages.insert(job.stage);
    }
    if (job.script.empty()) {
      error(codes::kScriptEmpty,
            "job '" + job.name + "' must have at least one script line",
            job.location);
    }
    for (const auto& line : job.script) {
      if (line.empty()) {
        error(codes::kEmptyCommand,
              "job '" + job.name + "' has an empty script line", job.location);
      }
    }
    if (job.tags) check_tags(*job.tags, job.location);
    for (const auto& path : job.artifact_paths) {
      if (!is_safe_relative_path(path)) {
        error(codes::kInvalidArtifactPath,
              "artifact path '" + path + "' must be relative without '..'",
              job.location);
      }
    }
    if (job.trigger_artifact && !is_safe_relative_path(*job.trigger_artifact)) {
      error(codes::kInvalidArtifactPath,
            "trigger artifact '" + *job.trigger_artifact +
                "' must be relative without '..'",
            job.location);
    }
  }

  for (std::size_t i = 0; i < def.stages.size(); ++i) {
    const auto& stage = def.stages[i];
    if (!stage.empty() && !used_stages.contains(stage)) {
      SourceLocation loc = i < def.stage_locations.size()
                               ? def.stage_locations[i]
                               : SourceLocation{0, 0, "stages"};
      report.warnings.push_back({std::string(codes::kStageUnused),
                                 "stage '" + stage + "' has no jobs", loc});
    }
  }
  for (const auto& d : def.unknown_keys) report.warnings.push_back(d);
  return report;
}

PipelineDefinition load_pipeline(std::string_view source) {
  auto def = parse_pipeline(source);
  auto report = validate_pipeline(def);
  if (!report.ok()) throw ValidationFailed(std::move(report));
  return def;
}

ResolvedJobSpec resolve_job(const PipelineDefinition& def,
                            std::string_view name) {
  const auto* job = def.find_job(name);
  if (job == nullptr) {
    throw Error(ErrorCode::kUnknownJob, "no job named '" + std::string(name) + "'");
  }
  const auto index = def.stage_index(job->stage);
  if (!index) {
    throw Error(ErrorCode::kValidationFailed,
                "job '" + job->name + "' references unknown stage '" +
                    job->stage + "'");
  }

  ResolvedJobSpec spec;
  spec.name = job->name;
  spec.stage = job->stage;
  spec.stage_index = *index;
  spec.image = job->image ? job->image : def.defaults.image;
  if (job->tags) {
    spec.tags = *job->tags;
  } else if (def.defaults.tags) {
    spec.tags = *def.defaults.tags;
  }
  if (def.defaults.variables) spec.variables = *def.defaults.variables;
  if (job->variables) {
    for (const auto& [key, value] : *job->variables) {
      spec.variables.insert_or_assign(key, value);
    }
  }
  spec.script = job->script;
  spec.artifact_paths = job->artifact_paths;
  spec.trigger_artifact = job->trigger_artifact;
  return spec;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

void emit_list(YAML::Emitter& out, const std::vector<std::string>& items) {
  out << YAML::BeginSeq;
  for (const auto& item : items) out << YAML::DoubleQuoted << item;
  out << YAML::EndSeq;
}

void emit_variables(YAML::Emitter& out, const VariableMap& vars) {
  out << YAML::BeginMap;
  for (const auto& [key, value] : vars) {
    out << YAML::Key << key << YAML::Value << YAML::DoubleQuoted << value;
  }
  out << YAML::EndMap;
}

}  // namespace

std::string serialize_pipeline(const PipelineDefinition& def) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  const auto& d = def.defaults;
  if (d.image || d.tags || d.variables) {
    out << YAML::Key << "default" << YAML::Value << YAML::BeginMap;
    if (d.image) out << YAML::Key << "image" << YAML::Value << YAML::DoubleQuoted << *d.image;
    if (d.tags) {
      out << YAML::Key << "tags" << YAML::Value;
      emit_list(out, *d.tags);
    }
    if (d.variables) {
      out << YAML::Key << "variables" << YAML::Value;
      emit_variables(out, *d.variables);
    }
    out << YAML::EndMap;
  }
  out << YAML::Key << "stages" << YAML::Value;
  emit_list(out, def.stages);

  for (const auto& job : def.jobs) {
    out << YAML::Key << job.name << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "stage" << YAML::Value << YAML::DoubleQuoted << job.stage;
    if (job.tags) {
      out << YAML::Key << "tags" << YAML::Value;
      emit_list(out, *job.tags);
    }
    if (job.image) out << YAML::Key << "image" << YAML::Value << YAML::DoubleQuoted << *job.image;
    if (job.variables) {
      out << YAML::Key << "variables" << YAML::Value;
      emit_variables(out, *job.variables);
    }
    out << YAML::Key << "script" << YAML::Value;
    emit_list(out, job.script);
    if (!job.artifact_paths.empty()) {
      out << YAML::Key << "artifacts" << YAML::Value << YAML::BeginMap
          << YAML::Key << "paths" << YAML::Value;
      emit_list(out, job.artifact_paths);
      out << YAML::EndMap;
    }
    if (job.trigger_artifact) {
      out << YAML::Key << "trigger" << YAML::Value << YAML::BeginMap
          << YAML::Key << "artifact" << YAML::Value << YAML::DoubleQuoted
          << *job.trigger_artifact << YAML::EndMap;
    }
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace sciflow
