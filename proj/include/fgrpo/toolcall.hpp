#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace fgrpo {

//! Scalar argument value. Ints and floats stay distinct so the kind check can tell them apart.
using Value = std::variant<std::string, std::int64_t, double, bool>;

std::string value_to_string(const Value& v);
nlohmann::json value_to_json(const Value& v);
std::optional<Value> value_from_json(const nlohmann::json& j);

enum class ParamKind { String, Int, Float, Bool, Enum };

const char* to_string(ParamKind kind);
ParamKind param_kind_from_string(std::string_view s);

struct ParamSpec {
  std::string name;
  ParamKind kind = ParamKind::String;
  bool required = true;
  std::vector<std::string> allowed_values;  // only meaningful for Enum

  bool operator==(const ParamSpec&) const = default;
};

struct ToolSchema {
  std::string name;
  std::vector<ParamSpec> params;

  const ParamSpec* find_param(std::string_view param) const;
  //! Throws InvalidArgument on duplicate param names or an enum without allowed values.
  void check() const;

  bool operator==(const ToolSchema&) const = default;
};

using ToolLibrary = std::vector<ToolSchema>;

const ToolSchema* find_tool(const ToolLibrary& library, std::string_view name);

nlohmann::json library_to_json(const ToolLibrary& library);
ToolLibrary library_from_json(const nlohmann::json& j);
ToolLibrary load_library(const std::string& path);

struct ToolCall {
  std::string tool_name;
  std::map<std::string, Value> args;

  bool operator==(const ToolCall&) const = default;
};

nlohmann::json call_to_json(const ToolCall& call);
ToolCall call_from_json(const nlohmann::json& j);

//! Canonical single-line form. Without a schema, keys are lexicographic; with one,
//! schema order first and then lexicographic for any extras.
std::string serialize_call(const ToolCall& call, const ToolSchema* schema = nullptr);
std::string serialize_calls(const std::vector<ToolCall>& calls, const ToolLibrary* library = nullptr);

//! Renders the fenced call block, optionally preceded by free-form reasoning.
std::string render_call_block(const std::vector<ToolCall>& calls, const ToolLibrary* library = nullptr,
                              std::string_view reasoning = {});

struct Trajectory {
  std::string query_id;
  std::string raw_text;
  std::vector<ToolCall> calls;  // empty when the call block does not parse
  std::size_t length_tokens = 0;
  double logprob = 0.0;
};

std::size_t whitespace_token_count(std::string_view text);

//! Extracts the calls of the first fenced block. Returns nullopt for anything malformed,
//! including a missing or empty block.
std::optional<std::vector<ToolCall>> parse_call_block(std::string_view raw_text);

//! Never throws on malformed text; such input yields empty calls.
Trajectory parse_trajectory(std::string query_id, std::string raw_text);

enum class ViolationCode { Unparseable, UnknownTool, MissingRequired, UnknownParam, TypeMismatch, EnumViolation };

const char* to_string(ViolationCode code);

struct Violation {
  ViolationCode code;
  std::string tool;
  std::string param;
  std::string message;
};

struct FormatReport {
  bool valid = true;
  std::vector<Violation> violations;
};

void validate_call(const ToolCall& call, const ToolLibrary& library, std::vector<Violation>& out);
FormatReport validate_format(const Trajectory& t, const ToolLibrary& library);

using Digest = std::uint64_t;

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string digest_hex(Digest d);

//! Deduplication key over (query_id, failed calls). Feedback is intentionally not part of it.
Digest corrective_key(std::string_view query_id, const Trajectory& tau_err);

}  // namespace fgrpo
