#include "fgrpo/toolcall.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "fgrpo/error.hpp"

namespace fgrpo {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::Unrepresentable: return "UNREPRESENTABLE";
    case ErrorCode::GroupTooSmall: return "GROUP_TOO_SMALL";
    case ErrorCode::NonfiniteGradient: return "NONFINITE_GRADIENT";
    case ErrorCode::ExternalUnavailable: return "EXTERNAL_UNAVAILABLE";
    case ErrorCode::MalformedRemoteReply: return "MALFORMED_REMOTE_REPLY";
    case ErrorCode::BufferEmpty: return "EMPTY";
    case ErrorCode::RetryExhausted: return "RETRY_EXHAUSTED";
    case ErrorCode::MismatchedEval: return "MISMATCHED_EVAL";
    case ErrorCode::Io: return "IO";
  }
  return "UNKNOWN";
}

std::string value_to_string(const Value& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::string>) {
          return x;
        } else if constexpr (std::is_same_v<T, bool>) {
          return x ? "true" : "false";
        } else {
          return nlohmann::json(x).dump();
        }
      },
      v);
}

nlohmann::json value_to_json(const Value& v) {
  return std::visit([](const auto& x) { return nlohmann::json(x); }, v);
}

std::optional<Value> value_from_json(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::string: return Value{j.get<std::string>()};
    case nlohmann::json::value_t::boolean: return Value{j.get<bool>()};
    case nlohmann::json::value_t::number_integer: return Value{j.get<std::int64_t>()};
    case nlohmann::json::value_t::number_unsigned: {
      auto u = j.get<std::uint64_t>();
      if (u > static_cast<std::uint64_t>(INT64_MAX)) return std::nullopt;
      return Value{static_cast<std::int64_t>(u)};
    }
    case nlohmann::json::value_t::number_float: return Value{j.get<double>()};
    default: return std::nullopt;
  }
}

const char* to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::String: return "string";
    case ParamKind::Int: return "int";
    case ParamKind::Float: return "float";
    case ParamKind::Bool: return "bool";
    case ParamKind::Enum: return "enum";
  }
  return "?";
}

ParamKind param_kind_from_string(std::string_view s) {
  if (s == "string") return ParamKind::String;
  if (s == "int") return ParamKind::Int;
  if (s == "float") return ParamKind::Float;
  if (s == "bool") return ParamKind::Bool;
  if (s == "enum") return ParamKind::Enum;
  throw Error(ErrorCode::InvalidArgument, "unknown param kind '" + std::string(s) + "'");
}

const ParamSpec* ToolSchema::find_param(std::string_view param) const {
  auto it = std::find_if(params.begin(), params.end(), [&](const ParamSpec& p) { return p.name == param; });
  return it == params.end() ? nullptr : &*it;
}

void ToolSchema::check() const {
  std::set<std::string> seen;
  for (const auto& p : params) {
    if (!seen.insert(p.name).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate param '" + p.name + "' in tool '" + name + "'");
    }
    if (p.kind == ParamKind::Enum && p.allowed_values.empty()) {
      throw Error(ErrorCode::InvalidArgument, "enum param '" + p.name + "' has no allowed values");
    }
  }
}

const ToolSchema* find_tool(const ToolLibrary& library, std::string_view name) {
  auto it = std::find_if(library.begin(), library.end(), [&](const ToolSchema& s) { return s.name == name; });
  return it == library.end() ? nullptr : &*it;
}

nlohmann::json library_to_json(const ToolLibrary& library) {
  auto out = nlohmann::json::array();
  for (const auto& tool : library) {
    auto params = nlohmann::json::array();
    for (const auto& p : tool.params) {
      nlohmann::json jp = {{"name", p.name}, {"kind", to_string(p.kind)}, {"required", p.required}};
      if (p.kind == ParamKind::Enum) jp["allowed_values"] = p.allowed_values;
      params.push_back(std::move(jp));
    }
    out.push_back({{"name", tool.name}, {"params", std::move(params)}});
  }
  return out;
}

ToolLibrary library_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::InvalidArgument, "tool library must be a JSON array");
  ToolLibrary library;
  for (const auto& jt : j) {
    ToolSchema tool;
    tool.name = jt.at("name").get<std::string>();
    for (const auto& jp : jt.at("params")) {
      ParamSpec p;
      p.name = jp.at("name").get<std::string>();
      p.kind = param_kind_from_string(jp.at("kind").get<std::string>());
      p.required = jp.value("required", true);
      if (jp.contains("allowed_values")) p.allowed_values = jp["allowed_values"].get<std::vector<std::string>>();
      tool.params.push_back(std::move(p));
    }
    tool.check();
    library.push_back(std::move(tool));
  }
  return library;
}

ToolLibrary load_library(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return library_from_json(nlohmann::json::parse(in));
}

nlohmann::json call_to_json(const ToolCall& call) {
  auto args = nlohmann::json::object();
  for (const auto& [name, value] : call.args) args[name] = value_to_json(value);
  return {{"name", call.tool_name}, {"args", std::move(args)}};
}

ToolCall call_from_json(const nlohmann::json& j) {
  ToolCall call;
  call.tool_name = j.at("name").get<std::string>();
  for (const auto& [k, v] : j.at("args").items()) {
    auto value = value_from_json(v);
    if (!value) throw Error(ErrorCode::InvalidArgument, "non-scalar argument '" + k + "'");
    call.args[k] = std::move(*value);
  }
  return call;
}

std::string serialize_call(const ToolCall& call, const ToolSchema* schema) {
  // ordered_json keeps the insertion order we build here
  auto args = nlohmann::ordered_json::object();
  if (schema) {
    for (const auto& p : schema->params) {
      auto it = call.args.find(p.name);
      if (it != call.args.end()) args[p.name] = value_to_json(it->second);
    }
  }
  for (const auto& [name, value] : call.args) {
    if (!args.contains(name)) args[name] = value_to_json(value);
  }
  nlohmann::ordered_json out;
  out["name"] = call.tool_name;
  out["args"] = std::move(args);
  // Backticks only occur inside JSON strings here; escaping them keeps a value from closing the fence.
  std::string text = out.dump();
  for (auto pos = text.find('`'); pos != std::string::npos; pos = text.find('`', pos)) text.replace(pos, 1, "\\u0060");
  return text;
}

std::string serialize_calls(const std::vector<ToolCall>& calls, const ToolLibrary* library) {
  std::string out;
  for (std::size_t i = 0; i < calls.size(); ++i) {
    if (i) out += '\n';
    const ToolSchema* schema = library ? find_tool(*library, calls[i].tool_name) : nullptr;
    out += serialize_call(calls[i], schema);
  }
  return out;
}

std::string render_call_block(const std::vector<ToolCall>& calls, const ToolLibrary* library,
                              std::string_view reasoning) {
  std::string out;
  if (!reasoning.empty()) {
    out += reasoning;
    out += '\n';
  }
  out += "```tool_calls\n";
  out += serialize_calls(calls, library);
  out += "\n```";
  return out;
}

std::size_t whitespace_token_count(std::string_view text) {
  std::size_t count = 0;
  bool in_token = false;
  for (char c : text) {
    bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_token) ++count;
    in_token = !space;
  }
  return count;
}

std::optional<std::vector<ToolCall>> parse_call_block(std::string_view raw) {
  constexpr std::string_view fence = "```";
  auto open = raw.find(fence);
  if (open == std::string_view::npos) return std::nullopt;
  auto body_start = raw.find('\n', open);
  if (body_start == std::string_view::npos) return std::nullopt;
  auto close = raw.find(fence, body_start + 1);
  if (close == std::string_view::npos) return std::nullopt;
  std::string_view body = raw.substr(body_start + 1, close - body_start - 1);

  std::vector<ToolCall> calls;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    auto eol = body.find('\n', pos);
    if (eol == std::string_view::npos) eol = body.size();
    std::string_view line = body.substr(pos, eol - pos);
    pos = eol + 1;
    if (whitespace_token_count(line) == 0) continue;

    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || j.size() != 2) return std::nullopt;
    if (!j.contains("name") || !j["name"].is_string()) return std::nullopt;
    if (!j.contains("args") || !j["args"].is_object()) return std::nullopt;
    ToolCall call;
    call.tool_name = j["name"].get<std::string>();
    for (const auto& [k, v] : j["args"].items()) {
      auto value = value_from_json(v);
      if (!value) return std::nullopt;
      call.args[k] = std::move(*value);
    }
    calls.push_back(std::move(call));
  }
  if (calls.empty()) return std::nullopt;
  return calls;
}

Trajectory parse_trajectory(std::string query_id, std::string raw_text) {
  Trajectory t;
  t.query_id = std::move(query_id);
  t.length_tokens = whitespace_token_count(raw_text);
  if (auto calls = parse_call_block(raw_text)) t.calls = std::move(*calls);
  t.raw_text = std::move(raw_text);
  return t;
}

const char* to_string(ViolationCode code) {
  switch (code) {
    case ViolationCode::Unparseable: return "UNPARSEABLE";
    case ViolationCode::UnknownTool: return "UNKNOWN_TOOL";
    case ViolationCode::MissingRequired: return "MISSING_REQUIRED";
    case ViolationCode::UnknownParam: return "UNKNOWN_PARAM";
    case ViolationCode::TypeMismatch: return "TYPE_MISMATCH";
    case ViolationCode::EnumViolation: return "ENUM_VIOLATION";
  }
  return "?";
}

namespace {

bool kind_matches(ParamKind kind, const Value& v) {
  switch (kind) {
    case ParamKind::String:
    case ParamKind::Enum: return std::holds_alternative<std::string>(v);
    case ParamKind::Int: return std::holds_alternative<std::int64_t>(v);
    case ParamKind::Float: return std::holds_alternative<double>(v) || std::holds_alternative<std::int64_t>(v);
    case ParamKind::Bool: return std::holds_alternative<bool>(v);
  }
  return false;
}

std::string join_quoted(const std::vector<std::string>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += "'" + values[i] + "'";
  }
  return out;
}

}  // namespace

void validate_call(const ToolCall& call, const ToolLibrary& library, std::vector<Violation>& out) {
  const ToolSchema* schema = find_tool(library, call.tool_name);
  if (!schema) {
    out.push_back({ViolationCode::UnknownTool, call.tool_name, "",
                   "Tool '" + call.tool_name + "' is not defined in the tool library."});
    return;
  }
  for (const auto& p : schema->params) {
    auto it = call.args.find(p.name);
    if (it == call.args.end()) {
      if (p.required) {
        out.push_back({ViolationCode::MissingRequired, schema->name, p.name,
                       "Missing required parameter '" + p.name + "' for tool '" + schema->name + "'."});
      }
      continue;
    }
    if (!kind_matches(p.kind, it->second)) {
      std::string expected = p.kind == ParamKind::Enum ? "string" : to_string(p.kind);
      out.push_back({ViolationCode::TypeMismatch, schema->name, p.name,
                     "Parameter '" + p.name + "' of tool '" + schema->name + "' expects a value of type " +
                         expected + ", got '" + value_to_string(it->second) + "'."});
      continue;
    }
    if (p.kind == ParamKind::Enum) {
      const auto& s = std::get<std::string>(it->second);
      if (std::find(p.allowed_values.begin(), p.allowed_values.end(), s) == p.allowed_values.end()) {
        out.push_back({ViolationCode::EnumViolation, schema->name, p.name,
                       "Parameter '" + p.name + "' of tool '" + schema->name + "' must be one of [" +
                           join_quoted(p.allowed_values) + "], got '" + s + "'."});
      }
    }
  }
  for (const auto& [name, value] : call.args) {
    if (!schema->find_param(name)) {
      out.push_back({ViolationCode::UnknownParam, schema->name, name,
                     "Unexpected parameter '" + name + "' for tool '" + schema->name + "'."});
    }
  }
}

FormatReport validate_format(const Trajectory& t, const ToolLibrary& library) {
  FormatReport report;
  if (t.calls.empty()) {
    report.violations.push_back({ViolationCode::Unparseable, "", "", "Tool call block could not be parsed."});
  }
  for (const auto& call : t.calls) validate_call(call, library, report.violations);
  report.valid = report.violations.empty();
  return report;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string digest_hex(Digest d) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

Digest corrective_key(std::string_view query_id, const Trajectory& tau_err) {
  std::string material(query_id);
  material += '\x1f';
  if (tau_err.calls.empty()) {
    material += "raw\x1f";
    material += tau_err.raw_text;
  } else {
    material += "calls\x1f";
    material += serialize_calls(tau_err.calls);
  }
  return fnv1a64(material);
}

}  // namespace fgrpo
