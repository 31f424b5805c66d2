#include "fgrpo/feedback.hpp"

#include <algorithm>
#include <regex>
#include <set>

#include "fgrpo/error.hpp"

namespace fgrpo {

const char* to_string(FeedbackBackend backend) {
  switch (backend) {
    case FeedbackBackend::DeterministicFormat: return "format";
    case FeedbackBackend::RuleBasedSemantic: return "rule";
    case FeedbackBackend::StaticGeneric: return "static";
    case FeedbackBackend::ExternalSimulator: return "external";
  }
  return "?";
}

FeedbackBackend feedback_backend_from_string(std::string_view s) {
  if (s == "format") return FeedbackBackend::DeterministicFormat;
  if (s == "rule" || s == "dynamic") return FeedbackBackend::RuleBasedSemantic;
  if (s == "static") return FeedbackBackend::StaticGeneric;
  if (s == "external") return FeedbackBackend::ExternalSimulator;
  throw Error(ErrorCode::InvalidArgument, "unknown feedback backend '" + std::string(s) + "'");
}

std::string render_dialogue_context(const DialogueContext& x) {
  return "[System instructions & tools]\n" + x.system_and_tools + "\n[Dialogue history]\n" + x.dialogue_history;
}

bool is_error(const RewardBreakdown& r, double delta_corr) {
  if (r.r_fmt == 0.0) return true;
  return r.r_corr < delta_corr;
}

std::vector<std::size_t> identify_errors(const std::vector<RewardBreakdown>& rewards, double delta_corr) {
  std::vector<std::size_t> flagged;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (is_error(rewards[i], delta_corr)) flagged.push_back(i);
  }
  return flagged;
}

std::string format_feedback(const FormatReport& report) {
  if (report.valid || report.violations.empty()) {
    throw Error(ErrorCode::InvalidArgument, "format feedback requested for a valid trajectory");
  }
  return std::string(kFeedbackPrefix) + report.violations.front().message;
}

namespace {

std::vector<std::string> param_order(const ToolCall& failed, const ToolCall& gt, const ToolSchema* schema) {
  std::vector<std::string> order;
  if (schema) {
    for (const auto& p : schema->params) order.push_back(p.name);
  }
  std::set<std::string> extras;
  for (const auto& [k, v] : gt.args) extras.insert(k);
  for (const auto& [k, v] : failed.args) extras.insert(k);
  for (const auto& k : extras) {
    if (std::find(order.begin(), order.end(), k) == order.end()) order.push_back(k);
  }
  return order;
}

}  // namespace

std::string rule_feedback(const std::vector<ToolCall>& failed, const std::vector<ToolCall>& gt,
                          const ToolLibrary& library) {
  const std::string err(kFeedbackPrefix);
  const std::size_t n = std::max(failed.size(), gt.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= failed.size()) {
      std::string after = failed.empty() ? std::string("the previous step") : "'" + failed.back().tool_name + "'";
      return err + "Incomplete execution; the request requires another operation after " + after + ".";
    }
    const ToolCall& f = failed[i];
    if (i >= gt.size()) {
      return err + "Unexpected additional call to '" + f.tool_name + "'; no further operation was requested.";
    }
    const ToolCall& g = gt[i];
    if (f.tool_name != g.tool_name) {
      return err + "Tool '" + f.tool_name + "' cannot satisfy this request; this step requires a different operation.";
    }
    for (const auto& name : param_order(f, g, find_tool(library, g.tool_name))) {
      auto fi = f.args.find(name);
      auto gi = g.args.find(name);
      const bool in_f = fi != f.args.end();
      const bool in_g = gi != g.args.end();
      if (in_g && !in_f) {
        return err + "Missing parameter '" + name + "' for tool '" + f.tool_name + "'; this request requires it.";
      }
      if (in_f && !in_g) {
        return err + "Parameter '" + name + "' with value '" + value_to_string(fi->second) +
               "' is not applicable to this request for tool '" + f.tool_name + "'.";
      }
      if (in_f && in_g && fi->second != gi->second) {
        return err + "Invalid value '" + value_to_string(fi->second) + "' for parameter '" + name + "' of tool '" +
               f.tool_name + "'; parameter '" + name + "' expects value '" + value_to_string(gi->second) + "'.";
      }
    }
  }
  const std::string tool = failed.empty() ? std::string("the tool") : "'" + failed.front().tool_name + "'";
  return err + "Call to " + tool + " did not produce the expected result.";
}

std::string feedback_hint(std::string_view feedback) {
  static const std::regex param_re("[Pp]arameter '([^']+)'");
  static const std::regex tool_re("[Tt]ool '[^']*'");
  std::match_results<std::string_view::const_iterator> m;
  if (std::regex_search(feedback.begin(), feedback.end(), m, param_re)) return m[1].str();
  if (std::regex_search(feedback.begin(), feedback.end(), m, tool_re)) return "@tool";
  if (feedback.find("could not be parsed") != std::string_view::npos) return "@format";
  if (feedback.find("Incomplete execution") != std::string_view::npos ||
      feedback.find("Unexpected additional call") != std::string_view::npos) {
    return "@sequence";
  }
  return "";
}

std::string validate_remote_reply(std::string_view reply) {
  auto begin = reply.find_first_not_of(" \t\r\n");
  auto end = reply.find_last_not_of(" \t\r\n");
  std::string trimmed = begin == std::string_view::npos ? std::string{} : std::string(reply.substr(begin, end - begin + 1));
  if (trimmed.rfind(kFeedbackPrefix, 0) != 0 || trimmed.size() == kFeedbackPrefix.size()) {
    throw Error(ErrorCode::MalformedRemoteReply, "reply does not start with \"ERROR: \"");
  }
  return trimmed;
}

std::string FeedbackSynthesizer::semantic(const DialogueContext& x, const Trajectory& tau_err,
                                          const std::vector<ToolCall>& gt, const ToolLibrary& library) const {
  switch (backend) {
    case FeedbackBackend::StaticGeneric: return std::string(kStaticFeedback);
    case FeedbackBackend::DeterministicFormat:
    case FeedbackBackend::RuleBasedSemantic: return rule_feedback(tau_err.calls, gt, library);
    case FeedbackBackend::ExternalSimulator: {
      SimulatorRequest request{x.system_and_tools, x.dialogue_history, serialize_calls(gt, &library),
                               tau_err.calls.empty() ? tau_err.raw_text : serialize_calls(tau_err.calls, &library)};
      try {
        if (!client) throw Error(ErrorCode::ExternalUnavailable, "no simulator client configured");
        return validate_remote_reply(client->complete(request));
      } catch (const Error& e) {
        if (e.code() == ErrorCode::ExternalUnavailable && fallback_to_rule) {
          return rule_feedback(tau_err.calls, gt, library);
        }
        throw;
      }
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unhandled feedback backend");
}

std::string FeedbackSynthesizer::operator()(const DialogueContext& x, const Trajectory& tau_err,
                                            const std::vector<ToolCall>& gt, const ToolLibrary& library) const {
  auto report = validate_format(tau_err, library);
  if (!report.valid) return format_feedback(report);
  return semantic(x, tau_err, gt, library);
}

std::string semantic_feedback(const DialogueContext& x, const Trajectory& tau_err, const std::vector<ToolCall>& gt,
                              const ToolLibrary& library, FeedbackBackend backend, SimulatorClient* client,
                              bool fallback_to_rule) {
  return FeedbackSynthesizer{backend, client, fallback_to_rule}.semantic(x, tau_err, gt, library);
}

PolicyContext CorrectiveSample::policy_context() const {
  return PolicyContext{vocab_id, query_id, true, feedback_hint(feedback), previous};
}

nlohmann::json CorrectiveSample::to_json() const {
  return {{"query_id", query_id},
          {"instance", instance},
          {"key", digest_hex(key)},
          {"created_step", created_step},
          {"tau_err", tau_err.raw_text},
          {"feedback", feedback},
          {"hint", feedback_hint(feedback)}};
}

CorrectiveSample build_corrective_context(std::string query_id, DialogueContext x, Trajectory tau_err,
                                          std::string feedback, long created_step) {
  if (feedback.empty()) throw Error(ErrorCode::InvalidArgument, "feedback must not be empty");
  if (feedback.rfind(kFeedbackPrefix, 0) != 0) {
    throw Error(ErrorCode::InvalidArgument, "feedback must start with \"ERROR: \"");
  }
  CorrectiveSample s;
  s.key = corrective_key(query_id, tau_err);
  s.query_id = std::move(query_id);
  s.base_context = std::move(x);
  s.tau_err = std::move(tau_err);
  s.feedback = std::move(feedback);
  s.created_step = created_step;
  return s;
}

namespace {

void append_segment(std::string& out, std::string_view marker, std::string_view content) {
  out += marker;
  out += ' ';
  out += std::to_string(content.size());
  out += '\n';
  out += content;
  out += '\n';
}

std::string read_segment(std::string_view text, std::size_t& pos, std::string_view marker) {
  if (text.substr(pos, marker.size()) != marker) {
    throw Error(ErrorCode::InvalidArgument, "expected segment " + std::string(marker));
  }
  pos += marker.size() + 1;
  auto eol = text.find('\n', pos);
  if (eol == std::string_view::npos) throw Error(ErrorCode::InvalidArgument, "truncated segment header");
  std::size_t len = std::stoul(std::string(text.substr(pos, eol - pos)));
  pos = eol + 1;
  if (pos + len + 1 > text.size() || text[pos + len] != '\n') {
    throw Error(ErrorCode::InvalidArgument, "segment length mismatch");
  }
  std::string content(text.substr(pos, len));
  pos += len + 1;
  return content;
}

}  // namespace

std::string render_corrective_context(const CorrectiveSample& s) {
  std::string out;
  append_segment(out, "<|context|>", render_dialogue_context(s.base_context));
  append_segment(out, "<|assistant|>", s.tau_err.raw_text);
  append_segment(out, "<|tool|>", s.feedback);
  return out;
}

CorrectiveSegments parse_corrective_context(std::string_view text) {
  std::size_t pos = 0;
  CorrectiveSegments seg;
  seg.context = read_segment(text, pos, "<|context|>");
  seg.attempt = read_segment(text, pos, "<|assistant|>");
  seg.feedback = read_segment(text, pos, "<|tool|>");
  if (pos != text.size()) throw Error(ErrorCode::InvalidArgument, "trailing data after corrective context");
  return seg;
}

}  // namespace fgrpo
