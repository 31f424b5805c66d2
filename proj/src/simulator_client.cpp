#include <chrono>
#include <regex>
#include <semaphore>

#include "fgrpo/error.hpp"
#include "fgrpo/feedback.hpp"

// after Eigen: a system header pulled in by httplib defines a macro that clashes with Eigen internals
#include <httplib.h>

namespace fgrpo {

namespace {

// Two-message request for a remote error simulator. The wording is ours; the placeholders and the
// reply contract (a single line starting with "ERROR: ") are what a compatible server relies on.
constexpr const char* kSystemPrompt = R"(You simulate the runtime (API server or operating system) that executes an agent's tool calls.

The call you receive has already been judged wrong against a reference call. Do not re-judge it.
Write the error text the runtime would send back so the agent can fix its next attempt.

Look for, in this order:
- calls issued out of order or before a required step
- parameters or values that the request never mentioned
- missing, misnamed or mistyped parameters
- values that break the tool's business rules

Use the reference call as the standard and the user request as context. If the attempt differs
from the reference but is still reasonable, report the missing check instead.

Reply rules:
- begin with "ERROR: " exactly
- name the concrete parameter or value from the failed attempt
- one or two short sentences in the voice of a system message
- no JSON, no markdown, no commentary
- never spell out the full reference call

Examples of the expected style:
<<ERROR_EXAMPLES_SNIPPET>>)";

constexpr const char* kUserPrompt = R"(## Failed call

Context seen by the agent

[System and tools]
<<SYSTEM_AND_TOOLS>>

[Dialogue so far]
<<DIALOGUE_HISTORY>>

Reference call(s)
<<GROUND_TRUTH_TOOL_CALLS>>

Agent call(s)
<<FAILED_TOOL_CALLS>>

Find the first critical failure in the agent call(s) and return the runtime error line only.
It must start with "ERROR:".)";

constexpr const char* kErrorExamples =
    "ERROR: Missing required parameter 'status' for tool 'update_ticket'.\n"
    "ERROR: Invalid value 'CLOSED' for parameter 'status' of tool 'update_ticket'; parameter 'status' expects "
    "value 'OPEN'.\n"
    "ERROR: Tool 'delete_file' cannot satisfy this request; this step requires a different operation.";

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

class HttpSimulatorClient final : public SimulatorClient {
 public:
  explicit HttpSimulatorClient(const HttpSimulatorOptions& options)
      : options_(options), slots_(std::max(1, std::min(options.max_in_flight, 64))) {
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(options.url, m, url_re)) {
      throw Error(ErrorCode::InvalidArgument, "bad simulator url '" + options.url + "'");
    }
    origin_ = m[1].str();
    path_ = m[2].matched ? m[2].str() : "/";
  }

  std::string complete(const SimulatorRequest& request) override {
    const std::string body = request.to_json().dump();
    slots_.acquire();
    struct Release {
      std::counting_semaphore<64>& s;
      ~Release() { s.release(); }
    } release{slots_};

    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= options_.retries; ++attempt) {
      httplib::Client client(origin_);
      const auto timeout = std::chrono::duration<double>(options_.timeout_seconds);
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      auto res = client.Post(path_, body, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      return res->body;
    }
    throw Error(ErrorCode::ExternalUnavailable, options_.url + ": " + last_error);
  }

 private:
  HttpSimulatorOptions options_;
  std::string origin_;
  std::string path_;
  std::counting_semaphore<64> slots_;
};

}  // namespace

std::string SimulatorRequest::system_prompt() const {
  std::string out = kSystemPrompt;
  replace_all(out, "<<ERROR_EXAMPLES_SNIPPET>>", kErrorExamples);
  return out;
}

std::string SimulatorRequest::user_prompt() const {
  // Substitute in one pass so placeholder-like text inside a field is left alone.
  static const std::regex placeholder("<<(SYSTEM_AND_TOOLS|DIALOGUE_HISTORY|GROUND_TRUTH_TOOL_CALLS|FAILED_TOOL_CALLS)>>");
  const std::string tmpl = kUserPrompt;
  std::string out;
  std::size_t last = 0;
  for (auto it = std::sregex_iterator(tmpl.begin(), tmpl.end(), placeholder); it != std::sregex_iterator(); ++it) {
    out.append(tmpl, last, static_cast<std::size_t>(it->position()) - last);
    const std::string name = (*it)[1].str();
    if (name == "SYSTEM_AND_TOOLS") out += system_and_tools;
    else if (name == "DIALOGUE_HISTORY") out += dialogue_history;
    else if (name == "GROUND_TRUTH_TOOL_CALLS") out += ground_truth_calls;
    else out += failed_calls;
    last = static_cast<std::size_t>(it->position() + it->length());
  }
  out.append(tmpl, last, std::string::npos);
  return out;
}

nlohmann::json SimulatorRequest::to_json() const {
  return {{"system_and_tools", system_and_tools},
          {"dialogue_history", dialogue_history},
          {"ground_truth_calls", ground_truth_calls},
          {"failed_calls", failed_calls},
          {"messages",
           nlohmann::json::array({{{"role", "system"}, {"content", system_prompt()}},
                                  {{"role", "user"}, {"content", user_prompt()}}})}};
}

SimulatorRequest SimulatorRequest::from_json(const nlohmann::json& j) {
  return {j.at("system_and_tools").get<std::string>(), j.at("dialogue_history").get<std::string>(),
          j.at("ground_truth_calls").get<std::string>(), j.at("failed_calls").get<std::string>()};
}

std::unique_ptr<SimulatorClient> make_http_simulator_client(const HttpSimulatorOptions& options) {
  return std::make_unique<HttpSimulatorClient>(options);
}

}  // namespace fgrpo
