#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fgrpo/policy.hpp"
#include "fgrpo/reward.hpp"
#include "fgrpo/toolcall.hpp"

namespace fgrpo {

enum class FeedbackBackend { DeterministicFormat, RuleBasedSemantic, StaticGeneric, ExternalSimulator };

const char* to_string(FeedbackBackend backend);
FeedbackBackend feedback_backend_from_string(std::string_view s);

inline constexpr std::string_view kFeedbackPrefix = "ERROR: ";
inline constexpr std::string_view kStaticFeedback =
    "ERROR: Function call failed. Please verify your output format, function name, required parameters, and "
    "parameter values are correct.";

//! The original multi-turn input the policy saw.
struct DialogueContext {
  std::string system_and_tools;
  std::string dialogue_history;

  bool operator==(const DialogueContext&) const = default;
};

std::string render_dialogue_context(const DialogueContext& x);

//! True iff the trajectory belongs to the error set: format failure, or correctness below threshold.
bool is_error(const RewardBreakdown& r, double delta_corr);
std::vector<std::size_t> identify_errors(const std::vector<RewardBreakdown>& rewards, double delta_corr);

//! Deterministic parser-style message for the first violation. Throws on a valid report.
std::string format_feedback(const FormatReport& report);

//! Names the first critical difference (tool, then parameters in schema order) without
//! reproducing the whole target call.
std::string rule_feedback(const std::vector<ToolCall>& failed, const std::vector<ToolCall>& gt,
                          const ToolLibrary& library);

//! The slot a feedback string points at: a parameter name, "@tool", "@format", "@sequence", or "".
std::string feedback_hint(std::string_view feedback);

//! Body sent to an external error simulator; fields mirror the simulator prompt placeholders.
struct SimulatorRequest {
  std::string system_and_tools;
  std::string dialogue_history;
  std::string ground_truth_calls;
  std::string failed_calls;

  std::string system_prompt() const;
  std::string user_prompt() const;
  nlohmann::json to_json() const;
  static SimulatorRequest from_json(const nlohmann::json& j);
};

class SimulatorClient {
 public:
  virtual ~SimulatorClient() = default;
  //! Returns the raw reply; throws ExternalUnavailable when the service cannot be reached.
  virtual std::string complete(const SimulatorRequest& request) = 0;
};

struct HttpSimulatorOptions {
  std::string url = "http://127.0.0.1:8080/simulate";
  double timeout_seconds = 10.0;
  int retries = 2;
  int max_in_flight = 4;
};

//! POSTs SimulatorRequest::to_json() and reads the reply body as plain text.
std::unique_ptr<SimulatorClient> make_http_simulator_client(const HttpSimulatorOptions& options);

//! Checks the "ERROR: " contract of a remote reply and trims surrounding whitespace.
std::string validate_remote_reply(std::string_view reply);

struct FeedbackSynthesizer {
  FeedbackBackend backend = FeedbackBackend::RuleBasedSemantic;
  SimulatorClient* client = nullptr;   // required for ExternalSimulator
  bool fallback_to_rule = true;        // on ExternalUnavailable

  //! Feedback for a semantically wrong but well-formed trajectory.
  std::string semantic(const DialogueContext& x, const Trajectory& tau_err, const std::vector<ToolCall>& gt,
                       const ToolLibrary& library) const;
  //! Routes format failures to format_feedback and everything else to semantic().
  std::string operator()(const DialogueContext& x, const Trajectory& tau_err, const std::vector<ToolCall>& gt,
                         const ToolLibrary& library) const;
};

std::string semantic_feedback(const DialogueContext& x, const Trajectory& tau_err, const std::vector<ToolCall>& gt,
                              const ToolLibrary& library, FeedbackBackend backend, SimulatorClient* client = nullptr,
                              bool fallback_to_rule = true);

//! The corrective context [x; tau_err; f] plus what is needed to resample from it.
struct CorrectiveSample {
  std::string query_id;
  std::string vocab_id;
  std::size_t instance = 0;  // index of the originating decision instance
  DialogueContext base_context;
  Trajectory tau_err;
  std::string feedback;
  Digest key = 0;
  long created_step = 0;
  std::vector<Decision> previous;  // tau_err as a grammar path, when representable

  PolicyContext policy_context() const;
  nlohmann::json to_json() const;
};

CorrectiveSample build_corrective_context(std::string query_id, DialogueContext x, Trajectory tau_err,
                                          std::string feedback, long created_step = 0);

//! Length-prefixed segments, so any content round-trips.
std::string render_corrective_context(const CorrectiveSample& s);

struct CorrectiveSegments {
  std::string context;
  std::string attempt;
  std::string feedback;
};

CorrectiveSegments parse_corrective_context(std::string_view text);

}  // namespace fgrpo
