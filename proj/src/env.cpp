#include "fgrpo/env.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "fgrpo/error.hpp"

namespace fgrpo {

namespace {

struct ParamDef {
  std::string name;
  ParamKind kind;
  std::vector<std::string> pool;
};

struct ToolDef {
  std::string name;
  std::vector<std::string> params;
};

struct Domain {
  std::string name;
  std::vector<ParamDef> params;
  std::vector<ToolDef> tools;

  const ParamDef& param(const std::string& n) const {
    for (const auto& p : params) {
      if (p.name == n) return p;
    }
    throw Error(ErrorCode::InvalidArgument, "domain " + name + " has no param " + n);
  }
};

const std::vector<Domain>& domains() {
  static const std::vector<Domain> all = {
      {"ticketing",
       {{"ticket_id", ParamKind::Int, {"101", "102", "117", "123", "140", "152", "168"}},
        {"title", ParamKind::String, {"login bug", "slow dashboard", "broken export", "missing invoice", "crash on save", "typo in footer"}},
        {"priority", ParamKind::Enum, {"LOW", "MEDIUM", "HIGH", "URGENT"}},
        {"status", ParamKind::Enum, {"OPEN", "CLOSED", "PENDING", "ARCHIVED"}},
        {"assignee", ParamKind::String, {"alice", "bob", "carol", "dave", "erin", "frank"}},
        {"resolution", ParamKind::String, {"fixed", "duplicate", "wont fix", "cannot reproduce", "by design"}},
        {"notify", ParamKind::Bool, {"true", "false"}},
        {"comment", ParamKind::String, {"see logs", "customer called", "needs review", "blocked upstream", "retest please"}}},
       {{"create_ticket", {"title", "priority", "notify"}},
        {"update_ticket", {"ticket_id", "status"}},
        {"assign_ticket", {"ticket_id", "assignee"}},
        {"close_ticket", {"ticket_id", "resolution"}},
        {"get_ticket", {"ticket_id"}},
        {"add_comment", {"ticket_id", "comment"}}}},
      {"smart_home",
       {{"device", ParamKind::Enum, {"LIGHT", "THERMOSTAT", "FAN", "BLINDS", "SPEAKER"}},
        {"room", ParamKind::String, {"kitchen", "bedroom", "office", "garage", "hallway", "patio"}},
        {"mode", ParamKind::Enum, {"ON", "OFF", "AUTO", "ECO"}},
        {"level", ParamKind::Int, {"10", "25", "50", "75", "100"}},
        {"temperature", ParamKind::Float, {"18.5", "20.0", "21.5", "23.0", "25.5"}},
        {"scene", ParamKind::String, {"movie night", "morning", "away", "dinner", "reading"}}},
       {{"set_device", {"device", "room", "mode"}},
        {"set_level", {"device", "room", "level"}},
        {"set_temperature", {"room", "temperature"}},
        {"activate_scene", {"scene"}},
        {"get_device_state", {"device", "room"}}}},
      {"file_system",
       {{"path", ParamKind::String, {"/home/docs", "/tmp/cache", "/var/log", "/srv/data", "/home/pics"}},
        {"file_name", ParamKind::String, {"report.txt", "notes.md", "data.csv", "image.png", "draft.docx"}},
        {"destination", ParamKind::String, {"/backup", "/home/archive", "/mnt/usb", "/srv/share", "/tmp/out"}},
        {"overwrite", ParamKind::Bool, {"true", "false"}},
        {"recursive", ParamKind::Bool, {"true", "false"}},
        {"pattern", ParamKind::String, {"*.log", "*.txt", "error", "TODO", "warning"}}},
       {{"cd", {"path"}},
        {"mkdir", {"path"}},
        {"copy_file", {"file_name", "destination", "overwrite"}},
        {"move_file", {"file_name", "destination"}},
        {"delete_file", {"file_name", "recursive"}},
        {"grep", {"file_name", "pattern"}}}},
      {"vehicle",
       {{"zone", ParamKind::Enum, {"DRIVER", "PASSENGER", "REAR", "ALL"}},
        {"temperature", ParamKind::Float, {"18.0", "19.5", "21.0", "22.5", "24.0"}},
        {"fan_speed", ParamKind::Int, {"1", "2", "3", "4", "5"}},
        {"locked", ParamKind::Bool, {"true", "false"}},
        {"destination", ParamKind::String, {"Berlin", "Lyon", "Osaka", "Denver", "Porto"}},
        {"speed_limit", ParamKind::Int, {"50", "80", "100", "120", "130"}},
        {"unit", ParamKind::Enum, {"KMH", "MPH"}}},
       {{"set_climate", {"zone", "temperature", "fan_speed"}},
        {"lock_doors", {"locked"}},
        {"navigate", {"destination"}},
        {"set_speed_limit", {"speed_limit", "unit"}},
        {"get_vehicle_status", {"zone"}}}},
      {"banking",
       {{"from_account", ParamKind::String, {"checking", "savings", "brokerage", "travel"}},
        {"to_account", ParamKind::String, {"checking", "savings", "brokerage", "travel"}},
        {"account", ParamKind::String, {"checking", "savings", "brokerage", "travel"}},
        {"amount", ParamKind::Float, {"25.0", "100.0", "250.5", "999.99", "40.0"}},
        {"currency", ParamKind::Enum, {"USD", "EUR", "GBP", "JPY"}},
        {"payee", ParamKind::String, {"landlord", "utility co", "gym", "phone carrier", "insurer"}},
        {"recurring", ParamKind::Bool, {"true", "false"}}},
       {{"transfer_funds", {"from_account", "to_account", "amount", "currency"}},
        {"get_balance", {"account"}},
        {"pay_bill", {"payee", "amount", "recurring"}},
        {"exchange", {"amount", "currency"}}}},
  };
  return all;
}

Value parse_pool_value(const std::string& s, ParamKind kind) {
  switch (kind) {
    case ParamKind::Int: return Value{static_cast<std::int64_t>(std::stoll(s))};
    case ParamKind::Float: return Value{std::stod(s)};
    case ParamKind::Bool: return Value{s == "true"};
    default: return Value{s};
  }
}

Value ill_typed_value(ParamKind kind) {
  switch (kind) {
    case ParamKind::Int:
    case ParamKind::Float:
    case ParamKind::Bool: return Value{std::string("unknown")};
    case ParamKind::String: return Value{std::int64_t{0}};
    case ParamKind::Enum: return Value{std::string("INVALID")};
  }
  return Value{std::string("unknown")};
}

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

bool coin(double p, std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

int uniform_int(int lo, int hi, std::mt19937_64& rng) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::string describe_call(const ToolCall& call) {
  std::string out = call.tool_name;
  std::replace(out.begin(), out.end(), '_', ' ');
  bool first = true;
  for (const auto& [k, v] : call.args) {
    out += first ? " with " : ", ";
    out += k + " " + value_to_string(v);
    first = false;
  }
  return out;
}

Task generate_task(std::uint64_t seed, int index, const TaskGenOptions& opt) {
  static const std::vector<std::string> families = {"state", "enum", "multi"};
  std::mt19937_64 rng(seed);
  const Domain& domain = pick(domains(), rng);

  Task task;
  char id[32];
  std::snprintf(id, sizeof(id), "q%04d", index);
  task.query_id = id;
  task.family = families[static_cast<std::size_t>(index) % families.size()];
  task.max_retries = opt.max_retries;

  std::vector<ToolDef> tools = domain.tools;
  std::shuffle(tools.begin(), tools.end(), rng);
  tools.resize(std::min<std::size_t>(tools.size(), static_cast<std::size_t>(std::max(1, opt.num_tools))));

  std::map<std::string, ParamKind> kind_of;  // one kind per param name within a task
  for (const auto& tool : tools) {
    for (const auto& pname : tool.params) {
      if (kind_of.count(pname)) continue;
      const ParamDef& def = domain.param(pname);
      ParamKind kind = def.kind;
      if (kind != ParamKind::Enum && def.pool.size() >= 2 && coin(opt.enum_fraction, rng)) kind = ParamKind::Enum;
      kind_of[pname] = kind;
    }
  }
  if (task.family == "enum") {
    // every tool of an enum-family task carries at least one enum-constrained parameter
    for (const auto& tool : tools) {
      bool has_enum = std::any_of(tool.params.begin(), tool.params.end(),
                                  [&](const std::string& n) { return kind_of[n] == ParamKind::Enum; });
      if (!has_enum) kind_of[tool.params.front()] = ParamKind::Enum;
    }
  }

  for (const auto& tool : tools) {
    ToolSchema schema{tool.name, {}};
    for (const auto& pname : tool.params) {
      ParamSpec spec{pname, kind_of[pname], true, {}};
      if (spec.kind == ParamKind::Enum) spec.allowed_values = domain.param(pname).pool;
      if (tool.params.size() > 1 && coin(opt.optional_fraction, rng)) spec.required = false;
      schema.params.push_back(std::move(spec));
    }
    task.library.push_back(std::move(schema));
  }

  // Ground truth. In the "state" family a parameter keeps its value across turns.
  std::map<std::string, Value> state;
  auto draw_value = [&](const ParamSpec& spec) {
    const auto& pool = domain.param(spec.name).pool;
    ParamKind parse_kind = spec.kind == ParamKind::Enum ? ParamKind::String : spec.kind;
    if (task.family == "state") {
      auto it = state.find(spec.name);
      if (it != state.end()) return it->second;
      return state[spec.name] = parse_pool_value(pick(pool, rng), parse_kind);
    }
    return parse_pool_value(pick(pool, rng), parse_kind);
  };
  auto draw_call = [&](const ToolSchema& schema) {
    ToolCall call{schema.name, {}};
    for (const auto& spec : schema.params) {
      if (spec.required || coin(0.5, rng)) call.args[spec.name] = draw_value(spec);
    }
    return call;
  };

  int num_turns = 1;
  int calls_per_turn = 1;
  if (task.family == "state") {
    num_turns = uniform_int(2, std::max(2, opt.max_turns), rng);
  } else if (task.family == "enum") {
    num_turns = uniform_int(1, std::max(1, opt.max_turns), rng);
  } else {
    num_turns = uniform_int(1, std::min(2, std::max(1, opt.max_turns)), rng);
    calls_per_turn = task.library.size() >= 2 ? 2 : 1;
  }
  std::size_t previous = task.library.size();
  for (int k = 0; k < num_turns; ++k) {
    Turn turn;
    std::string request;
    for (int c = 0; c < calls_per_turn; ++c) {
      std::size_t tool = 0;
      do {
        tool = std::uniform_int_distribution<std::size_t>(0, task.library.size() - 1)(rng);
      } while (task.library.size() > 1 && tool == previous);
      previous = tool;
      turn.gt_calls.push_back(draw_call(task.library[tool]));
      request += (c ? ", then " : "Please ") + describe_call(turn.gt_calls.back());
    }
    turn.user_request = request + ".";
    task.turns.push_back(std::move(turn));
  }

  // Candidate tables: every ground-truth value, pool distractors, then format-breaking choices.
  const int total = std::clamp(opt.candidates_per_param, 3, 8);
  for (const auto& schema : task.library) {
    for (const auto& spec : schema.params) {
      std::vector<std::optional<Value>> cands;
      auto add = [&](const std::optional<Value>& v) {
        if (std::find(cands.begin(), cands.end(), v) == cands.end()) cands.push_back(v);
      };
      for (const auto& turn : task.turns) {
        for (const auto& call : turn.gt_calls) {
          if (call.tool_name != schema.name) continue;
          auto it = call.args.find(spec.name);
          add(it == call.args.end() ? std::optional<Value>{} : std::optional<Value>{it->second});
        }
      }
      std::vector<std::optional<Value>> extras;
      if (!spec.required) extras.emplace_back(std::nullopt);
      if (opt.format_noise) {
        if (spec.required) extras.emplace_back(std::nullopt);
        extras.emplace_back(ill_typed_value(spec.kind));
      }
      const int valid_target = std::max(2, total - static_cast<int>(extras.size()));
      auto pool = domain.param(spec.name).pool;
      std::shuffle(pool.begin(), pool.end(), rng);
      ParamKind parse_kind = spec.kind == ParamKind::Enum ? ParamKind::String : spec.kind;
      for (const auto& s : pool) {
        if (static_cast<int>(cands.size()) >= valid_target) break;
        add(parse_pool_value(s, parse_kind));
      }
      for (const auto& e : extras) add(e);
      std::shuffle(cands.begin(), cands.end(), rng);
      task.distractors[schema.name][spec.name] = std::move(cands);
    }
  }
  task.check();
  return task;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void Task::check() const {
  for (const auto& schema : library) {
    schema.check();
    if (schema.params.empty()) throw Error(ErrorCode::InvalidArgument, "tool '" + schema.name + "' has no params");
    for (const auto& spec : schema.params) {
      auto t = distractors.find(schema.name);
      if (t == distractors.end() || !t->second.count(spec.name) || t->second.at(spec.name).empty()) {
        throw Error(ErrorCode::InvalidArgument, "no candidates for " + schema.name + "." + spec.name);
      }
    }
  }
  if (turns.empty()) throw Error(ErrorCode::InvalidArgument, "task " + query_id + " has no turns");
  for (const auto& turn : turns) {
    if (turn.gt_calls.empty()) throw Error(ErrorCode::InvalidArgument, "turn without ground-truth calls");
    std::vector<Violation> violations;
    for (const auto& call : turn.gt_calls) {
      validate_call(call, library, violations);
      if (!violations.empty()) {
        throw Error(ErrorCode::InvalidArgument, "ground truth fails validation: " + violations.front().message);
      }
      const auto& table = distractors.at(call.tool_name);
      for (const auto& spec : find_tool(library, call.tool_name)->params) {
        auto it = call.args.find(spec.name);
        std::optional<Value> v = it == call.args.end() ? std::optional<Value>{} : std::optional<Value>{it->second};
        const auto& cands = table.at(spec.name);
        if (std::find(cands.begin(), cands.end(), v) == cands.end()) {
          throw Error(ErrorCode::InvalidArgument, "ground-truth value missing from candidates of " + spec.name);
        }
      }
    }
  }
  if (max_retries < 1) throw Error(ErrorCode::InvalidArgument, "max_retries must be >= 1");
}

nlohmann::json task_to_json(const Task& task) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& turn : task.turns) {
    nlohmann::json calls = nlohmann::json::array();
    for (const auto& c : turn.gt_calls) calls.push_back(call_to_json(c));
    turns.push_back({{"user_request", turn.user_request}, {"gt_calls", std::move(calls)}});
  }
  nlohmann::json distractors = nlohmann::json::object();
  for (const auto& [tool, params] : task.distractors) {
    for (const auto& [param, cands] : params) {
      auto jc = nlohmann::json::array();
      for (const auto& c : cands) jc.push_back(c ? value_to_json(*c) : nlohmann::json(nullptr));
      distractors[tool][param] = std::move(jc);
    }
  }
  return {{"query_id", task.query_id},      {"family", task.family},
          {"library", library_to_json(task.library)}, {"turns", std::move(turns)},
          {"distractors", std::move(distractors)},    {"max_retries", task.max_retries}};
}

Task task_from_json(const nlohmann::json& j) {
  Task task;
  task.query_id = j.at("query_id").get<std::string>();
  task.family = j.value("family", std::string{});
  task.library = library_from_json(j.at("library"));
  for (const auto& jt : j.at("turns")) {
    Turn turn;
    turn.user_request = jt.at("user_request").get<std::string>();
    for (const auto& jc : jt.at("gt_calls")) turn.gt_calls.push_back(call_from_json(jc));
    task.turns.push_back(std::move(turn));
  }
  for (const auto& [tool, params] : j.at("distractors").items()) {
    for (const auto& [param, jc] : params.items()) {
      auto& cands = task.distractors[tool][param];
      for (const auto& c : jc) {
        if (c.is_null()) {
          cands.emplace_back(std::nullopt);
        } else {
          auto v = value_from_json(c);
          if (!v) throw Error(ErrorCode::InvalidArgument, "non-scalar candidate");
          cands.emplace_back(std::move(*v));
        }
      }
    }
  }
  task.max_retries = j.value("max_retries", 20);
  task.check();
  return task;
}

void save_tasks_jsonl(const std::vector<Task>& tasks, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  for (const auto& t : tasks) out << task_to_json(t).dump() << '\n';
}

std::vector<Task> load_tasks_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::vector<Task> tasks;
  std::string line;
  while (std::getline(in, line)) {
    if (whitespace_token_count(line) == 0) continue;
    tasks.push_back(task_from_json(nlohmann::json::parse(line)));
  }
  return tasks;
}

Digest tasks_digest(const std::vector<Task>& tasks) {
  Digest h = fnv1a64("");
  for (const auto& t : tasks) h = fnv1a64(task_to_json(t).dump() + "\n", h);
  return h;
}

std::vector<Task> generate_tasks(std::uint64_t seed, int n, const TaskGenOptions& options) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "need at least one task");
  std::vector<Task> tasks;
  for (int i = 0; i < n; ++i) tasks.push_back(generate_task(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(i))), i, options));
  return tasks;
}

Vocabulary build_vocabulary(const Task& task) {
  Vocabulary v;
  v.library = task.library;
  for (const auto& schema : task.library) {
    std::vector<std::vector<std::optional<Value>>> tool;
    for (const auto& spec : schema.params) tool.push_back(task.distractors.at(schema.name).at(spec.name));
    v.candidates.push_back(std::move(tool));
  }
  return v;
}

std::string instance_query_id(const Task& task, std::size_t turn, std::size_t position) {
  return task.query_id + "/" + std::to_string(turn) + "/" + std::to_string(position);
}

std::vector<DecisionInstance> enumerate_instances(const std::vector<Task>& tasks) {
  std::vector<DecisionInstance> out;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (std::size_t k = 0; k < tasks[t].turns.size(); ++k) {
      for (std::size_t c = 0; c < tasks[t].turns[k].gt_calls.size(); ++c) {
        out.push_back({t, k, c, instance_query_id(tasks[t], k, c)});
      }
    }
  }
  return out;
}

const ToolCall& instance_gt(const std::vector<Task>& tasks, const DecisionInstance& inst) {
  return tasks.at(inst.task).turns.at(inst.turn).gt_calls.at(inst.position);
}

DialogueContext render_context(const Task& task, std::size_t turn, std::size_t position) {
  DialogueContext x;
  x.system_and_tools = "You are an assistant that completes requests by calling tools. Emit calls as one JSON object "
                       "per line inside a ```tool_calls block.\nTools: " +
                       library_to_json(task.library).dump();
  std::string& h = x.dialogue_history;
  for (std::size_t k = 0; k <= turn && k < task.turns.size(); ++k) {
    h += "user: " + task.turns[k].user_request + "\n";
    const std::size_t done = k < turn ? task.turns[k].gt_calls.size() : position;
    for (std::size_t c = 0; c < done; ++c) {
      h += "assistant: " + serialize_call(task.turns[k].gt_calls[c], find_tool(task.library, task.turns[k].gt_calls[c].tool_name)) + "\n";
      h += "tool: OK\n";
    }
  }
  return x;
}

PolicyContext base_policy_context(const Task& task, const DecisionInstance& inst) {
  return PolicyContext{task.query_id, inst.query_id, false, "", {}};
}

PolicyContext feedback_policy_context(const Task& task, const DecisionInstance& inst, std::string_view feedback,
                                      std::vector<Decision> previous) {
  return PolicyContext{task.query_id, inst.query_id, true, feedback_hint(feedback), std::move(previous)};
}

std::vector<Decision> attempt_path(const Vocabulary& vocab, const Trajectory& t) {
  try {
    return decode_trajectory(vocab, t);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Unrepresentable) throw;
    return {};
  }
}

PolicyParams make_initial_policy(const std::vector<Task>& tasks) {
  PolicyParams p;
  for (const auto& t : tasks) p.add_vocabulary(t.query_id, build_vocabulary(t));
  return p;
}

nlohmann::json EpisodeLog::to_json() const {
  auto attempts_json = nlohmann::json::array();
  for (const auto& a : attempts) {
    attempts_json.push_back({{"step", a.step},
                             {"turn", a.turn},
                             {"position", a.position},
                             {"call", a.call},
                             {"outcome", a.ok ? "OK" : "ERROR"},
                             {"message", a.message}});
  }
  return {{"query_id", query_id}, {"success", success}, {"had_error", had_error}, {"attempts", std::move(attempts_json)}};
}

Episode::Episode(const Task& task) : task_(&task) { log_.query_id = task.query_id; }

Outcome Episode::fail(std::string call_text, std::string message) {
  log_.attempts.push_back({static_cast<long>(log_.attempts.size()), turn_, position_, std::move(call_text), false, message});
  log_.had_error = true;
  if (++errors_in_turn_ >= task_->max_retries) {
    done_ = true;
    exhausted_ = true;
    log_.success = false;
  }
  return {false, std::move(message)};
}

Outcome Episode::step(const Trajectory& t) {
  if (done_) {
    if (exhausted_) throw Error(ErrorCode::RetryExhausted, "retry budget exhausted in turn " + std::to_string(turn_));
    throw Error(ErrorCode::InvalidArgument, "episode already finished");
  }
  const FormatReport report = validate_format(t, task_->library);
  if (!report.valid) {
    return fail(t.calls.empty() ? t.raw_text : serialize_calls(t.calls), format_feedback(report));
  }
  for (const auto& call : t.calls) {
    if (done_) break;
    const ToolCall& gt = task_->turns[turn_].gt_calls[position_];
    if (call != gt) return fail(serialize_call(call), rule_feedback({call}, {gt}, task_->library));
    log_.attempts.push_back({static_cast<long>(log_.attempts.size()), turn_, position_, serialize_call(call), true, ""});
    if (++position_ == task_->turns[turn_].gt_calls.size()) {
      position_ = 0;
      errors_in_turn_ = 0;
      if (++turn_ == task_->turns.size()) {
        done_ = true;
        log_.success = true;
      }
    }
  }
  return {true, ""};
}

Outcome Episode::step(const ToolCall& call) {
  Trajectory t;
  t.query_id = task_->query_id;
  t.calls = {call};
  t.raw_text = render_call_block(t.calls, &task_->library);
  t.length_tokens = whitespace_token_count(t.raw_text);
  return step(t);
}

EpisodeClass evaluate_episode(const EpisodeLog& log) {
  return {log.success, log.success && !log.had_error, log.success && log.had_error};
}

EpisodeLog run_policy_episode(const PolicyParams& p, const Task& task, const SamplingConfig& cfg, std::mt19937_64& rng) {
  Episode episode(task);
  const Vocabulary& vocab = p.vocabulary(task.query_id);
  std::string feedback;
  std::vector<Decision> previous;
  while (!episode.done()) {
    DecisionInstance inst{0, episode.turn(), episode.position(), instance_query_id(task, episode.turn(), episode.position())};
    PolicyContext ctx =
        feedback.empty() ? base_policy_context(task, inst) : feedback_policy_context(task, inst, feedback, previous);
    Trajectory t = sample_trajectory(p, ctx, cfg, rng);
    Outcome out = episode.step(t);
    feedback = out.ok ? std::string{} : out.message;
    previous = out.ok ? std::vector<Decision>{} : attempt_path(vocab, t);
  }
  return episode.log();
}

}  // namespace fgrpo
