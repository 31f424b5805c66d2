#include "fgrpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "fgrpo/error.hpp"
#include "fgrpo/math.hpp"

namespace fgrpo {

namespace {

constexpr const char* kCheckpointFormat = "fgrpo-policy";
constexpr int kCheckpointVersion = 1;

std::size_t index_of_tool(const Vocabulary& vocab, const std::string& name) {
  for (std::size_t i = 0; i < vocab.library.size(); ++i) {
    if (vocab.library[i].name == name) return i;
  }
  throw Error(ErrorCode::Unrepresentable, "tool '" + name + "' is outside the vocabulary");
}

Eigen::VectorXd to_vector(const nlohmann::json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

std::size_t sample_index(const Eigen::VectorXd& log_probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double u = uniform(rng);
  double acc = 0.0;
  std::size_t last_valid = 0;
  for (Eigen::Index i = 0; i < log_probs.size(); ++i) {
    if (!std::isfinite(log_probs(i))) continue;
    acc += std::exp(log_probs(i));
    last_valid = static_cast<std::size_t>(i);
    if (u < acc) return last_valid;
  }
  return last_valid;
}

// Row of the copy bucket and the previous choice that a slot's copy feature points at.
struct CopyFeature {
  std::size_t row;
  std::size_t choice;
};

std::optional<CopyFeature> copy_feature(const Vocabulary& vocab, const PolicyContext& ctx, std::size_t slot) {
  if (ctx.previous.empty()) return std::nullopt;
  for (const auto& d : ctx.previous) {
    if (d.slot != slot) continue;
    bool hinted = false;
    if (slot == 0) {
      hinted = ctx.hint == "@tool";
    } else {
      const std::size_t tool = ctx.previous.front().choice;
      for (std::size_t j = 0; j < vocab.candidates.at(tool).size(); ++j) {
        if (vocab.slot_index(tool, j) == slot) hinted = vocab.library[tool].params[j].name == ctx.hint;
      }
    }
    if (d.choice >= vocab.slot_size(slot)) throw Error(ErrorCode::InvalidArgument, "previous choice out of range");
    return CopyFeature{hinted ? 1u : 0u, d.choice};
  }
  return std::nullopt;
}

}  // namespace

std::size_t Vocabulary::num_slots() const {
  std::size_t n = 1;
  for (const auto& tool : candidates) n += tool.size();
  return n;
}

std::size_t Vocabulary::slot_index(std::size_t tool, std::size_t param) const {
  std::size_t slot = 1;
  for (std::size_t t = 0; t < tool; ++t) slot += candidates[t].size();
  return slot + param;
}

std::size_t Vocabulary::slot_size(std::size_t slot) const {
  if (slot == 0) return library.size();
  std::size_t s = slot - 1;
  for (const auto& tool : candidates) {
    if (s < tool.size()) return tool[s].size();
    s -= tool.size();
  }
  throw Error(ErrorCode::InvalidArgument, "slot index out of range");
}

void Vocabulary::check() const {
  if (library.empty()) throw Error(ErrorCode::InvalidArgument, "vocabulary needs at least one tool");
  if (candidates.size() != library.size()) throw Error(ErrorCode::InvalidArgument, "candidate table/library mismatch");
  for (std::size_t t = 0; t < library.size(); ++t) {
    if (candidates[t].size() != library[t].params.size()) {
      throw Error(ErrorCode::InvalidArgument, "candidate table/params mismatch for tool '" + library[t].name + "'");
    }
    for (const auto& choices : candidates[t]) {
      if (choices.empty()) throw Error(ErrorCode::InvalidArgument, "every slot needs at least one choice");
    }
  }
}

nlohmann::json vocabulary_to_json(const Vocabulary& v) {
  auto cands = nlohmann::json::array();
  for (const auto& tool : v.candidates) {
    auto jt = nlohmann::json::array();
    for (const auto& choices : tool) {
      auto jc = nlohmann::json::array();
      for (const auto& c : choices) jc.push_back(c ? value_to_json(*c) : nlohmann::json(nullptr));
      jt.push_back(std::move(jc));
    }
    cands.push_back(std::move(jt));
  }
  return {{"library", library_to_json(v.library)}, {"candidates", std::move(cands)}};
}

Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  Vocabulary v;
  v.library = library_from_json(j.at("library"));
  for (const auto& jt : j.at("candidates")) {
    std::vector<std::vector<std::optional<Value>>> tool;
    for (const auto& jc : jt) {
      std::vector<std::optional<Value>> choices;
      for (const auto& c : jc) {
        if (c.is_null()) {
          choices.emplace_back(std::nullopt);
        } else {
          auto value = value_from_json(c);
          if (!value) throw Error(ErrorCode::InvalidArgument, "non-scalar candidate value");
          choices.emplace_back(std::move(*value));
        }
      }
      tool.push_back(std::move(choices));
    }
    v.candidates.push_back(std::move(tool));
  }
  v.check();
  return v;
}

void PolicyParams::add_vocabulary(const std::string& id, Vocabulary vocab) {
  vocab.check();
  vocabs_[id] = std::make_shared<const Vocabulary>(std::move(vocab));
}

const Vocabulary& PolicyParams::vocabulary(const std::string& id) const {
  auto it = vocabs_.find(id);
  if (it == vocabs_.end()) throw Error(ErrorCode::InvalidArgument, "unknown vocabulary '" + id + "'");
  return *it->second;
}

bool PolicyParams::has_vocabulary(const std::string& id) const { return vocabs_.count(id) != 0; }

std::vector<std::string> PolicyParams::bucket_keys(const PolicyContext& ctx) {
  std::vector<std::string> keys{"q|" + ctx.query_id};
  if (ctx.has_feedback) {
    keys.push_back("f|" + ctx.query_id);
    if (!ctx.hint.empty()) keys.push_back("h|" + ctx.query_id + "|" + ctx.hint);
  }
  return keys;
}

Eigen::VectorXd PolicyParams::slot_logits(const PolicyContext& ctx, std::size_t slot) const {
  const auto& vocab = vocabulary(ctx.vocab_id);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab.slot_size(slot)));
  for (const auto& key : bucket_keys(ctx)) {
    if (const Bucket* b = find_bucket(key)) z += b->rows[slot];
  }
  if (auto f = copy_feature(vocab, ctx, slot)) {
    if (const Bucket* c = find_bucket(kCopyBucket)) z(static_cast<Eigen::Index>(f->choice)) += c->rows[f->row](0);
  }
  return z;
}

void PolicyParams::accumulate(const PolicyContext& ctx, std::size_t slot, const Eigen::VectorXd& delta,
                              double scale) {
  for (const auto& key : bucket_keys(ctx)) bucket(key, ctx.vocab_id).rows[slot] += scale * delta;
  if (auto f = copy_feature(vocabulary(ctx.vocab_id), ctx, slot)) {
    bucket(kCopyBucket, "").rows[f->row](0) += scale * delta(static_cast<Eigen::Index>(f->choice));
  }
}

PolicyParams::Bucket& PolicyParams::bucket(const std::string& key, const std::string& vocab_id) {
  auto it = buckets_.find(key);
  if (it != buckets_.end()) {
    if (it->second.vocab_id != vocab_id) {
      throw Error(ErrorCode::InvalidArgument, "bucket '" + key + "' belongs to vocabulary '" + it->second.vocab_id + "'");
    }
    return it->second;
  }
  if (key == kCopyBucket) {
    if (!vocab_id.empty()) throw Error(ErrorCode::InvalidArgument, "the copy bucket has no vocabulary");
    return buckets_.emplace(key, Bucket{"", {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)}}).first->second;
  }
  const auto& vocab = vocabulary(vocab_id);
  Bucket b{vocab_id, {}};
  for (std::size_t s = 0; s < vocab.num_slots(); ++s) {
    b.rows.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab.slot_size(s))));
  }
  return buckets_.emplace(key, std::move(b)).first->second;
}

const PolicyParams::Bucket* PolicyParams::find_bucket(const std::string& key) const {
  auto it = buckets_.find(key);
  return it == buckets_.end() ? nullptr : &it->second;
}

PolicyParams PolicyParams::zeros_like() const {
  PolicyParams out;
  out.vocabs_ = vocabs_;
  return out;
}

void PolicyParams::axpy(double a, const PolicyParams& other) {
  for (const auto& [key, ob] : other.buckets_) {
    auto& b = bucket(key, ob.vocab_id);
    for (std::size_t s = 0; s < b.rows.size(); ++s) b.rows[s] += a * ob.rows[s];
  }
}

double PolicyParams::squared_norm() const {
  double acc = 0.0;
  for (const auto& [key, b] : buckets_) {
    for (const auto& row : b.rows) acc += row.squaredNorm();
  }
  return acc;
}

bool PolicyParams::all_finite() const {
  for (const auto& [key, b] : buckets_) {
    for (const auto& row : b.rows) {
      if (!row.allFinite()) return false;
    }
  }
  return true;
}

std::size_t PolicyParams::num_parameters() const {
  std::size_t n = 0;
  for (const auto& [key, b] : buckets_) {
    for (const auto& row : b.rows) n += static_cast<std::size_t>(row.size());
  }
  return n;
}

nlohmann::json PolicyParams::to_json() const {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  auto& vocabs = j["vocabularies"] = nlohmann::json::object();
  for (const auto& [id, v] : vocabs_) vocabs[id] = vocabulary_to_json(*v);
  auto& buckets = j["buckets"] = nlohmann::json::object();
  for (const auto& [key, b] : buckets_) {
    auto rows = nlohmann::json::array();
    for (const auto& row : b.rows) rows.push_back(std::vector<double>(row.data(), row.data() + row.size()));
    buckets[key] = {{"vocab", b.vocab_id}, {"rows", std::move(rows)}};
  }
  return j;
}

PolicyParams PolicyParams::from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != kCheckpointFormat) {
    throw Error(ErrorCode::InvalidArgument, "not a policy checkpoint");
  }
  if (j.value("version", 0) != kCheckpointVersion) {
    throw Error(ErrorCode::InvalidArgument, "unsupported checkpoint version");
  }
  PolicyParams p;
  for (const auto& [id, jv] : j.at("vocabularies").items()) p.add_vocabulary(id, vocabulary_from_json(jv));
  for (const auto& [key, jb] : j.at("buckets").items()) {
    auto& b = p.bucket(key, jb.at("vocab").get<std::string>());
    const auto& rows = jb.at("rows");
    if (rows.size() != b.rows.size()) throw Error(ErrorCode::InvalidArgument, "bucket '" + key + "' has wrong shape");
    for (std::size_t s = 0; s < rows.size(); ++s) {
      auto v = to_vector(rows[s]);
      if (v.size() != b.rows[s].size()) throw Error(ErrorCode::InvalidArgument, "bucket '" + key + "' has wrong shape");
      b.rows[s] = std::move(v);
    }
  }
  return p;
}

void PolicyParams::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out << to_json().dump() << '\n';
}

PolicyParams PolicyParams::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return from_json(nlohmann::json::parse(in));
}

// Absent buckets compare equal to all-zero ones.
bool PolicyParams::operator==(const PolicyParams& other) const {
  auto covered = [](const PolicyParams& a, const PolicyParams& b) {
    for (const auto& [key, ba] : a.buckets_) {
      const Bucket* bb = b.find_bucket(key);
      for (std::size_t s = 0; s < ba.rows.size(); ++s) {
        if (bb ? ba.rows[s] != bb->rows[s] : !ba.rows[s].isZero(0.0)) return false;
      }
    }
    return true;
  };
  return covered(*this, other) && covered(other, *this);
}

Eigen::VectorXd sampling_log_probs(const Eigen::VectorXd& logits, const SamplingConfig& cfg) {
  if (!(cfg.temperature > 0)) throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
  if (cfg.top_k < 1) throw Error(ErrorCode::InvalidArgument, "top_k must be >= 1");
  Eigen::VectorXd z = logits / cfg.temperature;
  const auto n = z.size();
  if (cfg.top_k < n) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return z(a) > z(b); });
    for (std::size_t r = static_cast<std::size_t>(cfg.top_k); r < order.size(); ++r) {
      z(order[r]) = -std::numeric_limits<double>::infinity();
    }
  }
  return log_softmax(z);
}

std::vector<Decision> decode_trajectory(const Vocabulary& vocab, const Trajectory& t) {
  if (t.calls.size() != 1) throw Error(ErrorCode::Unrepresentable, "expected exactly one call");
  const ToolCall& call = t.calls.front();
  const std::size_t tool = index_of_tool(vocab, call.tool_name);
  const ToolSchema& schema = vocab.library[tool];
  for (const auto& [name, value] : call.args) {
    if (!schema.find_param(name)) throw Error(ErrorCode::Unrepresentable, "argument '" + name + "' is not a slot");
  }
  std::vector<Decision> path{{0, tool}};
  for (std::size_t j = 0; j < schema.params.size(); ++j) {
    auto it = call.args.find(schema.params[j].name);
    std::optional<Value> wanted;
    if (it != call.args.end()) wanted = it->second;
    const auto& choices = vocab.candidates[tool][j];
    auto found = std::find(choices.begin(), choices.end(), wanted);
    if (found == choices.end()) {
      throw Error(ErrorCode::Unrepresentable, "value for '" + schema.params[j].name + "' is outside the vocabulary");
    }
    path.push_back({vocab.slot_index(tool, j), static_cast<std::size_t>(found - choices.begin())});
  }
  return path;
}

Trajectory encode_path(const Vocabulary& vocab, const std::string& query_id, const std::vector<Decision>& path) {
  const std::size_t tool = path.at(0).choice;
  const ToolSchema& schema = vocab.library.at(tool);
  ToolCall call{schema.name, {}};
  for (std::size_t j = 0; j < schema.params.size(); ++j) {
    const auto& choice = vocab.candidates[tool][j].at(path.at(j + 1).choice);
    if (choice) call.args[schema.params[j].name] = *choice;
  }
  return parse_trajectory(query_id, render_call_block({call}, &vocab.library, "Calling " + schema.name + "."));
}

Trajectory sample_trajectory(const PolicyParams& p, const PolicyContext& ctx, const SamplingConfig& cfg,
                             std::mt19937_64& rng) {
  const auto& vocab = p.vocabulary(ctx.vocab_id);
  std::vector<Decision> path;
  double lp = 0.0;
  const auto tool_lp = sampling_log_probs(p.slot_logits(ctx, 0), cfg);
  const std::size_t tool = sample_index(tool_lp, rng);
  lp += tool_lp(static_cast<Eigen::Index>(tool));
  path.push_back({0, tool});
  for (std::size_t j = 0; j < vocab.candidates[tool].size(); ++j) {
    const std::size_t slot = vocab.slot_index(tool, j);
    const auto slot_lp = sampling_log_probs(p.slot_logits(ctx, slot), cfg);
    const std::size_t c = sample_index(slot_lp, rng);
    lp += slot_lp(static_cast<Eigen::Index>(c));
    path.push_back({slot, c});
  }
  Trajectory t = encode_path(vocab, ctx.query_id, path);
  t.logprob = lp;
  return t;
}

RolloutGroup sample_group(const PolicyParams& p, const PolicyContext& ctx, int group_size, const SamplingConfig& cfg,
                          std::uint64_t rng_seed) {
  if (group_size < 2) throw Error(ErrorCode::GroupTooSmall, "group size must be >= 2");
  std::mt19937_64 rng(rng_seed);
  RolloutGroup group{ctx, {}, {}};
  for (int i = 0; i < group_size; ++i) {
    group.trajectories.push_back(sample_trajectory(p, ctx, cfg, rng));
    group.logprobs_old.push_back(group.trajectories.back().logprob);
  }
  return group;
}

double logprob(const PolicyParams& p, const PolicyContext& ctx, const Trajectory& t, const SamplingConfig& cfg) {
  const auto& vocab = p.vocabulary(ctx.vocab_id);
  double lp = 0.0;
  for (const auto& d : decode_trajectory(vocab, t)) {
    lp += sampling_log_probs(p.slot_logits(ctx, d.slot), cfg)(static_cast<Eigen::Index>(d.choice));
  }
  return lp;
}

PolicyParams logprob_grad(const PolicyParams& p, const PolicyContext& ctx, const Trajectory& t,
                          const SamplingConfig& cfg) {
  const auto& vocab = p.vocabulary(ctx.vocab_id);
  PolicyParams grad = p.zeros_like();
  for (const auto& d : decode_trajectory(vocab, t)) {
    const Eigen::VectorXd lp = sampling_log_probs(p.slot_logits(ctx, d.slot), cfg);
    Eigen::VectorXd g = -lp.array().exp();  // masked entries have probability 0
    g(static_cast<Eigen::Index>(d.choice)) += 1.0;
    grad.accumulate(ctx, d.slot, g, 1.0 / cfg.temperature);
  }
  return grad;
}

double kl_divergence(const PolicyParams& p, const PolicyParams& p_ref, const PolicyContext& ctx) {
  const auto& vocab = p.vocabulary(ctx.vocab_id);
  double kl = 0.0;
  for (std::size_t s = 0; s < vocab.num_slots(); ++s) kl += kl_softmax(p.slot_logits(ctx, s), p_ref.slot_logits(ctx, s));
  return kl;
}

PolicyParams kl_divergence_grad(const PolicyParams& p, const PolicyParams& p_ref, const PolicyContext& ctx) {
  const auto& vocab = p.vocabulary(ctx.vocab_id);
  PolicyParams grad = p.zeros_like();
  for (std::size_t s = 0; s < vocab.num_slots(); ++s) {
    grad.accumulate(ctx, s, kl_softmax_grad(p.slot_logits(ctx, s), p_ref.slot_logits(ctx, s)));
  }
  return grad;
}

}  // namespace fgrpo
