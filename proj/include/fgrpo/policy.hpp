#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "fgrpo/toolcall.hpp"

namespace fgrpo {

/*!
 * Finite decision grammar for one task: slot 0 picks a tool from the library, then one slot
 * per parameter of the chosen tool picks a value from its candidate list. An empty optional
 * as a candidate means "leave the argument out".
 */
struct Vocabulary {
  ToolLibrary library;
  std::vector<std::vector<std::vector<std::optional<Value>>>> candidates;  // [tool][param][choice]

  std::size_t num_slots() const;
  //! Slot index of (tool, param); slot 0 is the tool choice.
  std::size_t slot_index(std::size_t tool, std::size_t param) const;
  std::size_t slot_size(std::size_t slot) const;
  void check() const;
};

nlohmann::json vocabulary_to_json(const Vocabulary& v);
Vocabulary vocabulary_from_json(const nlohmann::json& j);

//! One decision along a trajectory's path through the grammar.
struct Decision {
  std::size_t slot;
  std::size_t choice;

  bool operator==(const Decision&) const = default;
};

/*!
 * What the policy conditions on. Feedback contributes a presence flag, the slot it names (hint)
 * and the decisions of the failed attempt it refers to (previous).
 */
struct PolicyContext {
  std::string vocab_id;
  std::string query_id;
  bool has_feedback = false;
  std::string hint;
  std::vector<Decision> previous;

  bool operator==(const PolicyContext&) const = default;
};

struct SamplingConfig {
  double temperature = 1.0;
  int top_k = std::numeric_limits<int>::max();
};

/*!
 * Logit tables keyed by context-feature bucket. A context activates up to three buckets
 * (query, query+feedback, query+feedback+hint); a slot's logits are the sum of the active
 * buckets' rows. Missing buckets read as zero. The same type holds gradients.
 *
 * When the context carries a previous attempt, each slot that attempt visited also gets a shared
 * scalar added to the logit of its previous choice: one scalar for the slot the hint names and
 * one for every other slot. These two weights live in the bucket kCopyBucket and are the only
 * parameters shared across queries.
 */
class PolicyParams {
 public:
  using SlotRows = std::vector<Eigen::VectorXd>;
  static constexpr const char* kCopyBucket = "copy";  // rows: {keep}, {hinted}

  struct Bucket {
    std::string vocab_id;
    SlotRows rows;
  };

  void add_vocabulary(const std::string& id, Vocabulary vocab);
  const Vocabulary& vocabulary(const std::string& id) const;
  bool has_vocabulary(const std::string& id) const;

  static std::vector<std::string> bucket_keys(const PolicyContext& ctx);

  Eigen::VectorXd slot_logits(const PolicyContext& ctx, std::size_t slot) const;
  //! Adds scale * delta to the slot row of every bucket the context activates.
  void accumulate(const PolicyContext& ctx, std::size_t slot, const Eigen::VectorXd& delta, double scale = 1.0);
  Bucket& bucket(const std::string& key, const std::string& vocab_id);
  const Bucket* find_bucket(const std::string& key) const;
  const std::map<std::string, Bucket>& buckets() const { return buckets_; }

  //! Same vocabularies, no buckets.
  PolicyParams zeros_like() const;
  //! this += a * other.
  void axpy(double a, const PolicyParams& other);
  double squared_norm() const;
  bool all_finite() const;
  std::size_t num_parameters() const;

  nlohmann::json to_json() const;
  static PolicyParams from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static PolicyParams load(const std::string& path);

  bool operator==(const PolicyParams& other) const;

 private:
  std::map<std::string, std::shared_ptr<const Vocabulary>> vocabs_;
  std::map<std::string, Bucket> buckets_;
};

//! Log-probabilities of the sampling distribution: logits / temperature, restricted to the top_k.
Eigen::VectorXd sampling_log_probs(const Eigen::VectorXd& logits, const SamplingConfig& cfg);

//! Maps a trajectory onto its grammar path; throws Unrepresentable otherwise.
std::vector<Decision> decode_trajectory(const Vocabulary& vocab, const Trajectory& t);
//! Inverse of decode_trajectory: builds the call and its rendered text.
Trajectory encode_path(const Vocabulary& vocab, const std::string& query_id, const std::vector<Decision>& path);

struct RolloutGroup {
  PolicyContext context;
  std::vector<Trajectory> trajectories;
  std::vector<double> logprobs_old;
};

Trajectory sample_trajectory(const PolicyParams& p, const PolicyContext& ctx, const SamplingConfig& cfg,
                             std::mt19937_64& rng);
RolloutGroup sample_group(const PolicyParams& p, const PolicyContext& ctx, int group_size, const SamplingConfig& cfg,
                          std::uint64_t rng_seed);

double logprob(const PolicyParams& p, const PolicyContext& ctx, const Trajectory& t, const SamplingConfig& cfg = {});
//! Gradient of logprob with respect to every bucket entry; unvisited slots stay zero.
PolicyParams logprob_grad(const PolicyParams& p, const PolicyContext& ctx, const Trajectory& t,
                          const SamplingConfig& cfg = {});

//! Exact sum over every slot of the grammar of KL(softmax(p) || softmax(p_ref)).
double kl_divergence(const PolicyParams& p, const PolicyParams& p_ref, const PolicyContext& ctx);
PolicyParams kl_divergence_grad(const PolicyParams& p, const PolicyParams& p_ref, const PolicyContext& ctx);

}  // namespace fgrpo
