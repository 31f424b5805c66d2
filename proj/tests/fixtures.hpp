#pragma once

#include <random>
#include <string>

#include "fgrpo/policy.hpp"
#include "fgrpo/toolcall.hpp"

namespace fixtures {

//! Two tools: update_ticket(ticket_id:int, status:enum, note?:string) and close_ticket(ticket_id:int).
inline fgrpo::ToolLibrary ticket_library() {
  using fgrpo::ParamKind;
  return {
      {"update_ticket",
       {{"ticket_id", ParamKind::Int, true, {}},
        {"status", ParamKind::Enum, true, {"OPEN", "CLOSED", "PENDING"}},
        {"note", ParamKind::String, false, {}}}},
      {"close_ticket", {{"ticket_id", ParamKind::Int, true, {}}}},
  };
}

inline fgrpo::ToolCall update_call(std::int64_t id, const std::string& status) {
  return {"update_ticket", {{"ticket_id", fgrpo::Value{id}}, {"status", fgrpo::Value{status}}}};
}

inline fgrpo::Trajectory traj(const std::vector<fgrpo::ToolCall>& calls, const fgrpo::ToolLibrary* lib = nullptr) {
  return fgrpo::parse_trajectory("q", fgrpo::render_call_block(calls, lib, "Calling."));
}

inline std::string random_printable(std::mt19937_64& rng, std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> ch(32, 126);
  std::string s(len(rng), ' ');
  for (auto& c : s) c = static_cast<char>(ch(rng));
  return s;
}

//! Tools "pick"(a, b) with 3 candidates each and "drop"(c) with 2 candidates, one being "omit".
inline fgrpo::Vocabulary small_vocab() {
  using fgrpo::ParamKind;
  using fgrpo::Value;
  fgrpo::Vocabulary v;
  v.library = {{"pick", {{"a", ParamKind::String, true, {}}, {"b", ParamKind::Int, true, {}}}},
               {"drop", {{"c", ParamKind::Bool, false, {}}}}};
  v.candidates = {{{Value{std::string("x")}, Value{std::string("y")}, Value{std::string("z")}},
                   {Value{std::int64_t{1}}, Value{std::int64_t{2}}, Value{std::string("two")}}},
                  {{Value{true}, std::nullopt}}};
  return v;
}

inline fgrpo::PolicyParams small_policy() {
  fgrpo::PolicyParams p;
  p.add_vocabulary("v", small_vocab());
  return p;
}

//! Fills every bucket the context activates (and the copy weights) with N(0, scale) entries.
inline void randomize(fgrpo::PolicyParams& p, const fgrpo::PolicyContext& ctx, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  for (const auto& key : fgrpo::PolicyParams::bucket_keys(ctx)) {
    for (auto& row : p.bucket(key, ctx.vocab_id).rows) {
      for (Eigen::Index i = 0; i < row.size(); ++i) row(i) = n(rng);
    }
  }
  for (auto& row : p.bucket(fgrpo::PolicyParams::kCopyBucket, "").rows) row(0) = n(rng);
}

}  // namespace fixtures
