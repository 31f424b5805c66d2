#pragma once

#include <deque>
#include <mutex>
#include <optional>
#include <ostream>
#include <unordered_set>
#include <vector>

#include "fgrpo/feedback.hpp"

namespace fgrpo {

enum class PushResult { Accepted, Duplicate, EvictedOldest };

const char* to_string(PushResult r);

/*!
 * Last-in-first-out store of corrective samples with key deduplication.
 *
 * Keys stay in the seen-set after a pop unless release_keys_on_pop is set, so an error that was
 * already trained on is not admitted again within the run. When a capacity is set, an overflowing
 * push evicts the bottom (oldest) entry and releases its key. All members lock a single mutex.
 */
class LifoBuffer {
 public:
  explicit LifoBuffer(std::optional<std::size_t> capacity = std::nullopt, bool release_keys_on_pop = false);

  PushResult push(CorrectiveSample s);
  //! Up to n samples, newest first. Throws BufferEmpty when nothing is stored.
  std::vector<CorrectiveSample> pop_batch(std::size_t n);
  bool is_triggered(std::size_t b_trig) const;

  std::size_t size() const;
  bool empty() const { return size() == 0; }
  bool seen(Digest key) const;
  //! Stack order from top to bottom.
  std::vector<Digest> keys() const;

  //! One JSON object per line, top of the stack first.
  void write_jsonl(std::ostream& out) const;

 private:
  std::optional<std::size_t> capacity_;
  bool release_keys_on_pop_;
  std::deque<CorrectiveSample> stack_;  // back() is the top
  std::unordered_set<Digest> seen_;
  mutable std::mutex mutex_;
};

}  // namespace fgrpo
