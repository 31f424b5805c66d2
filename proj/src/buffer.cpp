#include "fgrpo/buffer.hpp"

#include "fgrpo/error.hpp"

namespace fgrpo {

const char* to_string(PushResult r) {
  switch (r) {
    case PushResult::Accepted: return "accepted";
    case PushResult::Duplicate: return "duplicate";
    case PushResult::EvictedOldest: return "evicted_oldest";
  }
  return "?";
}

LifoBuffer::LifoBuffer(std::optional<std::size_t> capacity, bool release_keys_on_pop)
    : capacity_(capacity), release_keys_on_pop_(release_keys_on_pop) {
  if (capacity_ && *capacity_ == 0) throw Error(ErrorCode::InvalidArgument, "capacity must be positive");
}

PushResult LifoBuffer::push(CorrectiveSample s) {
  std::lock_guard lock(mutex_);
  if (seen_.count(s.key)) return PushResult::Duplicate;
  seen_.insert(s.key);
  stack_.push_back(std::move(s));
  if (capacity_ && stack_.size() > *capacity_) {
    seen_.erase(stack_.front().key);
    stack_.pop_front();
    return PushResult::EvictedOldest;
  }
  return PushResult::Accepted;
}

std::vector<CorrectiveSample> LifoBuffer::pop_batch(std::size_t n) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be >= 1");
  std::lock_guard lock(mutex_);
  if (stack_.empty()) throw Error(ErrorCode::BufferEmpty, "corrective buffer is empty");
  std::vector<CorrectiveSample> batch;
  while (batch.size() < n && !stack_.empty()) {
    if (release_keys_on_pop_) seen_.erase(stack_.back().key);
    batch.push_back(std::move(stack_.back()));
    stack_.pop_back();
  }
  return batch;
}

bool LifoBuffer::is_triggered(std::size_t b_trig) const {
  if (b_trig == 0) throw Error(ErrorCode::InvalidArgument, "trigger threshold must be >= 1");
  return size() >= b_trig;
}

std::size_t LifoBuffer::size() const {
  std::lock_guard lock(mutex_);
  return stack_.size();
}

bool LifoBuffer::seen(Digest key) const {
  std::lock_guard lock(mutex_);
  return seen_.count(key) != 0;
}

std::vector<Digest> LifoBuffer::keys() const {
  std::lock_guard lock(mutex_);
  std::vector<Digest> out;
  for (auto it = stack_.rbegin(); it != stack_.rend(); ++it) out.push_back(it->key);
  return out;
}

void LifoBuffer::write_jsonl(std::ostream& out) const {
  std::lock_guard lock(mutex_);
  for (auto it = stack_.rbegin(); it != stack_.rend(); ++it) out << it->to_json().dump() << '\n';
}

}  // namespace fgrpo
