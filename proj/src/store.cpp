#include "croesus/store.hpp"

#include <algorithm>
#include <set>

namespace croesus {

const char* to_string(LockMode mode) {
  return mode == LockMode::Shared ? "S" : "X";
}

std::vector<LockRequest> normalize(std::vector<LockRequest> requests) {
  std::sort(requests.begin(), requests.end(), [](const LockRequest& a, const LockRequest& b) {
    return a.key < b.key;
  });
  std::vector<LockRequest> out;
  for (auto& req : requests) {
    if (req.key.empty()) throw ProtocolViolation("lock request on empty key");
    if (!out.empty() && out.back().key == req.key) {
      if (req.mode == LockMode::Exclusive) out.back().mode = LockMode::Exclusive;
      continue;
    }
    out.push_back(std::move(req));
  }
  return out;
}

// ---------------------------------------------------------------------------
// LockManager

bool LockManager::holds_locked(InstanceId txn, const Key& key, LockMode at_least) const {
  auto it = table_.find(key);
  if (it == table_.end()) return false;
  for (const auto& h : it->second.holders) {
    if (h.txn == txn) return at_least == LockMode::Shared || h.mode == LockMode::Exclusive;
  }
  return false;
}

RequestStatus LockManager::request_locked(InstanceId txn, const Key& key, LockMode mode) {
  Entry& entry = table_[key];
  for (auto& h : entry.holders) {
    if (h.txn != txn) continue;
    if (h.mode == LockMode::Exclusive || mode == LockMode::Shared) return RequestStatus::Granted;
    // S -> X upgrade: only the sole holder may upgrade.
    if (entry.holders.size() == 1) {
      h.mode = LockMode::Exclusive;
      return RequestStatus::Granted;
    }
    return RequestStatus::UpgradeConflict;
  }
  for (const auto& w : entry.queue) {
    if (w.txn == txn) throw ProtocolViolation("duplicate lock request on " + key);
  }
  const bool fits = std::all_of(entry.holders.begin(), entry.holders.end(),
                                [&](const LockHolder& h) { return compatible(h.mode, mode); });
  if (entry.queue.empty() && fits) {
    entry.holders.push_back({txn, mode});
    return RequestStatus::Granted;
  }
  entry.queue.push_back({txn, mode});
  return RequestStatus::Queued;
}

void LockManager::promote_locked(const Key& key, Entry& entry) {
  bool granted = false;
  while (!entry.queue.empty()) {
    const Waiter w = entry.queue.front();
    const bool fits = std::all_of(entry.holders.begin(), entry.holders.end(),
                                  [&](const LockHolder& h) { return compatible(h.mode, w.mode); });
    if (!fits) break;
    entry.queue.pop_front();
    entry.holders.push_back({w.txn, w.mode});
    grants_.push_back({w.txn, key, w.mode});
    granted = true;
  }
  if (granted) cv_.notify_all();
}

void LockManager::release_locked(InstanceId txn, const Key& key) {
  auto it = table_.find(key);
  if (it == table_.end()) throw ProtocolViolation("release of non-held lock " + key);
  auto& holders = it->second.holders;
  auto pos = std::find_if(holders.begin(), holders.end(),
                          [&](const LockHolder& h) { return h.txn == txn; });
  if (pos == holders.end()) throw ProtocolViolation("release of non-held lock " + key);
  holders.erase(pos);
  promote_locked(key, it->second);
  if (it->second.holders.empty() && it->second.queue.empty()) table_.erase(it);
}

void LockManager::cancel_locked(InstanceId txn, const Key& key) {
  auto it = table_.find(key);
  if (it == table_.end()) return;
  auto& queue = it->second.queue;
  auto pos = std::find_if(queue.begin(), queue.end(), [&](const Waiter& w) { return w.txn == txn; });
  if (pos == queue.end()) return;
  queue.erase(pos);
  promote_locked(key, it->second);
  if (it->second.holders.empty() && it->second.queue.empty()) table_.erase(it);
}

RequestStatus LockManager::request(InstanceId txn, const Key& key, LockMode mode) {
  std::lock_guard lock(mu_);
  return request_locked(txn, key, mode);
}

void LockManager::cancel(InstanceId txn, const Key& key) {
  std::lock_guard lock(mu_);
  cancel_locked(txn, key);
}

void LockManager::release(InstanceId txn, const Key& key) {
  std::lock_guard lock(mu_);
  release_locked(txn, key);
}

void LockManager::downgrade(InstanceId txn, const Key& key) {
  std::lock_guard lock(mu_);
  auto it = table_.find(key);
  if (it == table_.end()) throw ProtocolViolation("downgrade of non-held lock " + key);
  for (auto& h : it->second.holders) {
    if (h.txn == txn) {
      h.mode = LockMode::Shared;
      promote_locked(key, it->second);
      return;
    }
  }
  throw ProtocolViolation("downgrade of non-held lock " + key);
}

std::vector<Grant> LockManager::take_grants() {
  std::lock_guard lock(mu_);
  return std::exchange(grants_, {});
}

AcquireResult LockManager::acquire_locks(InstanceId txn, std::span<const LockRequest> requests,
                                         std::chrono::milliseconds timeout) {
  const auto sorted = normalize({requests.begin(), requests.end()});
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::unique_lock lock(mu_);
  std::vector<Key> fresh;
  // Blocking callers are woken through the condition variable; grants are
  // only recorded for the event scheduler.
  auto forget_grants = [&] {
    std::erase_if(grants_, [&](const Grant& g) { return g.txn == txn; });
  };
  auto roll_back = [&] {
    for (const auto& k : fresh) release_locked(txn, k);
    forget_grants();
    return AcquireResult::TimedOut;
  };
  for (const auto& req : sorted) {
    const bool had = holds_locked(txn, req.key, LockMode::Shared);
    const RequestStatus st = request_locked(txn, req.key, req.mode);
    if (st == RequestStatus::UpgradeConflict) return roll_back();
    if (st == RequestStatus::Queued) {
      const bool ok = cv_.wait_until(lock, deadline,
                                     [&] { return holds_locked(txn, req.key, req.mode); });
      if (!ok) {
        cancel_locked(txn, req.key);
        return roll_back();
      }
    }
    if (!had) fresh.push_back(req.key);
  }
  forget_grants();
  return AcquireResult::Acquired;
}

void LockManager::release_locks(InstanceId txn, std::span<const Key> keys) {
  std::lock_guard lock(mu_);
  for (const auto& k : keys) release_locked(txn, k);
}

bool LockManager::holds(InstanceId txn, const Key& key, LockMode at_least) const {
  std::lock_guard lock(mu_);
  return holds_locked(txn, key, at_least);
}

bool LockManager::is_waiting(InstanceId txn, const Key& key) const {
  std::lock_guard lock(mu_);
  auto it = table_.find(key);
  if (it == table_.end()) return false;
  return std::any_of(it->second.queue.begin(), it->second.queue.end(),
                     [&](const Waiter& w) { return w.txn == txn; });
}

std::vector<LockHolder> LockManager::holders(const Key& key) const {
  std::lock_guard lock(mu_);
  auto it = table_.find(key);
  return it == table_.end() ? std::vector<LockHolder>{} : it->second.holders;
}

std::vector<InstanceId> LockManager::waiters(const Key& key) const {
  std::lock_guard lock(mu_);
  std::vector<InstanceId> out;
  if (auto it = table_.find(key); it != table_.end()) {
    for (const auto& w : it->second.queue) out.push_back(w.txn);
  }
  return out;
}

std::vector<Key> LockManager::held_by(InstanceId txn) const {
  std::lock_guard lock(mu_);
  std::vector<Key> out;
  for (const auto& [key, entry] : table_) {
    for (const auto& h : entry.holders) {
      if (h.txn == txn) out.push_back(key);
    }
  }
  return out;
}

std::size_t LockManager::active_keys() const {
  std::lock_guard lock(mu_);
  return table_.size();
}

void LockManager::audit() const {
  std::lock_guard lock(mu_);
  for (const auto& [key, entry] : table_) {
    std::set<InstanceId> seen;
    std::size_t exclusive = 0;
    for (const auto& h : entry.holders) {
      if (!seen.insert(h.txn).second) throw ProtocolViolation("duplicate holder on " + key);
      if (h.mode == LockMode::Exclusive) ++exclusive;
    }
    if (exclusive > 0 && entry.holders.size() > 1) {
      throw ProtocolViolation("exclusive lock shared on " + key);
    }
    for (const auto& w : entry.queue) {
      if (!seen.insert(w.txn).second) throw ProtocolViolation("transaction listed twice on " + key);
    }
    if (entry.holders.empty() && !entry.queue.empty()) {
      throw ProtocolViolation("waiters without holders on " + key);
    }
  }
}

// ---------------------------------------------------------------------------
// Partition / Store

std::size_t partition_of(const Key& key, std::size_t partitions) {
  if (partitions <= 1) return 0;
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return static_cast<std::size_t>(h % partitions);
}

std::optional<Value> Partition::read(InstanceId txn, const Key& key) const {
  if (!locks_.holds(txn, key, LockMode::Shared)) {
    throw ProtocolViolation("read without lock on " + key);
  }
  return peek(key);
}

std::uint64_t Partition::write(InstanceId txn, const Key& key, Payload payload) {
  if (!locks_.holds(txn, key, LockMode::Exclusive)) {
    throw ProtocolViolation("write without exclusive lock on " + key);
  }
  return install_unchecked(txn, key, std::move(payload));
}

std::optional<Value> Partition::peek(const Key& key) const {
  auto it = data_.find(key);
  if (it == data_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Partition::install_unchecked(InstanceId txn, const Key& key, Payload payload) {
  if (key.empty()) throw ProtocolViolation("write to empty key");
  Value& v = data_[key];
  v.payload = std::move(payload);
  v.writer = txn;
  v.version += 1;
  return v.version;
}

Store::Store(std::size_t partitions) : partitions_(partitions == 0 ? 1 : partitions) {}

std::size_t Store::partition_of(const Key& key) const {
  return croesus::partition_of(key, partitions_.size());
}

void Store::seed(const Key& key, Payload payload) {
  home(key).install_unchecked(kNoWriter, key, std::move(payload));
}

std::vector<Grant> Store::take_grants() {
  std::vector<Grant> out;
  for (auto& p : partitions_) {
    auto g = p.locks().take_grants();
    out.insert(out.end(), std::make_move_iterator(g.begin()), std::make_move_iterator(g.end()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// LockBatch

LockBatch::LockBatch(InstanceId txn, std::vector<LockRequest> requests)
    : txn_(txn), requests_(normalize(std::move(requests))) {}

BatchStatus LockBatch::advance(Store& store) {
  while (next_ < requests_.size()) {
    const LockRequest& req = requests_[next_];
    LockManager& locks = store.home(req.key).locks();
    if (waiting_) {
      if (!locks.holds(txn_, req.key, req.mode)) return BatchStatus::Waiting;
      waiting_ = false;
      fresh_.push_back(req.key);
      ++next_;
      continue;
    }
    const bool had_shared = locks.holds(txn_, req.key, LockMode::Shared);
    const bool had_exclusive = locks.holds(txn_, req.key, LockMode::Exclusive);
    switch (locks.request(txn_, req.key, req.mode)) {
      case RequestStatus::Granted:
        if (!had_shared) {
          fresh_.push_back(req.key);
        } else if (!had_exclusive && req.mode == LockMode::Exclusive) {
          upgraded_.push_back(req.key);
        }
        ++next_;
        break;
      case RequestStatus::Queued:
        waiting_ = true;
        return BatchStatus::Waiting;
      case RequestStatus::UpgradeConflict:
        return BatchStatus::Conflict;
    }
  }
  return BatchStatus::Acquired;
}

void LockBatch::abandon(Store& store) {
  if (waiting_ && next_ < requests_.size()) {
    const Key& k = requests_[next_].key;
    LockManager& locks = store.home(k).locks();
    if (locks.is_waiting(txn_, k)) {
      locks.cancel(txn_, k);
    } else if (locks.holds(txn_, k)) {
      // Granted between the last advance and the timeout.
      fresh_.push_back(k);
    }
  }
  waiting_ = false;
  for (const auto& k : fresh_) store.home(k).locks().release(txn_, k);
  for (const auto& k : upgraded_) store.home(k).locks().downgrade(txn_, k);
  fresh_.clear();
  upgraded_.clear();
  next_ = requests_.size();
}

std::string payload_to_string(const Payload& payload) {
  if (const auto* i = std::get_if<std::int64_t>(&payload)) return std::to_string(*i);
  return std::get<std::string>(payload);
}

std::int64_t payload_as_int(const Payload& payload) {
  if (const auto* i = std::get_if<std::int64_t>(&payload)) return *i;
  return std::stoll(std::get<std::string>(payload));
}

}  // namespace croesus
