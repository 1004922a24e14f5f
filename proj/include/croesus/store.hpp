#pragma once

// Per-partition key-value storage and the shared/exclusive lock manager used
// by both multi-stage concurrency-control protocols.
//
// The lock manager exposes two faces over one table:
//   * a blocking, thread-safe acquire_locks/release_locks pair with a
//     wall-clock timeout (worker threads);
//   * non-blocking request/cancel/release primitives plus LockBatch, which
//     the discrete-event scheduler drives in logical time.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace croesus {

using InstanceId = std::uint64_t;
using Key = std::string;
using Payload = std::variant<std::int64_t, std::string>;

inline constexpr InstanceId kNoWriter = 0;

/// Raised when a caller breaks a locking or access contract. This is a
/// programming error, never a runtime abort path.
class ProtocolViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Value {
  Payload payload{std::int64_t{0}};
  InstanceId writer = kNoWriter;
  std::uint64_t version = 0;

  bool operator==(const Value&) const = default;
};

enum class LockMode : std::uint8_t { Shared, Exclusive };

inline constexpr bool compatible(LockMode a, LockMode b) {
  return a == LockMode::Shared && b == LockMode::Shared;
}

const char* to_string(LockMode mode);

struct LockRequest {
  Key key;
  LockMode mode = LockMode::Shared;

  bool operator==(const LockRequest&) const = default;
};

/// Sorts by key and merges duplicates, keeping the strongest mode.
std::vector<LockRequest> normalize(std::vector<LockRequest> requests);

enum class RequestStatus { Granted, Queued, UpgradeConflict };
enum class AcquireResult { Acquired, TimedOut };

struct Grant {
  InstanceId txn;
  Key key;
  LockMode mode;
};

struct LockHolder {
  InstanceId txn;
  LockMode mode;
};

class LockManager {
 public:
  LockManager() = default;
  LockManager(const LockManager&) = delete;
  LockManager& operator=(const LockManager&) = delete;

  // Blocking interface. Requests are taken in ascending key order; on
  // timeout every lock granted by this call is released again.
  AcquireResult acquire_locks(InstanceId txn, std::span<const LockRequest> requests,
                              std::chrono::milliseconds timeout);
  void release_locks(InstanceId txn, std::span<const Key> keys);

  // Non-blocking interface for the event scheduler.
  RequestStatus request(InstanceId txn, const Key& key, LockMode mode);
  /// Withdraws a queued request. No-op when the caller is not queued.
  void cancel(InstanceId txn, const Key& key);
  /// Releases one held lock. Throws ProtocolViolation when not held.
  void release(InstanceId txn, const Key& key);
  /// Turns an Exclusive hold back into Shared and wakes compatible waiters.
  void downgrade(InstanceId txn, const Key& key);
  /// Grants produced by release/cancel since the last call.
  std::vector<Grant> take_grants();

  bool holds(InstanceId txn, const Key& key, LockMode at_least = LockMode::Shared) const;
  bool is_waiting(InstanceId txn, const Key& key) const;
  std::vector<LockHolder> holders(const Key& key) const;
  std::vector<InstanceId> waiters(const Key& key) const;
  std::vector<Key> held_by(InstanceId txn) const;
  /// Number of keys with at least one holder or waiter.
  std::size_t active_keys() const;

  /// Throws ProtocolViolation if any table invariant is broken.
  void audit() const;

 private:
  struct Waiter {
    InstanceId txn;
    LockMode mode;
  };
  struct Entry {
    std::vector<LockHolder> holders;
    std::deque<Waiter> queue;
  };

  RequestStatus request_locked(InstanceId txn, const Key& key, LockMode mode);
  void release_locked(InstanceId txn, const Key& key);
  void cancel_locked(InstanceId txn, const Key& key);
  void promote_locked(const Key& key, Entry& entry);
  bool holds_locked(InstanceId txn, const Key& key, LockMode at_least) const;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<Key, Entry> table_;
  std::vector<Grant> grants_;
};

/// Stable key-to-partition routing (FNV-1a over the key bytes).
std::size_t partition_of(const Key& key, std::size_t partitions);

/// One partition: its data and its lock table. Reads and writes check that
/// the caller holds an adequate lock.
class Partition {
 public:
  std::optional<Value> read(InstanceId txn, const Key& key) const;
  std::uint64_t write(InstanceId txn, const Key& key, Payload payload);

  /// Unchecked access for seeding fixtures and for the test-only weakened
  /// protocol, which deliberately writes without locks.
  std::optional<Value> peek(const Key& key) const;
  std::uint64_t install_unchecked(InstanceId txn, const Key& key, Payload payload);

  LockManager& locks() { return locks_; }
  const LockManager& locks() const { return locks_; }
  const std::map<Key, Value>& data() const { return data_; }

 private:
  std::map<Key, Value> data_;
  LockManager locks_;
};

class Store {
 public:
  explicit Store(std::size_t partitions = 1);

  std::size_t partition_count() const { return partitions_.size(); }
  std::size_t partition_of(const Key& key) const;
  Partition& partition(std::size_t index) { return partitions_.at(index); }
  const Partition& partition(std::size_t index) const { return partitions_.at(index); }
  Partition& home(const Key& key) { return partitions_[partition_of(key)]; }
  const Partition& home(const Key& key) const { return partitions_[partition_of(key)]; }

  std::optional<Value> peek(const Key& key) const { return home(key).peek(key); }
  void seed(const Key& key, Payload payload);

  std::vector<Grant> take_grants();

 private:
  std::vector<Partition> partitions_;
};

enum class BatchStatus { Acquired, Waiting, Conflict };

/// Incremental acquisition of one lock batch in ascending key order across
/// partitions. advance() requests keys until one has to wait; abandon()
/// returns the table to its state before the batch started.
class LockBatch {
 public:
  LockBatch() = default;
  LockBatch(InstanceId txn, std::vector<LockRequest> requests);

  BatchStatus advance(Store& store);
  void abandon(Store& store);

  bool done() const { return next_ == requests_.size() && !waiting_; }
  const std::vector<LockRequest>& requests() const { return requests_; }
  /// Keys whose lock was first obtained by this batch.
  const std::vector<Key>& newly_acquired() const { return fresh_; }

 private:
  InstanceId txn_ = 0;
  std::vector<LockRequest> requests_;
  std::vector<Key> fresh_;
  std::vector<Key> upgraded_;
  std::size_t next_ = 0;
  bool waiting_ = false;
};

std::string payload_to_string(const Payload& payload);
std::int64_t payload_as_int(const Payload& payload);

}  // namespace croesus
