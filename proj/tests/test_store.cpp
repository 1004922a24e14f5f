#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "croesus/store.hpp"

using namespace croesus;
using namespace std::chrono_literals;

TEST(Locks, NormalizeSortsAndKeepsStrongest) {
  auto r = normalize({{"b", LockMode::Shared}, {"a", LockMode::Shared}, {"b", LockMode::Exclusive}});
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0], (LockRequest{"a", LockMode::Shared}));
  EXPECT_EQ(r[1], (LockRequest{"b", LockMode::Exclusive}));
}

TEST(Locks, SharedCompatibleExclusiveQueues) {
  LockManager lm;
  EXPECT_EQ(lm.request(1, "x", LockMode::Shared), RequestStatus::Granted);
  EXPECT_EQ(lm.request(2, "x", LockMode::Shared), RequestStatus::Granted);
  EXPECT_EQ(lm.request(3, "x", LockMode::Exclusive), RequestStatus::Queued);
  // FIFO: a later shared request does not overtake the queued writer
  EXPECT_EQ(lm.request(4, "x", LockMode::Shared), RequestStatus::Queued);
  lm.release(1, "x");
  EXPECT_TRUE(lm.take_grants().empty());
  lm.release(2, "x");
  auto g = lm.take_grants();
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].txn, 3u);
  lm.release(3, "x");
  g = lm.take_grants();
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].txn, 4u);
  lm.audit();
}

TEST(Locks, UpgradeOnlyForSoleHolder) {
  LockManager lm;
  lm.request(1, "x", LockMode::Shared);
  EXPECT_EQ(lm.request(1, "x", LockMode::Exclusive), RequestStatus::Granted);
  EXPECT_TRUE(lm.holds(1, "x", LockMode::Exclusive));
  lm.downgrade(1, "x");
  lm.request(2, "x", LockMode::Shared);
  EXPECT_EQ(lm.request(1, "x", LockMode::Exclusive), RequestStatus::UpgradeConflict);
}

TEST(Locks, CancelWithdrawsWaiter) {
  LockManager lm;
  lm.request(1, "x", LockMode::Exclusive);
  lm.request(2, "x", LockMode::Exclusive);
  EXPECT_TRUE(lm.is_waiting(2, "x"));
  lm.cancel(2, "x");
  EXPECT_FALSE(lm.is_waiting(2, "x"));
  lm.release(1, "x");
  EXPECT_TRUE(lm.take_grants().empty());
  EXPECT_EQ(lm.active_keys(), 0u);
}

TEST(Locks, ReleaseOfUnheldLockIsAViolation) {
  LockManager lm;
  EXPECT_THROW(lm.release(1, "x"), ProtocolViolation);
}

TEST(Locks, BlockingAcquireTimesOutAndRollsBack) {
  LockManager lm;
  const std::vector<LockRequest> held{{"b", LockMode::Exclusive}};
  ASSERT_EQ(lm.acquire_locks(1, held, 10ms), AcquireResult::Acquired);

  const std::vector<LockRequest> want{{"a", LockMode::Exclusive}, {"b", LockMode::Exclusive}};
  EXPECT_EQ(lm.acquire_locks(2, want, 20ms), AcquireResult::TimedOut);
  // "a" was granted on the way and must be gone again
  EXPECT_TRUE(lm.held_by(2).empty());
  EXPECT_TRUE(lm.waiters("b").empty());
  lm.audit();
}

TEST(Locks, BlockingAcquireWakesOnRelease) {
  LockManager lm;
  const std::vector<LockRequest> x{{"x", LockMode::Exclusive}};
  ASSERT_EQ(lm.acquire_locks(1, x, 10ms), AcquireResult::Acquired);
  std::atomic<bool> acquired{false};
  std::thread t([&] { acquired = lm.acquire_locks(2, x, 5s) == AcquireResult::Acquired; });
  while (lm.waiters("x").empty()) std::this_thread::yield();
  const std::vector<Key> keys{"x"};
  lm.release_locks(1, keys);
  t.join();
  EXPECT_TRUE(acquired);
  EXPECT_TRUE(lm.holds(2, "x", LockMode::Exclusive));
}

TEST(Locks, ManyThreadsIncrementUnderExclusiveLocks) {
  Store store;
  store.seed("n", std::int64_t{0});
  constexpr int kThreads = 8, kIters = 200;
  std::vector<std::thread> ts;
  std::mutex data_mu;  // Partition data itself is not thread-safe; locks order access
  for (int t = 0; t < kThreads; ++t) {
    ts.emplace_back([&, t] {
      const InstanceId me = static_cast<InstanceId>(t + 1);
      const std::vector<LockRequest> req{{"n", LockMode::Exclusive}};
      const std::vector<Key> keys{"n"};
      for (int i = 0; i < kIters; ++i) {
        while (store.partition(0).locks().acquire_locks(me, req, 100ms) != AcquireResult::Acquired) {
        }
        {
          std::lock_guard g(data_mu);
          auto v = store.partition(0).read(me, "n");
          store.partition(0).write(me, "n", payload_as_int(v->payload) + 1);
        }
        store.partition(0).locks().release_locks(me, keys);
      }
    });
  }
  for (auto& t : ts) t.join();
  EXPECT_EQ(payload_as_int(store.peek("n")->payload), kThreads * kIters);
}

TEST(Partition, AccessNeedsLocks) {
  Partition p;
  p.install_unchecked(kNoWriter, "x", std::int64_t{5});
  EXPECT_THROW(p.read(7, "x"), ProtocolViolation);
  p.locks().request(7, "x", LockMode::Shared);
  EXPECT_EQ(payload_as_int(p.read(7, "x")->payload), 5);
  EXPECT_THROW(p.write(7, "x", std::int64_t{6}), ProtocolViolation);
  p.locks().request(7, "x", LockMode::Exclusive);
  EXPECT_EQ(p.write(7, "x", std::int64_t{6}), 2u);
  EXPECT_EQ(p.peek("x")->writer, 7u);
}

TEST(Partition, VersionsCountInstalls) {
  Partition p;
  EXPECT_EQ(p.install_unchecked(1, "k", std::int64_t{1}), 1u);
  EXPECT_EQ(p.install_unchecked(2, "k", std::string("two")), 2u);
  EXPECT_EQ(payload_to_string(p.peek("k")->payload), "two");
}

TEST(Store, RoutingIsStableAndInRange) {
  Store s(4);
  std::set<std::size_t> seen;
  for (int i = 0; i < 200; ++i) {
    const Key k = "key" + std::to_string(i);
    const auto p = s.partition_of(k);
    EXPECT_LT(p, 4u);
    EXPECT_EQ(p, partition_of(k, 4));
    seen.insert(p);
  }
  EXPECT_EQ(seen.size(), 4u);
  EXPECT_EQ(partition_of("anything", 1), 0u);
}

TEST(LockBatch, AbandonRestoresTheTable) {
  Store s;
  auto& lm = s.partition(0).locks();
  lm.request(1, "a", LockMode::Shared);   // already held shared by the batch owner
  lm.request(2, "c", LockMode::Exclusive);  // blocks the batch
  LockBatch b(1, {{"a", LockMode::Exclusive}, {"b", LockMode::Exclusive}, {"c", LockMode::Shared}});
  EXPECT_EQ(b.advance(s), BatchStatus::Waiting);
  EXPECT_TRUE(lm.holds(1, "a", LockMode::Exclusive));
  EXPECT_TRUE(lm.holds(1, "b"));
  b.abandon(s);
  EXPECT_TRUE(lm.holds(1, "a", LockMode::Shared));
  EXPECT_FALSE(lm.holds(1, "a", LockMode::Exclusive));
  EXPECT_FALSE(lm.holds(1, "b"));
  EXPECT_FALSE(lm.is_waiting(1, "c"));
  lm.audit();
}

TEST(LockBatch, CompletesAfterGrant) {
  Store s;
  auto& lm = s.partition(0).locks();
  lm.request(2, "b", LockMode::Exclusive);
  LockBatch b(1, {{"b", LockMode::Shared}, {"a", LockMode::Shared}});
  EXPECT_EQ(b.advance(s), BatchStatus::Waiting);
  lm.release(2, "b");
  s.take_grants();
  EXPECT_EQ(b.advance(s), BatchStatus::Acquired);
  EXPECT_TRUE(b.done());
  EXPECT_EQ(b.newly_acquired().size(), 2u);
}
