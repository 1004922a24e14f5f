#include <gtest/gtest.h>

#include "croesus/cc.hpp"
#include "croesus/checker.hpp"
#include "croesus/workload.hpp"
#include "support/interleaver.hpp"

using namespace croesus;

namespace {

TransactionTemplate counter(const std::string& id, const std::string& key) {
  // rmw on `key` in the initial section, confirm in the final
  TransactionTemplate t;
  t.id = id;
  t.trigger.aux_kind = id;
  t.initial.writes = {key};
  t.initial.body = [key](SectionContext& ctx) { ctx.write(key, ctx.read_int(key) + 1); };
  t.final_.reads = {key};
  t.final_.body = [](SectionContext&) {};
  return t;
}

std::int64_t value(const Engine& e, const Key& k) {
  auto v = e.store().peek(k);
  return v ? payload_as_int(v->payload) : 0;
}

}  // namespace

TEST(Protocols, ParseNames) {
  EXPECT_EQ(parse_protocol("mssr"), ProtocolMode::MSSR);
  EXPECT_EQ(parse_protocol("MSIA"), ProtocolMode::MSIA);
  EXPECT_THROW(parse_protocol("2pl"), std::invalid_argument);
}

TEST(Mssr, DirectRunCommitsBothSections) {
  TransactionsBank bank;
  bank.register_template(counter("c", "x"));
  Engine e(bank, {.mode = ProtocolMode::MSSR});
  const auto id = e.create_instance("c", 0, {});
  EXPECT_EQ(mssr_run_initial(e, id), InstanceState::InitialCommitted);
  // TS-2PL keeps the locks across the cloud wait.
  EXPECT_TRUE(e.store().partition(0).locks().holds(id, "x", LockMode::Exclusive));
  EXPECT_EQ(mssr_run_final(e, id, {}), InstanceState::FinalCommitted);
  EXPECT_FALSE(e.store().partition(0).locks().holds(id, "x"));
  EXPECT_EQ(value(e, "x"), 1);
  EXPECT_TRUE(check_mssr(e.history().events()).empty());
}

TEST(Msia, InitialReleasesLocks) {
  TransactionsBank bank;
  bank.register_template(counter("c", "x"));
  Engine e(bank, {.mode = ProtocolMode::MSIA});
  const auto id = e.create_instance("c", 0, {});
  EXPECT_EQ(msia_run_initial(e, id), InstanceState::InitialCommitted);
  EXPECT_FALSE(e.store().partition(0).locks().holds(id, "x"));
  const auto rep = msia_run_final(e, id, {});
  EXPECT_EQ(rep.outcome, ApologyOutcome::Confirmed);
  EXPECT_EQ(e.instance(id).state, InstanceState::FinalCommitted);
}

TEST(Mssr, ConflictingInitialTimesOutAndAborts) {
  TransactionsBank bank;
  bank.register_template(counter("c", "x"));
  Engine e(bank, {.mode = ProtocolMode::MSSR});
  const auto a = e.create_instance("c", 0, {});
  const auto b = e.create_instance("c", 1, {});
  ASSERT_EQ(mssr_run_initial(e, a), InstanceState::InitialCommitted);
  EXPECT_EQ(mssr_run_initial(e, b), InstanceState::Aborted);
  EXPECT_EQ(e.history().events().back().kind, EventKind::Abort);
  mssr_run_final(e, a, {});
  EXPECT_EQ(value(e, "x"), 1);
}

TEST(Msia, FinalRetriesInsteadOfAborting) {
  TransactionsBank bank;
  bank.register_template(counter("c", "x"));
  Engine e(bank, {.mode = ProtocolMode::MSIA, .lock_timeout_ms = 5});
  const auto a = e.create_instance("c", 0, {});
  ASSERT_EQ(msia_run_initial(e, a), InstanceState::InitialCommitted);
  // Someone else holds x exclusively; the final section must wait it out.
  ASSERT_EQ(e.store().partition(0).locks().request(999, "x", LockMode::Exclusive), RequestStatus::Granted);
  e.deliver(a, {});
  int waits = 0;
  for (int turn = 0; turn < 50 && e.instance(a).state != InstanceState::FinalCommitted; ++turn) {
    auto out = e.step(a);
    if (out.kind == StepOutcome::Kind::WaitLock) {
      if (++waits == 3) e.store().partition(0).locks().release(999, "x");
      e.advance_clock(out.delay_ms);
      if (auto t = e.on_timeout(a, e.wait_epoch(a))) {
        EXPECT_NE(t->kind, StepOutcome::Kind::Aborted);
        if (t->kind == StepOutcome::Kind::Delay) e.advance_clock(t->delay_ms);
      }
    } else if (out.kind == StepOutcome::Kind::Delay) {
      e.advance_clock(out.delay_ms);
    }
  }
  EXPECT_EQ(e.instance(a).state, InstanceState::FinalCommitted);
  EXPECT_GE(waits, 3);
}

TEST(Mssr, LostIncrementNeverHappens) {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    TransactionsBank bank;
    bank.register_template(increment_template());
    Engine e(bank, {.mode = ProtocolMode::MSSR, .seed = seed});
    e.store().seed("x", std::int64_t{0});
    std::vector<InstanceId> ids;
    for (int i = 0; i < 2; ++i) {
      ids.push_back(e.create_instance(kIncrementTemplate, i, {}, AuxInput{"increment", {}}, {{"key", "x"}}));
    }
    harness::interleave(e, ids, seed, {.retry_aborted = true});
    ASSERT_EQ(value(e, "x"), 2) << "seed " << seed;
    ASSERT_TRUE(check_mssr(e.history().events()).empty());
  }
}

TEST(Mssr, WeakenedModeLosesAnIncrement) {
  bool lost = false;
  for (std::uint64_t seed = 1; seed <= 200 && !lost; ++seed) {
    TransactionsBank bank;
    bank.register_template(increment_template());
    Engine e(bank, {.mode = ProtocolMode::MSSR, .seed = seed, .weakened_for_testing = true});
    e.store().seed("x", std::int64_t{0});
    std::vector<InstanceId> ids;
    for (int i = 0; i < 2; ++i) {
      ids.push_back(e.create_instance(kIncrementTemplate, i, {}, AuxInput{"increment", {}}, {{"key", "x"}}));
    }
    harness::interleave(e, ids, seed, {.retry_aborted = true});
    if (value(e, "x") == 1) {
      lost = true;
      auto v = check_mssr(e.history().events());
      ASSERT_FALSE(v.empty());
      EXPECT_TRUE(std::any_of(v.begin(), v.end(), [](const Violation& x) { return x.kind == ViolationKind::MSSRb; }));
    }
  }
  EXPECT_TRUE(lost);
}

TEST(Sequencer, WavesHoldNoConflicts) {
  std::vector<SequencedTxn> txns = {
      {1, {{"a", LockMode::Exclusive}}},
      {2, {{"b", LockMode::Exclusive}}},
      {3, {{"a", LockMode::Shared}}},
      {4, {{"a", LockMode::Shared}, {"c", LockMode::Exclusive}}},
      {5, {{"b", LockMode::Shared}}},
  };
  auto s = sequence_batch(txns, 50);
  ASSERT_EQ(s.batches.size(), 1u);
  ASSERT_EQ(s.batches[0].size(), 2u);
  EXPECT_EQ(s.batches[0][0], (std::vector<InstanceId>{1, 2}));
  EXPECT_EQ(s.batches[0][1], (std::vector<InstanceId>{3, 4, 5}));
  EXPECT_EQ(s.size(), 5u);
  EXPECT_EQ(sequence_batch(txns, 2).batches.size(), 3u);
  EXPECT_THROW(sequence_batch(txns, 0), std::invalid_argument);
}

TEST(TwoPhaseCommit, AnyNoAborts) {
  std::vector<std::size_t> parts{0, 1, 2};
  auto all_yes = two_phase_commit(parts, [](std::size_t) { return true; });
  EXPECT_EQ(all_yes.decision, CommitDecision::Kind::Commit);
  EXPECT_EQ(all_yes.votes.size(), 3u);
  auto one_no = two_phase_commit(parts, [](std::size_t p) { return p != 1; });
  EXPECT_EQ(one_no.decision, CommitDecision::Kind::Abort);
  EXPECT_EQ(two_phase_commit({}, [](std::size_t) { return false; }).decision, CommitDecision::Kind::Commit);
}
