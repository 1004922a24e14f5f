#pragma once

// Concurrency control for multi-stage transactions.
//
// Engine owns the store, the history and one protocol state machine per
// instance. Drivers (the direct helpers below, the random interleaver in the
// tests, the discrete-event simulator) push instances forward with step()
// and feed back lock timeouts and cloud labels. The state machine realizes
//
//   MSSR (Two Stage 2PL): lock initial set, run initial, lock the final set
//     (conservatively instantiated), initial commit, wait for cloud labels,
//     run final under the held locks, final commit, release everything.
//   MSIA: lock, run, initial commit and release; once cloud labels arrive,
//     lock the final set computed from the actual labels, run the apology
//     body, final commit, release. Final-section lock failures back off and
//     retry; they never abort.
//
// Multi-partition sections finish with two-phase commit: at the end of the
// final section under MSSR, at the end of each section under MSIA.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "croesus/store.hpp"
#include "croesus/txn.hpp"

namespace croesus {

enum class ProtocolMode : std::uint8_t { MSSR, MSIA };
const char* to_string(ProtocolMode mode);
ProtocolMode parse_protocol(const std::string& text);

struct EngineConfig {
  ProtocolMode mode = ProtocolMode::MSIA;
  std::size_t partitions = 1;
  double lock_timeout_ms = 50.0;
  double op_cost_ms = 0.05;
  /// One-way latency of an edge-to-edge message (remote locks, 2PC).
  double inter_edge_ms = 30.0;
  /// Probability that a 2PC participant votes no. Failure injection only.
  double vote_abort_probability = 0.0;
  double backoff_initial_ms = 1.0;
  double backoff_cap_ms = 64.0;
  std::uint64_t seed = 1;
  /// TEST ONLY. With MSSR: initial locks are dropped at initial commit and
  /// the final section runs without any locks. Exists to reproduce the lost
  /// increment anomaly; never enable it outside tests.
  bool weakened_for_testing = false;
};

struct StepOutcome {
  enum class Kind : std::uint8_t { Continue, Delay, WaitLock, WaitCloud, Finished, Aborted };
  Kind kind = Kind::Continue;
  double delay_ms = 0.0;

  static StepOutcome cont() { return {Kind::Continue, 0.0}; }
  static StepOutcome delay(double ms) { return {Kind::Delay, ms}; }
  bool terminal() const { return kind == Kind::Finished || kind == Kind::Aborted; }
};

/// A completed lock hold: from the moment a section's whole batch is held
/// until the batch is released.
struct LockSpan {
  InstanceId instance = 0;
  SectionKind section = SectionKind::Initial;
  double granted_ms = 0.0;
  double released_ms = 0.0;
};

struct Vote {
  std::size_t partition = 0;
  bool yes = true;
};

struct CommitDecision {
  enum class Kind : std::uint8_t { Commit, Abort };
  Kind decision = Kind::Commit;
  std::vector<Vote> votes;
};

/// Commit iff every participant votes yes.
CommitDecision two_phase_commit(std::span<const std::size_t> participants,
                                const std::function<bool(std::size_t)>& vote);

/// One atomic-commitment round as executed by the engine.
struct CommitRound {
  InstanceId instance = 0;
  SectionKind section = SectionKind::Initial;
  std::vector<std::size_t> participants;
  std::vector<std::size_t> partitions_with_writes;
  CommitDecision decision;
  /// Partitions on which the round's writes were installed.
  std::vector<std::size_t> applied;
};

class Engine {
 public:
  Engine(const TransactionsBank& bank, EngineConfig config);
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  InstanceId create_instance(const TemplateId& tpl, FrameId frame, std::vector<Label> edge_labels,
                             std::optional<AuxInput> aux = std::nullopt, Params params = {});

  /// Advances the instance by one protocol phase.
  StepOutcome step(InstanceId id);
  /// Hands the final-section input to the instance.
  void deliver(InstanceId id, std::vector<LabelMatch> matches);
  /// Lock-wait timeout. Ignored (nullopt) unless the instance is still in the
  /// wait identified by `epoch`.
  std::optional<StepOutcome> on_timeout(InstanceId id, std::uint64_t epoch);
  std::uint64_t wait_epoch(InstanceId id) const;
  bool waiting_on_lock(InstanceId id) const;
  bool has_delivery(InstanceId id) const;
  /// Instances whose pending lock request was granted since the last call.
  std::vector<InstanceId> take_woken();

  /// Initial-section lock footprint (used by the batch sequencer).
  std::vector<LockRequest> initial_footprint(InstanceId id) const;

  double now() const { return now_; }
  void set_now(double t);
  void advance_clock(double dt) { set_now(now_ + dt); }

  const EngineConfig& config() const { return config_; }
  const TransactionsBank& bank() const { return bank_; }
  Store& store() { return store_; }
  const Store& store() const { return store_; }
  const History& history() const { return history_; }
  const TransactionInstance& instance(InstanceId id) const;
  const std::map<InstanceId, TransactionInstance>& instances() const { return instances_; }
  const std::vector<LockSpan>& lock_spans() const { return spans_; }
  const std::vector<CommitRound>& commit_rounds() const { return rounds_; }
  std::size_t home_partition(InstanceId id) const;

 private:
  struct Runner;
  class Context;

  Runner& runner(InstanceId id);
  const Runner& runner(InstanceId id) const;
  TransactionInstance& mutable_instance(InstanceId id);

  PatternBindings bindings(const Runner& r, SectionKind kind, bool conservative) const;
  std::vector<LockRequest> requests_for(const Runner& r, SectionKind kind, bool conservative) const;
  std::vector<InstanceId> committed_dependents(InstanceId id) const;
  bool final_declares_deps(const Runner& r) const;

  StepOutcome begin_wait(Runner& r);
  StepOutcome start_batch(Runner& r, std::vector<LockRequest> requests);
  StepOutcome execute(Runner& r, SectionKind kind);
  StepOutcome commit_initial(Runner& r);
  StepOutcome finish_final(Runner& r, CommitRound* round);
  StepOutcome abort(Runner& r);
  std::vector<Access> install(Runner& r, std::map<Key, Payload>& writes, CommitRound* round);
  std::vector<std::size_t> participants(const Runner& r, SectionKind kind) const;
  CommitDecision run_vote(const std::vector<std::size_t>& parts);
  void release_all(Runner& r);
  void close_span(Runner& r, SectionKind kind);

  const TransactionsBank& bank_;
  EngineConfig config_;
  Store store_;
  History history_;
  std::map<InstanceId, TransactionInstance> instances_;
  std::map<InstanceId, std::unique_ptr<Runner>> runners_;
  std::vector<LockSpan> spans_;
  std::vector<CommitRound> rounds_;
  std::vector<InstanceId> woken_;
  std::mt19937_64 vote_rng_;
  InstanceId next_id_ = 1;
  double now_ = 0.0;
};

// Direct, single-threaded drivers. With no other driver running, a lock wait
// can only end by timeout, so waits are resolved by advancing the clock.

InstanceState mssr_run_initial(Engine& engine, InstanceId id);
InstanceState mssr_run_final(Engine& engine, InstanceId id, std::vector<LabelMatch> matches);
InstanceState msia_run_initial(Engine& engine, InstanceId id);
/// Runs the final section to commit and returns its apology report. Throws
/// std::runtime_error if the section is still starved after `max_retries`
/// lock timeouts.
ApologyReport msia_run_final(Engine& engine, InstanceId id, std::vector<LabelMatch> matches,
                             std::size_t max_retries = 10000);

struct SequencedTxn {
  InstanceId id = 0;
  std::vector<LockRequest> footprint;
};

/// batches[b][w] lists the instances of wave w of batch b. Waves run one
/// after another; instances inside a wave never conflict.
struct Schedule {
  std::vector<std::vector<std::vector<InstanceId>>> batches;

  std::size_t size() const;
  std::vector<InstanceId> flattened() const;
};

bool footprints_conflict(std::span<const LockRequest> a, std::span<const LockRequest> b);

/// Single-threaded sequencer: cuts the input into batches of `batch_size`
/// in arrival order and, inside each batch, places every transaction in the
/// first wave after all earlier conflicting transactions.
Schedule sequence_batch(std::span<const SequencedTxn> txns, std::size_t batch_size = 50);

}  // namespace croesus
