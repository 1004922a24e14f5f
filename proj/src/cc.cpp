#include "croesus/cc.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace croesus {

const char* to_string(ProtocolMode mode) { return mode == ProtocolMode::MSSR ? "mssr" : "msia"; }

ProtocolMode parse_protocol(const std::string& text) {
  if (text == "mssr" || text == "MSSR") return ProtocolMode::MSSR;
  if (text == "msia" || text == "MSIA") return ProtocolMode::MSIA;
  throw std::invalid_argument("unknown protocol '" + text + "' (expected mssr or msia)");
}

CommitDecision two_phase_commit(std::span<const std::size_t> participants,
                                const std::function<bool(std::size_t)>& vote) {
  CommitDecision out;
  for (std::size_t p : participants) {
    const bool yes = vote(p);
    out.votes.push_back({p, yes});
    if (!yes) out.decision = CommitDecision::Kind::Abort;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runner state

namespace {

enum class Phase : std::uint8_t {
  Start,
  AcquireInitial,
  ExecInitial,
  AcquireFinalEarly,
  CommitInitial,
  DecideInitial,
  AwaitCloud,
  AcquireFinal,
  Backoff,
  ExecFinal,
  CommitFinal,
  DecideFinal,
  Done,
  Aborted,
};

}  // namespace

struct Engine::Runner {
  InstanceId id = 0;
  Phase phase = Phase::Start;
  std::size_t home = 0;

  LockBatch batch;
  bool batch_active = false;
  bool remote_pending = false;
  bool waiting = false;
  std::uint64_t epoch = 0;
  double deadline = 0.0;
  double backoff_ms = 1.0;

  bool delivered = false;
  bool final_begun = false;
  bool carry = false;  // MSSR multi-partition: initial writes ride the final 2PC
  std::optional<double> initial_granted;
  std::optional<double> final_granted;
  std::vector<InstanceId> deps;

  std::map<Key, Payload> initial_writes;
  std::map<Key, Payload> final_writes;
  std::map<Key, Payload> carried;
  std::vector<Access> initial_reads;
  std::vector<Access> final_reads;
  std::set<Key> touched_initial;
  std::set<Key> touched_final;
};

class Engine::Context final : public SectionContext {
 public:
  Context(Engine& engine, Runner& runner, SectionKind kind, const PatternBindings& b,
          const TransactionTemplate& tpl, bool check_locks)
      : engine_(engine), runner_(runner), kind_(kind), check_locks_(check_locks) {
    const SectionProgram& prog = kind == SectionKind::Initial ? tpl.initial : tpl.final_;
    for (auto& k : expand_patterns(prog.writes, b)) {
      writable_.insert(k);
      readable_.insert(k);
    }
    for (auto& k : expand_patterns(prog.reads, b)) readable_.insert(k);
    deps_ = b.deps;
  }

  const TransactionInstance& instance() const override { return engine_.instance(runner_.id); }
  SectionKind section() const override { return kind_; }

  std::optional<Value> read(const Key& key) override {
    if (!readable_.contains(key)) {
      throw ProtocolViolation("instance " + std::to_string(runner_.id) + " " + to_string(kind_) +
                              " section read undeclared key " + key);
    }
    ++ops_;
    touched().insert(key);
    auto& buf = buffer();
    if (auto it = buf.find(key); it != buf.end()) return Value{it->second, runner_.id, 0};
    if (kind_ == SectionKind::Final) {
      if (auto it = runner_.carried.find(key); it != runner_.carried.end()) {
        return Value{it->second, runner_.id, 0};
      }
    }
    const Partition& part = engine_.store_.home(key);
    std::optional<Value> v = check_locks_ ? part.read(runner_.id, key) : part.peek(key);
    if (!recorded_.contains(key)) {
      recorded_.insert(key);
      reads().push_back({key, v ? v->version : 0});
    }
    return v;
  }

  void write(const Key& key, Payload payload) override {
    if (!writable_.contains(key)) {
      throw ProtocolViolation("instance " + std::to_string(runner_.id) + " " + to_string(kind_) +
                              " section wrote undeclared key " + key);
    }
    if (check_locks_ && !engine_.store_.home(key).locks().holds(runner_.id, key, LockMode::Exclusive)) {
      throw ProtocolViolation("write without exclusive lock on " + key);
    }
    ++ops_;
    touched().insert(key);
    recorded_.insert(key);  // later reads see our own write
    buffer()[key] = std::move(payload);
  }

  void respond(std::string text) override {
    auto& inst = engine_.mutable_instance(runner_.id);
    (kind_ == SectionKind::Initial ? inst.initial_response : inst.final_response).push_back(std::move(text));
  }

  std::vector<InstanceId> dependents() const override {
    if (engine_.final_declares_deps(runner_)) return deps_;
    return engine_.committed_dependents(runner_.id);
  }

  void report(ApologyOutcome outcome, std::vector<Key> retracted, std::vector<Key> compensating,
              std::string message) override {
    if (kind_ != SectionKind::Final) throw ProtocolViolation("apology reported outside a final section");
    if (outcome == ApologyOutcome::Confirmed && (!retracted.empty() || !compensating.empty())) {
      throw ProtocolViolation("a confirmed outcome carries no retracted or compensating writes");
    }
    auto& inst = engine_.mutable_instance(runner_.id);
    inst.apology = ApologyReport{runner_.id, outcome, std::move(retracted), std::move(compensating),
                                 std::move(message)};
  }

  std::size_t ops() const { return ops_; }

 private:
  std::map<Key, Payload>& buffer() {
    return kind_ == SectionKind::Initial ? runner_.initial_writes : runner_.final_writes;
  }
  std::vector<Access>& reads() {
    return kind_ == SectionKind::Initial ? runner_.initial_reads : runner_.final_reads;
  }
  std::set<Key>& touched() {
    return kind_ == SectionKind::Initial ? runner_.touched_initial : runner_.touched_final;
  }

  Engine& engine_;
  Runner& runner_;
  SectionKind kind_;
  bool check_locks_;
  std::set<Key> readable_;
  std::set<Key> writable_;
  std::set<Key> recorded_;
  std::vector<InstanceId> deps_;
  std::size_t ops_ = 0;
};

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(const TransactionsBank& bank, EngineConfig config)
    : bank_(bank), config_(config), store_(config.partitions), vote_rng_(config.seed ^ 0x2b992ddfa23249d6ULL) {
  if (config_.partitions == 0) throw std::invalid_argument("partition count must be >= 1");
  if (config_.lock_timeout_ms < 0) throw std::invalid_argument("lock timeout must be >= 0");
  if (config_.weakened_for_testing && config_.mode != ProtocolMode::MSSR) {
    throw std::invalid_argument("the weakened test mode only applies to MSSR");
  }
}

Engine::~Engine() = default;

InstanceId Engine::create_instance(const TemplateId& tpl_id, FrameId frame, std::vector<Label> edge_labels,
                                   std::optional<AuxInput> aux, Params params) {
  const TransactionTemplate& tpl = bank_.get(tpl_id);
  const InstanceId id = next_id_++;
  TransactionInstance inst;
  inst.id = id;
  inst.template_id = tpl_id;
  inst.frame = frame;
  inst.edge_labels = std::move(edge_labels);
  inst.aux = std::move(aux);
  if (inst.aux) {
    for (const auto& [k, v] : inst.aux->params) params.try_emplace(k, v);
  }
  if (tpl.bind_params) {
    for (auto& [k, v] : tpl.bind_params(id, inst.edge_labels, inst.aux)) params.insert_or_assign(k, v);
  }
  inst.params = std::move(params);
  instances_.emplace(id, std::move(inst));

  auto r = std::make_unique<Runner>();
  r->id = id;
  r->home = static_cast<std::size_t>(frame % config_.partitions);
  r->backoff_ms = config_.backoff_initial_ms;
  runners_.emplace(id, std::move(r));
  return id;
}

Engine::Runner& Engine::runner(InstanceId id) {
  auto it = runners_.find(id);
  if (it == runners_.end()) throw std::out_of_range("unknown instance " + std::to_string(id));
  return *it->second;
}

const Engine::Runner& Engine::runner(InstanceId id) const {
  auto it = runners_.find(id);
  if (it == runners_.end()) throw std::out_of_range("unknown instance " + std::to_string(id));
  return *it->second;
}

const TransactionInstance& Engine::instance(InstanceId id) const {
  auto it = instances_.find(id);
  if (it == instances_.end()) throw std::out_of_range("unknown instance " + std::to_string(id));
  return it->second;
}

TransactionInstance& Engine::mutable_instance(InstanceId id) {
  auto it = instances_.find(id);
  if (it == instances_.end()) throw std::out_of_range("unknown instance " + std::to_string(id));
  return it->second;
}

std::size_t Engine::home_partition(InstanceId id) const { return runner(id).home; }

void Engine::set_now(double t) {
  if (t < now_) throw std::invalid_argument("logical clock cannot move backwards");
  now_ = t;
}

std::uint64_t Engine::wait_epoch(InstanceId id) const { return runner(id).epoch; }
bool Engine::waiting_on_lock(InstanceId id) const { return runner(id).waiting; }
bool Engine::has_delivery(InstanceId id) const { return runner(id).delivered; }

std::vector<InstanceId> Engine::take_woken() {
  for (const auto& g : store_.take_grants()) {
    auto it = runners_.find(g.txn);
    if (it != runners_.end() && it->second->waiting &&
        std::find(woken_.begin(), woken_.end(), g.txn) == woken_.end()) {
      woken_.push_back(g.txn);
    }
  }
  return std::exchange(woken_, {});
}

void Engine::deliver(InstanceId id, std::vector<LabelMatch> matches) {
  Runner& r = runner(id);
  if (r.delivered) throw ProtocolViolation("final input delivered twice to " + std::to_string(id));
  mutable_instance(id).matches = std::move(matches);
  r.delivered = true;
}

bool Engine::final_declares_deps(const Runner& r) const {
  const auto& tpl = bank_.get(instance(r.id).template_id);
  auto has = [](const std::vector<std::string>& ps) {
    return std::any_of(ps.begin(), ps.end(), [](const std::string& p) { return p.find("{dep}") != std::string::npos; });
  };
  return has(tpl.final_.reads) || has(tpl.final_.writes);
}

std::vector<InstanceId> Engine::committed_dependents(InstanceId id) const {
  const auto& events = history_.events();
  const bool committed = std::any_of(events.begin(), events.end(), [&](const SectionEvent& e) {
    return e.instance == id && e.kind == EventKind::Commit;
  });
  if (!committed) return {};
  return read_dependents(events, id);
}

PatternBindings Engine::bindings(const Runner& r, SectionKind kind, bool conservative) const {
  const auto& inst = instance(r.id);
  const auto& tpl = bank_.get(inst.template_id);
  PatternBindings b;
  b.id = r.id;
  b.params = &inst.params;
  if (tpl.trigger.label_class) b.members = bank_.members(*tpl.trigger.label_class);
  std::set<std::string> labels;
  for (const auto& l : inst.edge_labels) labels.insert(l.name);
  if (kind == SectionKind::Final) {
    if (conservative) {
      labels.insert(b.members.begin(), b.members.end());
    } else {
      for (const auto& m : inst.matches) {
        if (m.cloud) labels.insert(m.cloud->name);
      }
    }
    b.deps = r.deps;
  }
  b.labels.assign(labels.begin(), labels.end());
  return b;
}

std::vector<LockRequest> Engine::requests_for(const Runner& r, SectionKind kind, bool conservative) const {
  const auto& tpl = bank_.get(instance(r.id).template_id);
  const SectionProgram& prog = kind == SectionKind::Initial ? tpl.initial : tpl.final_;
  const PatternBindings b = bindings(r, kind, conservative);
  std::vector<LockRequest> reqs;
  for (auto& k : expand_patterns(prog.reads, b)) reqs.push_back({std::move(k), LockMode::Shared});
  for (auto& k : expand_patterns(prog.writes, b)) reqs.push_back({std::move(k), LockMode::Exclusive});
  return normalize(std::move(reqs));
}

std::vector<LockRequest> Engine::initial_footprint(InstanceId id) const {
  return requests_for(runner(id), SectionKind::Initial, false);
}

StepOutcome Engine::begin_wait(Runner& r) {
  r.waiting = true;
  return {StepOutcome::Kind::WaitLock, r.deadline - now_};
}

StepOutcome Engine::start_batch(Runner& r, std::vector<LockRequest> requests) {
  r.remote_pending = config_.partitions > 1 &&
                     std::any_of(requests.begin(), requests.end(), [&](const LockRequest& q) {
                       return store_.partition_of(q.key) != r.home;
                     });
  r.batch = LockBatch(r.id, std::move(requests));
  r.batch_active = true;
  r.waiting = false;
  ++r.epoch;
  r.deadline = now_ + config_.lock_timeout_ms + (r.remote_pending ? 2 * config_.inter_edge_ms : 0.0);
  return StepOutcome::cont();
}

StepOutcome Engine::execute(Runner& r, SectionKind kind) {
  auto& inst = mutable_instance(r.id);
  const auto& tpl = bank_.get(inst.template_id);
  const bool mssr = config_.mode == ProtocolMode::MSSR;
  if (kind == SectionKind::Initial) {
    history_.record({0, r.id, SectionKind::Initial, EventKind::Begin, now_, {}, {}});
    r.initial_writes.clear();
    r.initial_reads.clear();
    inst.initial_response.clear();
  } else {
    if (!r.final_begun) {
      history_.record({0, r.id, SectionKind::Final, EventKind::Begin, now_, {}, {}});
      r.final_begun = true;
    }
    r.final_writes.clear();
    r.final_reads.clear();
    r.touched_final.clear();
    inst.final_response.clear();
    inst.apology.reset();
  }
  const bool conservative = kind == SectionKind::Final && mssr && !config_.weakened_for_testing;
  const bool check_locks = !(kind == SectionKind::Final && config_.weakened_for_testing);
  const PatternBindings b = bindings(r, kind, conservative);
  Context ctx(*this, r, kind, b, tpl, check_locks);
  const SectionProgram& prog = kind == SectionKind::Initial ? tpl.initial : tpl.final_;
  if (prog.body) prog.body(ctx);

  if (kind == SectionKind::Final && !inst.apology) {
    const bool all_same = std::all_of(inst.matches.begin(), inst.matches.end(),
                                      [](const LabelMatch& m) { return m.kind == MatchKind::SameName; });
    inst.apology = ApologyReport{r.id, all_same ? ApologyOutcome::Confirmed : ApologyOutcome::Corrected, {}, {},
                                 all_same ? "" : "final section ran on corrected labels"};
  }
  return StepOutcome::delay(static_cast<double>(ctx.ops()) * config_.op_cost_ms);
}

std::vector<std::size_t> Engine::participants(const Runner& r, SectionKind kind) const {
  std::set<std::size_t> parts{r.home};
  auto add = [&](const std::set<Key>& keys) {
    for (const auto& k : keys) parts.insert(store_.partition_of(k));
  };
  if (kind == SectionKind::Initial) {
    add(r.touched_initial);
  } else {
    add(r.touched_final);
    if (r.carry) add(r.touched_initial);
  }
  return {parts.begin(), parts.end()};
}

CommitDecision Engine::run_vote(const std::vector<std::size_t>& parts) {
  std::bernoulli_distribution no(config_.vote_abort_probability);
  return two_phase_commit(parts, [&](std::size_t) { return !no(vote_rng_); });
}

std::vector<Access> Engine::install(Runner& r, std::map<Key, Payload>& writes, CommitRound* round) {
  std::vector<Access> out;
  std::set<std::size_t> applied;
  const bool unchecked = config_.weakened_for_testing && r.phase == Phase::CommitFinal;
  for (auto& [key, payload] : writes) {
    Partition& part = store_.home(key);
    const std::uint64_t v = unchecked ? part.install_unchecked(r.id, key, payload) : part.write(r.id, key, payload);
    out.push_back({key, v});
    applied.insert(store_.partition_of(key));
  }
  if (round) {
    applied.insert(round->applied.begin(), round->applied.end());  // carried and final writes share a round
    round->applied.assign(applied.begin(), applied.end());
  }
  return out;
}

void Engine::close_span(Runner& r, SectionKind kind) {
  auto& granted = kind == SectionKind::Initial ? r.initial_granted : r.final_granted;
  if (granted) spans_.push_back({r.id, kind, *granted, now_});
  granted.reset();
}

void Engine::release_all(Runner& r) {
  for (std::size_t p = 0; p < store_.partition_count(); ++p) {
    LockManager& locks = store_.partition(p).locks();
    for (const auto& k : locks.held_by(r.id)) locks.release(r.id, k);
  }
}

StepOutcome Engine::abort(Runner& r) {
  if (r.batch_active) {
    r.batch.abandon(store_);
    r.batch_active = false;
  }
  r.waiting = false;
  release_all(r);
  r.initial_writes.clear();
  r.initial_granted.reset();
  r.final_granted.reset();
  history_.record({0, r.id, SectionKind::Initial, EventKind::Abort, now_, {}, {}});
  auto& inst = mutable_instance(r.id);
  inst.transition(InstanceState::Aborted);
  inst.initial_response = {"aborted"};
  r.phase = Phase::Aborted;
  return {StepOutcome::Kind::Aborted, 0.0};
}

StepOutcome Engine::commit_initial(Runner& r) {
  const bool mssr = config_.mode == ProtocolMode::MSSR;
  std::vector<Access> writes;
  if (mssr && !config_.weakened_for_testing && config_.partitions > 1) {
    // Installed together with the final section's writes by the final 2PC.
    r.carry = true;
    r.carried = r.initial_writes;
    for (const auto& [k, _] : r.initial_writes) writes.push_back({k, 0});
  } else {
    writes = install(r, r.initial_writes, nullptr);
  }
  history_.record({0, r.id, SectionKind::Initial, EventKind::Commit, now_, r.initial_reads, std::move(writes)});
  mutable_instance(r.id).transition(InstanceState::InitialCommitted);
  if (!mssr || config_.weakened_for_testing) {
    release_all(r);
    close_span(r, SectionKind::Initial);
  }
  r.phase = Phase::AwaitCloud;
  return StepOutcome::cont();
}

StepOutcome Engine::finish_final(Runner& r, CommitRound* round) {
  std::vector<Access> writes;
  if (r.carry) {
    writes = install(r, r.carried, round);
    r.carried.clear();
  }
  auto fw = install(r, r.final_writes, round);
  writes.insert(writes.end(), fw.begin(), fw.end());
  if (round) rounds_.push_back(*round);
  history_.record({0, r.id, SectionKind::Final, EventKind::Commit, now_, r.final_reads, std::move(writes)});
  mutable_instance(r.id).transition(InstanceState::FinalCommitted);
  release_all(r);
  close_span(r, SectionKind::Initial);
  close_span(r, SectionKind::Final);
  r.phase = Phase::Done;
  return {StepOutcome::Kind::Finished, 0.0};
}

StepOutcome Engine::step(InstanceId id) {
  Runner& r = runner(id);
  const bool mssr = config_.mode == ProtocolMode::MSSR;
  const bool weakened = config_.weakened_for_testing;
  const double hop = 2 * config_.inter_edge_ms;
  r.waiting = false;

  auto pump = [&]() -> std::optional<BatchStatus> {
    if (r.remote_pending) {
      r.remote_pending = false;
      return std::nullopt;  // pay the remote lock round trip first
    }
    return r.batch.advance(store_);
  };

  switch (r.phase) {
    case Phase::Start:
      r.phase = Phase::AcquireInitial;
      return start_batch(r, requests_for(r, SectionKind::Initial, false));

    case Phase::AcquireInitial: {
      auto st = pump();
      if (!st) return StepOutcome::delay(hop);
      if (*st == BatchStatus::Waiting) return begin_wait(r);
      if (*st == BatchStatus::Conflict) return abort(r);
      r.batch_active = false;
      r.initial_granted = now_;
      r.phase = Phase::ExecInitial;
      return StepOutcome::cont();
    }

    case Phase::ExecInitial: {
      auto out = execute(r, SectionKind::Initial);
      if (mssr && !weakened) {
        r.phase = Phase::AcquireFinalEarly;
        start_batch(r, requests_for(r, SectionKind::Final, true));
      } else {
        r.phase = Phase::CommitInitial;
      }
      return out;
    }

    case Phase::AcquireFinalEarly: {
      auto st = pump();
      if (!st) return StepOutcome::delay(hop);
      if (*st == BatchStatus::Waiting) return begin_wait(r);
      if (*st == BatchStatus::Conflict) return abort(r);
      r.batch_active = false;
      r.final_granted = now_;
      r.phase = Phase::CommitInitial;
      return StepOutcome::cont();
    }

    case Phase::CommitInitial:
      if (!mssr && participants(r, SectionKind::Initial).size() > 1) {
        r.phase = Phase::DecideInitial;
        return StepOutcome::delay(hop);
      }
      return commit_initial(r);

    case Phase::DecideInitial: {
      CommitRound round;
      round.instance = r.id;
      round.section = SectionKind::Initial;
      round.participants = participants(r, SectionKind::Initial);
      std::set<std::size_t> wp;
      for (const auto& [k, _] : r.initial_writes) wp.insert(store_.partition_of(k));
      round.partitions_with_writes.assign(wp.begin(), wp.end());
      round.decision = run_vote(round.participants);
      if (round.decision.decision == CommitDecision::Kind::Abort) {
        rounds_.push_back(round);
        return abort(r);
      }
      auto writes = install(r, r.initial_writes, &round);
      rounds_.push_back(round);
      history_.record({0, r.id, SectionKind::Initial, EventKind::Commit, now_, r.initial_reads, std::move(writes)});
      mutable_instance(r.id).transition(InstanceState::InitialCommitted);
      release_all(r);
      close_span(r, SectionKind::Initial);
      r.phase = Phase::AwaitCloud;
      return StepOutcome::cont();
    }

    case Phase::AwaitCloud:
      if (!r.delivered) return {StepOutcome::Kind::WaitCloud, 0.0};
      r.phase = (mssr || weakened) ? Phase::ExecFinal : Phase::AcquireFinal;
      return StepOutcome::cont();

    case Phase::Backoff:
      r.phase = Phase::AcquireFinal;
      [[fallthrough]];
    case Phase::AcquireFinal: {
      const bool with_deps = final_declares_deps(r);
      if (!r.batch_active) {
        if (with_deps) r.deps = committed_dependents(r.id);
        start_batch(r, requests_for(r, SectionKind::Final, false));
      }
      auto st = pump();
      if (!st) return StepOutcome::delay(hop);
      if (*st == BatchStatus::Waiting) return begin_wait(r);
      if (*st == BatchStatus::Conflict) {
        r.batch.abandon(store_);
        r.batch_active = false;
        r.phase = Phase::Backoff;
        const double d = r.backoff_ms;
        r.backoff_ms = std::min(config_.backoff_cap_ms, r.backoff_ms * 2);
        return StepOutcome::delay(d);
      }
      r.batch_active = false;
      if (with_deps && committed_dependents(r.id) != r.deps) {
        // New readers committed while we queued; lock their keys too.
        r.batch.abandon(store_);
        return StepOutcome::cont();
      }
      r.final_granted = now_;
      r.phase = Phase::ExecFinal;
      return StepOutcome::cont();
    }

    case Phase::ExecFinal: {
      auto out = execute(r, SectionKind::Final);
      r.phase = Phase::CommitFinal;
      return out;
    }

    case Phase::CommitFinal:
      if (participants(r, SectionKind::Final).size() > 1) {
        r.phase = Phase::DecideFinal;
        return StepOutcome::delay(hop);
      }
      return finish_final(r, nullptr);

    case Phase::DecideFinal: {
      CommitRound round;
      round.instance = r.id;
      round.section = SectionKind::Final;
      round.participants = participants(r, SectionKind::Final);
      std::set<std::size_t> wp;
      for (const auto& [k, _] : r.final_writes) wp.insert(store_.partition_of(k));
      for (const auto& [k, _] : r.carried) wp.insert(store_.partition_of(k));
      round.partitions_with_writes.assign(wp.begin(), wp.end());
      round.decision = run_vote(round.participants);
      if (round.decision.decision == CommitDecision::Kind::Abort) {
        // The final section may not abort: drop its writes and run it again
        // under the locks it still holds.
        rounds_.push_back(round);
        r.final_writes.clear();
        r.phase = Phase::ExecFinal;
        return StepOutcome::cont();
      }
      r.phase = Phase::CommitFinal;  // install() keys weakened mode off the phase
      return finish_final(r, &round);
    }

    case Phase::Done:
      return {StepOutcome::Kind::Finished, 0.0};
    case Phase::Aborted:
      return {StepOutcome::Kind::Aborted, 0.0};
  }
  return StepOutcome::cont();
}

std::optional<StepOutcome> Engine::on_timeout(InstanceId id, std::uint64_t epoch) {
  Runner& r = runner(id);
  if (!r.waiting || r.epoch != epoch || !r.batch_active) return std::nullopt;
  r.waiting = false;
  switch (r.phase) {
    case Phase::AcquireInitial:
    case Phase::AcquireFinalEarly:
      return abort(r);
    case Phase::AcquireFinal: {
      r.batch.abandon(store_);
      r.batch_active = false;
      r.phase = Phase::Backoff;
      const double d = r.backoff_ms;
      r.backoff_ms = std::min(config_.backoff_cap_ms, r.backoff_ms * 2);
      return StepOutcome::delay(d);
    }
    default:
      return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// Direct drivers

namespace {

StepOutcome drive(Engine& engine, InstanceId id, std::size_t max_timeouts) {
  std::size_t timeouts = 0;
  auto handle = [&](StepOutcome out) -> std::optional<StepOutcome> {
    switch (out.kind) {
      case StepOutcome::Kind::Continue:
        return std::nullopt;
      case StepOutcome::Kind::Delay:
        engine.advance_clock(out.delay_ms);
        return std::nullopt;
      default:
        return out;
    }
  };
  for (;;) {
    engine.take_woken();
    const StepOutcome out = engine.step(id);
    if (out.kind == StepOutcome::Kind::WaitLock) {
      if (++timeouts > max_timeouts) {
        throw std::runtime_error("instance " + std::to_string(id) + " starved on locks");
      }
      engine.advance_clock(std::max(0.0, out.delay_ms));
      if (auto t = engine.on_timeout(id, engine.wait_epoch(id))) {
        if (auto done = handle(*t)) return *done;
      }
      continue;
    }
    if (auto done = handle(out)) return *done;
  }
}

void require_mode(const Engine& engine, ProtocolMode mode) {
  if (engine.config().mode != mode) {
    throw std::logic_error(std::string("engine runs ") + to_string(engine.config().mode) + ", not " +
                           to_string(mode));
  }
}

}  // namespace

InstanceState mssr_run_initial(Engine& engine, InstanceId id) {
  require_mode(engine, ProtocolMode::MSSR);
  drive(engine, id, 1);
  return engine.instance(id).state;
}

InstanceState mssr_run_final(Engine& engine, InstanceId id, std::vector<LabelMatch> matches) {
  require_mode(engine, ProtocolMode::MSSR);
  if (engine.instance(id).state != InstanceState::InitialCommitted) {
    throw ProtocolViolation("final section requested before initial commit");
  }
  engine.deliver(id, std::move(matches));
  drive(engine, id, 0);
  return engine.instance(id).state;
}

InstanceState msia_run_initial(Engine& engine, InstanceId id) {
  require_mode(engine, ProtocolMode::MSIA);
  drive(engine, id, 1);
  return engine.instance(id).state;
}

ApologyReport msia_run_final(Engine& engine, InstanceId id, std::vector<LabelMatch> matches,
                             std::size_t max_retries) {
  require_mode(engine, ProtocolMode::MSIA);
  if (engine.instance(id).state != InstanceState::InitialCommitted) {
    throw ProtocolViolation("final section requested before initial commit");
  }
  engine.deliver(id, std::move(matches));
  drive(engine, id, max_retries);
  return *engine.instance(id).apology;
}

// ---------------------------------------------------------------------------
// Sequencer

bool footprints_conflict(std::span<const LockRequest> a, std::span<const LockRequest> b) {
  // Both inputs are normalized (sorted, unique keys).
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].key < b[j].key) {
      ++i;
    } else if (b[j].key < a[i].key) {
      ++j;
    } else {
      if (a[i].mode == LockMode::Exclusive || b[j].mode == LockMode::Exclusive) return true;
      ++i;
      ++j;
    }
  }
  return false;
}

std::size_t Schedule::size() const {
  std::size_t n = 0;
  for (const auto& b : batches) {
    for (const auto& w : b) n += w.size();
  }
  return n;
}

std::vector<InstanceId> Schedule::flattened() const {
  std::vector<InstanceId> out;
  for (const auto& b : batches) {
    for (const auto& w : b) out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

Schedule sequence_batch(std::span<const SequencedTxn> txns, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  Schedule out;
  for (std::size_t start = 0; start < txns.size(); start += batch_size) {
    const std::size_t end = std::min(txns.size(), start + batch_size);
    std::vector<std::size_t> wave_of(end - start, 0);
    std::size_t waves = 0;
    for (std::size_t i = start; i < end; ++i) {
      std::size_t w = 0;
      for (std::size_t j = start; j < i; ++j) {
        if (footprints_conflict(txns[i].footprint, txns[j].footprint)) w = std::max(w, wave_of[j - start] + 1);
      }
      wave_of[i - start] = w;
      waves = std::max(waves, w + 1);
    }
    std::vector<std::vector<InstanceId>> batch(waves);
    for (std::size_t i = start; i < end; ++i) batch[wave_of[i - start]].push_back(txns[i].id);
    out.batches.push_back(std::move(batch));
  }
  return out;
}

}  // namespace croesus
