#include "croesus/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>
#include <stdexcept>

namespace croesus {

void SimConfig::validate() const {
  auto non_negative = [](double v, const char* what) {
    if (!(v >= 0.0) || std::isinf(v)) throw std::invalid_argument(std::string(what) + " must be a finite value >= 0");
  };
  non_negative(latency.edge_detect_ms, "latency.edge_detect_ms");
  non_negative(latency.cloud_detect_ms, "latency.cloud_detect_ms");
  non_negative(latency.client_rtt_ms, "latency.client_rtt_ms");
  non_negative(latency.cloud_rtt_ms, "latency.cloud_rtt_ms");
  non_negative(latency.op_cost_ms, "latency.op_cost_ms");
  non_negative(lock_timeout_ms, "lock_timeout_ms");
  if (inter_edge_ms) non_negative(*inter_edge_ms, "inter_edge_ms");
  if (partitions < 1) throw std::invalid_argument("partitions must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(confidence_floor >= 0.0 && confidence_floor <= 1.0)) {
    throw std::invalid_argument("confidence_floor must be in [0,1]");
  }
  if (!(overlap_threshold >= 0.0 && overlap_threshold <= 1.0)) {
    throw std::invalid_argument("overlap_threshold must be in [0,1]");
  }
  if (!(vote_abort_probability >= 0.0 && vote_abort_probability <= 1.0)) {
    throw std::invalid_argument("vote_abort_probability must be in [0,1]");
  }
  if (use_sequencer && protocol != ProtocolMode::MSIA) {
    throw std::invalid_argument("use_sequencer needs protocol msia");
  }
  if (thresholds) thresholds->validate();
  if (bench.txns_per_batch < 1 || bench.updates_per_txn < 1) {
    throw std::invalid_argument("bench needs txns_per_batch >= 1 and updates_per_txn >= 1");
  }
  non_negative(bench.interval_ms, "bench.interval_ms");
  detector.validate();
  workload.validate();
}

EngineConfig SimConfig::engine_config() const {
  EngineConfig e;
  e.mode = protocol;
  e.partitions = partitions;
  // The sequencer orders conflicting instances itself; their lock waits are
  // bounded by that order, so they never time out.
  e.lock_timeout_ms = use_sequencer ? std::numeric_limits<double>::infinity() : lock_timeout_ms;
  e.op_cost_ms = latency.op_cost_ms;
  e.inter_edge_ms = inter_edge_ms.value_or(latency.cloud_rtt_ms / 2);
  e.vote_abort_probability = vote_abort_probability;
  e.seed = seed;
  return e;
}

LockHoldStats measure_lock_hold(const std::vector<LockSpan>& spans) {
  LockHoldStats s;
  double init = 0.0, fin = 0.0;
  for (const auto& sp : spans) {
    if (sp.section == SectionKind::Initial) {
      init += sp.released_ms - sp.granted_ms;
      ++s.initial_spans;
    } else {
      fin += sp.released_ms - sp.granted_ms;
      ++s.final_spans;
    }
  }
  if (s.initial_spans) s.mean_initial_ms = init / static_cast<double>(s.initial_spans);
  if (s.final_spans) s.mean_final_ms = fin / static_cast<double>(s.final_spans);
  return s;
}

namespace {

enum class EventKind2 : std::uint8_t { FrameArrives, EdgeDetected, CloudDetected, Step, LockTimeout, Flush };

struct Event {
  double time = 0.0;
  std::uint64_t seq = 0;
  EventKind2 kind = EventKind2::Step;
  std::size_t frame = 0;  // index into the trace
  InstanceId instance = 0;
  std::uint64_t token = 0;

  bool operator>(const Event& o) const { return time != o.time ? time > o.time : seq > o.seq; }
};

// Pushes instances through the engine on the event queue. Perception events
// (frames, detectors) are layered on top by run() and the benchmark.
class Driver {
 public:
  Driver(const TransactionsBank& bank, const SimConfig& config)
      : config_(config), engine_(bank, config.engine_config()) {}

  Engine& engine() { return engine_; }

  void schedule(Event ev) {
    ev.seq = next_seq_++;
    queue_.push(ev);
  }

  bool pop(Event& out) {
    if (queue_.empty()) return false;
    out = queue_.top();
    queue_.pop();
    engine_.set_now(std::max(engine_.now(), out.time));
    return true;
  }

  /// Admit a new instance. With the sequencer it waits for its wave.
  void admit(InstanceId id) {
    if (!config_.use_sequencer) {
      schedule_step(id, engine_.now());
      return;
    }
    pending_.push_back(id);
    if (pending_.size() >= config_.batch_size) {
      flush();
    } else if (!flush_scheduled_) {
      flush_scheduled_ = true;
      schedule({engine_.now(), 0, EventKind2::Flush, 0, 0, 0});
    }
  }

  void deliver(InstanceId id, std::vector<LabelMatch> matches) {
    if (engine_.instance(id).state == InstanceState::Aborted) return;
    engine_.deliver(id, std::move(matches));
    if (awaiting_cloud_.erase(id)) schedule_step(id, engine_.now());
  }

  // Returns true when the event belonged to the driver.
  bool handle(const Event& ev) {
    switch (ev.kind) {
      case EventKind2::Step:
        if (ev.token != tokens_[ev.instance]) return true;  // superseded
        advance(ev.instance);
        wake();
        return true;
      case EventKind2::LockTimeout:
        if (auto out = engine_.on_timeout(ev.instance, ev.token)) {
          ++timeouts_;
          after(ev.instance, *out);
        }
        wake();
        return true;
      case EventKind2::Flush:
        flush_scheduled_ = false;
        flush();
        return true;
      default:
        return false;
    }
  }

  std::optional<double> initial_done(InstanceId id) const {
    auto it = initial_done_.find(id);
    return it == initial_done_.end() ? std::nullopt : std::optional{it->second};
  }
  std::optional<double> final_done(InstanceId id) const {
    auto it = final_done_.find(id);
    return it == final_done_.end() ? std::nullopt : std::optional{it->second};
  }
  std::size_t timeouts() const { return timeouts_; }

  void require_quiescent() const {
    for (const auto& [id, inst] : engine_.instances()) {
      if (inst.state != InstanceState::FinalCommitted && inst.state != InstanceState::Aborted) {
        throw std::runtime_error("simulation drained with instance " + std::to_string(id) + " still " +
                                 to_string(inst.state));
      }
    }
  }

 private:
  void schedule_step(InstanceId id, double at) {
    schedule({at, 0, EventKind2::Step, 0, id, ++tokens_[id]});
  }

  void advance(InstanceId id) {
    for (;;) {
      const StepOutcome out = engine_.step(id);
      note_progress(id);
      if (out.kind == StepOutcome::Kind::Continue) continue;
      after(id, out);
      return;
    }
  }

  void after(InstanceId id, const StepOutcome& out) {
    note_progress(id);
    switch (out.kind) {
      case StepOutcome::Kind::Continue:
        schedule_step(id, engine_.now());
        break;
      case StepOutcome::Kind::Delay:
        schedule_step(id, engine_.now() + out.delay_ms);
        break;
      case StepOutcome::Kind::WaitLock:
        if (std::isfinite(out.delay_ms)) {
          schedule({engine_.now() + std::max(0.0, out.delay_ms), 0, EventKind2::LockTimeout, 0, id,
                    engine_.wait_epoch(id)});
        }
        break;
      case StepOutcome::Kind::WaitCloud:
        awaiting_cloud_.insert(id);
        break;
      case StepOutcome::Kind::Finished:
      case StepOutcome::Kind::Aborted:
        break;
    }
  }

  void wake() {
    for (InstanceId w : engine_.take_woken()) {
      if (engine_.waiting_on_lock(w)) schedule_step(w, engine_.now());
    }
  }

  void note_progress(InstanceId id) {
    const auto state = engine_.instance(id).state;
    if (state != InstanceState::Pending && !initial_done_.contains(id)) {
      initial_done_[id] = engine_.now();
      wave_member_done(id);
    }
    if (state == InstanceState::FinalCommitted && !final_done_.contains(id)) final_done_[id] = engine_.now();
  }

  // -- sequencer ---------------------------------------------------------

  void flush() {
    if (pending_.empty()) return;
    std::vector<SequencedTxn> txns;
    for (InstanceId id : pending_) txns.push_back({id, engine_.initial_footprint(id)});
    pending_.clear();
    for (auto& batch : sequence_batch(txns, config_.batch_size).batches) {
      for (auto& wave : batch) waves_.push(std::move(wave));
    }
    if (wave_left_ == 0) next_wave();
  }

  void next_wave() {
    while (wave_left_ == 0 && !waves_.empty()) {
      auto wave = std::move(waves_.front());
      waves_.pop();
      for (InstanceId id : wave) {
        in_wave_.insert(id);
        schedule_step(id, engine_.now());
      }
      wave_left_ = wave.size();
    }
  }

  void wave_member_done(InstanceId id) {
    if (!in_wave_.erase(id)) return;
    if (--wave_left_ == 0) next_wave();
  }

  const SimConfig& config_;
  Engine engine_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  std::uint64_t next_seq_ = 0;
  std::map<InstanceId, std::uint64_t> tokens_;
  std::set<InstanceId> awaiting_cloud_;
  std::map<InstanceId, double> initial_done_;
  std::map<InstanceId, double> final_done_;
  std::size_t timeouts_ = 0;

  std::vector<InstanceId> pending_;
  bool flush_scheduled_ = false;
  std::queue<std::vector<InstanceId>> waves_;
  std::set<InstanceId> in_wave_;
  std::size_t wave_left_ = 0;
};

int outcome_rank(const std::string& s) {
  if (s == "retracted") return 4;
  if (s == "corrected") return 3;
  if (s == "confirmed") return 2;
  if (s == "aborted") return 1;
  return 0;
}

}  // namespace

SimResult run(const std::vector<Frame>& trace, const TransactionsBank& bank,
              const std::function<void(Store&)>& seed_store, const SimConfig& config) {
  config.validate();
  SimResult result;
  Metrics& m = result.metrics;
  if (trace.empty()) return result;

  Driver driver(bank, config);
  Engine& engine = driver.engine();
  if (seed_store) seed_store(engine.store());

  struct FrameState {
    std::vector<Label> edge;     // after the floor
    std::vector<Label> trigger;  // edge minus discarded labels
    bool sent = false;
    double edge_done = 0.0;
    double cloud_done = -1.0;
    // instance -> positions of its labels in `trigger`
    std::vector<std::pair<InstanceId, std::vector<std::size_t>>> instances;
    std::set<InstanceId> cloud_born;  // not part of the initial response
  };
  std::vector<FrameState> frames(trace.size());
  TraceStats stats;

  const double half_client = config.latency.client_rtt_ms / 2;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    driver.schedule({trace[i].ts_ms + half_client, 0, EventKind2::FrameArrives, i, 0, 0});
  }

  auto positions = [](const std::vector<Label>& all, const std::vector<Label>& some) {
    std::vector<std::size_t> out;
    std::vector<bool> used(all.size(), false);
    for (const auto& l : some) {
      for (std::size_t k = 0; k < all.size(); ++k) {
        if (!used[k] && all[k] == l) {
          used[k] = true;
          out.push_back(k);
          break;
        }
      }
    }
    return out;
  };

  Event ev;
  while (driver.pop(ev)) {
    if (driver.handle(ev)) continue;
    const Frame& frame = trace[ev.frame];
    FrameState& fs = frames[ev.frame];
    switch (ev.kind) {
      case EventKind2::FrameArrives:
        driver.schedule({engine.now() + config.latency.edge_detect_ms, 0, EventKind2::EdgeDetected, ev.frame, 0, 0});
        break;

      case EventKind2::EdgeDetected: {
        fs.edge_done = engine.now();
        const auto raw = frame.recorded_edge ? *frame.recorded_edge : edge_detect(frame, config.detector);
        fs.edge = filter_low_confidence(raw, config.confidence_floor);
        for (const auto& l : fs.edge) {
          if (!config.thresholds || classify(l.confidence, *config.thresholds) != Decision::Discard) {
            fs.trigger.push_back(l);
          }
        }
        fs.sent = frame_sent_to_cloud(fs.edge, config.thresholds);
        for (const auto& b : bank.bind_triggers(fs.trigger, frame.aux)) {
          const InstanceId id = engine.create_instance(b.template_id, frame.id, b.labels, frame.aux);
          fs.instances.push_back({id, positions(fs.trigger, b.labels)});
          if (!fs.sent) driver.deliver(id, self_matches(b.labels));
          driver.admit(id);
        }
        if (fs.sent) {
          driver.schedule({engine.now() + config.latency.cloud_rtt_ms + config.latency.cloud_detect_ms, 0,
                           EventKind2::CloudDetected, ev.frame, 0, 0});
        }
        break;
      }

      case EventKind2::CloudDetected: {
        ++m.cloud_events;
        fs.cloud_done = engine.now();
        const auto cloud = cloud_detect(frame);
        const MatchOutcome mo = match_labels(fs.trigger, cloud, config.overlap_threshold);
        for (const auto& [id, pos] : fs.instances) {
          std::vector<LabelMatch> mine;
          for (std::size_t p : pos) mine.push_back(mo.matches[p]);
          driver.deliver(id, std::move(mine));
        }
        // Objects only the cloud saw start their own transactions.
        for (const auto& b : bank.bind_label_triggers(mo.unmatched_cloud)) {
          const InstanceId id = engine.create_instance(b.template_id, frame.id, b.labels, std::nullopt);
          fs.instances.push_back({id, {}});
          fs.cloud_born.insert(id);
          ++m.instances_from_cloud;
          driver.deliver(id, self_matches(b.labels));
          driver.admit(id);
        }
        break;
      }

      default:
        break;
    }
  }
  driver.require_quiescent();

  // -- metrics -----------------------------------------------------------
  m.frames = trace.size();
  double sum_init = 0.0, sum_final = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const FrameState& fs = frames[i];
    FrameRecord rec;
    rec.frame = trace[i].id;
    rec.sent_to_cloud = fs.sent;
    m.frames_sent += fs.sent ? 1 : 0;
    const double ts = trace[i].ts_ms;
    double init = fs.edge_done, fin = std::max(fs.edge_done, fs.cloud_done);
    std::string outcome = "none";
    for (const auto& [id, _] : fs.instances) {
      const auto& inst = engine.instance(id);
      ++m.instances;
      if (auto t = driver.initial_done(id)) {
        if (!fs.cloud_born.contains(id)) init = std::max(init, *t);
        fin = std::max(fin, *t);
      }
      if (auto t = driver.final_done(id)) fin = std::max(fin, *t);
      std::string o = "aborted";
      if (inst.state == InstanceState::Aborted) {
        ++m.aborted;
      } else {
        ++m.final_committed;
        o = inst.apology ? to_string(inst.apology->outcome) : "confirmed";
        ++m.apologies[o];
      }
      if (outcome_rank(o) > outcome_rank(outcome)) outcome = o;
    }
    rec.initial_latency_ms = init + half_client - ts;
    rec.final_latency_ms = fin + half_client - ts;
    rec.apology_outcome = outcome;
    sum_init += rec.initial_latency_ms;
    sum_final += rec.final_latency_ms;
    m.max_initial_latency_ms = std::max(m.max_initial_latency_ms, rec.initial_latency_ms);
    m.max_final_latency_ms = std::max(m.max_final_latency_ms, rec.final_latency_ms);
    result.frames.push_back(rec);
    stats.frames.push_back({trace[i].id, fs.edge, cloud_detect(trace[i])});
  }
  m.mean_initial_latency_ms = sum_init / static_cast<double>(m.frames);
  m.mean_final_latency_ms = sum_final / static_cast<double>(m.frames);
  m.bandwidth_utilization = static_cast<double>(m.frames_sent) / static_cast<double>(m.frames);
  m.accuracy = end_to_end_fscore(stats, config.thresholds);
  m.abort_rate = m.instances ? static_cast<double>(m.aborted) / static_cast<double>(m.instances) : 0.0;
  m.lock_hold = measure_lock_hold(engine.lock_spans());
  m.lock_timeouts = driver.timeouts();
  m.commit_rounds = engine.commit_rounds().size();

  result.history = engine.history().events();
  result.spans = engine.lock_spans();
  return result;
}

// ---------------------------------------------------------------------------
// Contention benchmark

ContentionPoint contention_bench(std::uint64_t key_range, const SimConfig& config) {
  config.validate();
  TransactionsBank bank;
  bank.register_template(hotspot_template(config.bench.updates_per_txn));
  Driver driver(bank, config);
  Engine& engine = driver.engine();

  // Arrivals and cloud deliveries share the queue with the driver's events;
  // they are told apart by kind.
  for (std::size_t b = 0; b < config.bench.batches; ++b) {
    driver.schedule({static_cast<double>(b) * config.bench.interval_ms, 0, EventKind2::FrameArrives, b, 0, 0});
  }
  const double cloud = config.latency.cloud_rtt_ms + config.latency.cloud_detect_ms;

  Event ev;
  while (driver.pop(ev)) {
    if (driver.handle(ev)) continue;
    if (ev.kind == EventKind2::FrameArrives) {
      const auto sets = gen_hotspot(key_range, config.bench.txns_per_batch, config.bench.updates_per_txn,
                                    config.seed * 1000003ULL + ev.frame);
      for (const auto& keys : sets) {
        const InstanceId id = engine.create_instance(kHotSpotTemplate, ev.frame, {}, std::nullopt, hotspot_params(keys));
        driver.admit(id);
        driver.schedule({engine.now() + cloud, 0, EventKind2::CloudDetected, 0, id, 0});
      }
    } else if (ev.kind == EventKind2::CloudDetected) {
      driver.deliver(ev.instance, {});
    }
  }
  driver.require_quiescent();

  ContentionPoint p;
  p.key_range = key_range;
  p.protocol = config.protocol;
  for (const auto& [id, inst] : engine.instances()) {
    ++p.instances;
    if (inst.state == InstanceState::Aborted) ++p.aborted;
  }
  p.abort_rate = p.instances ? static_cast<double>(p.aborted) / static_cast<double>(p.instances) : 0.0;
  p.lock_hold = measure_lock_hold(engine.lock_spans());
  return p;
}

std::vector<ContentionPoint> contention_curve(const std::vector<std::uint64_t>& key_ranges, const SimConfig& config) {
  std::vector<ContentionPoint> out;
  for (auto r : key_ranges) out.push_back(contention_bench(r, config));
  return out;
}

}  // namespace croesus
