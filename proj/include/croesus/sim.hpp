#pragma once

// Discrete-event simulation of the edge/cloud pipeline on logical
// milliseconds. Events fire in (time, insertion order); nothing reads the
// wall clock, so a run is a pure function of (trace, config).

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "croesus/cc.hpp"
#include "croesus/detect.hpp"
#include "croesus/thresholds.hpp"
#include "croesus/workload.hpp"

namespace croesus {

struct LatencyModel {
  double edge_detect_ms = 90.0;
  double cloud_detect_ms = 1200.0;
  double client_rtt_ms = 60.0;  // client <-> edge round trip
  double cloud_rtt_ms = 60.0;   // edge <-> cloud round trip
  double op_cost_ms = 0.05;
};

struct BenchConfig {
  std::size_t batches = 20;
  std::size_t txns_per_batch = 50;
  std::size_t updates_per_txn = 5;
  double interval_ms = 100.0;
};

struct SimConfig {
  std::uint64_t seed = 1;
  ProtocolMode protocol = ProtocolMode::MSIA;
  LatencyModel latency;
  std::optional<ThresholdPair> thresholds;  // absent: every frame goes to the cloud
  double confidence_floor = 0.1;
  double overlap_threshold = kDefaultOverlapThreshold;
  double lock_timeout_ms = 50.0;
  std::size_t batch_size = 50;
  bool use_sequencer = false;  // MSIA only
  std::size_t partitions = 1;
  /// Edge-to-edge one-way latency; defaults to cloud_rtt / 2.
  std::optional<double> inter_edge_ms;
  double vote_abort_probability = 0.0;
  EdgeDetectorConfig detector;
  WorkloadSpec workload;
  BenchConfig bench;

  void validate() const;
  EngineConfig engine_config() const;
};

struct LockHoldStats {
  double mean_initial_ms = 0.0;  // MSSR: grant to final commit
  double mean_final_ms = 0.0;
  std::size_t initial_spans = 0;
  std::size_t final_spans = 0;
};

/// Mean lock hold per section kind over the completed spans.
LockHoldStats measure_lock_hold(const std::vector<LockSpan>& spans);

struct FrameRecord {
  FrameId frame = 0;
  double initial_latency_ms = 0.0;
  double final_latency_ms = 0.0;
  bool sent_to_cloud = false;
  std::string apology_outcome;  // none, aborted, confirmed, corrected, retracted
};

struct Metrics {
  std::size_t frames = 0;
  std::size_t frames_sent = 0;
  std::size_t instances = 0;
  std::size_t instances_from_cloud = 0;  // triggered by labels only the cloud saw
  std::size_t aborted = 0;
  std::size_t final_committed = 0;
  double bandwidth_utilization = 0.0;
  FScore accuracy{0.0, 0.0, 0.0};
  double abort_rate = 0.0;
  double mean_initial_latency_ms = 0.0;
  double mean_final_latency_ms = 0.0;
  double max_initial_latency_ms = 0.0;
  double max_final_latency_ms = 0.0;
  LockHoldStats lock_hold;
  std::map<std::string, std::size_t> apologies;  // by outcome
  std::size_t cloud_events = 0;
  std::size_t lock_timeouts = 0;
  std::size_t commit_rounds = 0;
};

struct SimResult {
  Metrics metrics;
  std::vector<SectionEvent> history;
  std::vector<FrameRecord> frames;
  std::vector<LockSpan> spans;
};

/// Runs the whole trace. `seed_store` initializes application data.
SimResult run(const std::vector<Frame>& trace, const TransactionsBank& bank,
              const std::function<void(Store&)>& seed_store, const SimConfig& config);

struct ContentionPoint {
  std::uint64_t key_range = 0;
  ProtocolMode protocol = ProtocolMode::MSSR;
  std::size_t instances = 0;
  std::size_t aborted = 0;
  double abort_rate = 0.0;
  LockHoldStats lock_hold;
};

/// Hot-spot update batches (config.bench) arriving every interval_ms; the
/// final input of each instance shows up cloud latency after its arrival.
ContentionPoint contention_bench(std::uint64_t key_range, const SimConfig& config);
std::vector<ContentionPoint> contention_curve(const std::vector<std::uint64_t>& key_ranges, const SimConfig& config);

}  // namespace croesus
