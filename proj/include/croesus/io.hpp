#pragma once

// File formats: JSONL traces and histories, the JSON run configuration,
// metrics and CSV outputs.

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "croesus/sim.hpp"
#include "croesus/thresholds.hpp"
#include "croesus/txn.hpp"

namespace croesus {

using ojson = nlohmann::ordered_json;

/// Malformed or invalid configuration. what() names the line when known.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed JSONL input (trace or history); what() names the line.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path);  // throws std::runtime_error
void write_file(const std::string& path, const std::string& bytes);

// Trace lines:
//   {"frame_id":3,"ts_ms":300,"objects":[{"name":"car","box":[x0,y0,x1,y1]}],
//    "aux":"click" | {"kind":"transfer","params":{...}},
//    "edge":[{"name":"car","confidence":0.8,"box":[...]}]}
// "aux" and "edge" are optional.
std::vector<Frame> parse_trace(const std::string& text);
std::string format_trace(const std::vector<Frame>& frames);

// History lines:
//   {"seq":1,"instance":4,"section":"initial","event":"commit","time_ms":12.5,
//    "reads":[{"key":"x","version":2}],"writes":[...]}
// Parsing does not re-validate the ordering; checkers do.
std::vector<SectionEvent> parse_history(const std::string& text);
std::string format_history(const std::vector<SectionEvent>& events);

/// Parses and validates a configuration. `env_seed` (CROESUS_SEED) wins over
/// the file's seed when set.
SimConfig parse_config(const std::string& text, const char* env_seed = nullptr);
SimConfig load_config(const std::string& path);  // reads CROESUS_SEED itself
/// Every field with its effective value, defaults included.
ojson config_to_json(const SimConfig& config);

ojson metrics_to_json(const Metrics& metrics);
std::string frames_csv(const std::vector<FrameRecord>& frames);
std::string heatmap_csv(const std::vector<GridPoint>& points);
ojson optimum_to_json(const OptimizationResult& result);

std::string sha256_hex(const std::string& bytes);
/// Shortest round-trip decimal form of a double, as used in every CSV.
std::string format_number(double v);

}  // namespace croesus
