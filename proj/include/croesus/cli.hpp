#pragma once

// Commands behind tools/croesus. Each returns a process exit code and
// writes its diagnostics to `log`.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "croesus/detect.hpp"

namespace croesus {

inline constexpr const char* kToolVersion = "croesus 0.1.0";

// exit codes
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;   // bad config or arguments
inline constexpr int kExitInput = 2;    // missing or malformed trace
inline constexpr int kExitHistory = 3;  // unreadable history (check only)

int cmd_run_sim(const std::string& config_path, const std::string& trace_path, const std::string& out_dir,
                std::ostream& log);

/// `config_path` is optional; without it the detector and overlap defaults apply.
int cmd_optimize(const std::string& trace_path, double mu, const std::string& method, double grid_step,
                 const std::string& out_dir, const std::optional<std::string>& config_path, std::uint64_t seed,
                 std::ostream& log);

/// mode: mssr, msia or serial. Exit 0 iff no violations, 1 when there are.
int cmd_check(const std::string& history_path, const std::string& mode, std::ostream& out, std::ostream& log);

/// Runs every range under MSSR and under MSIA with the sequencer.
int cmd_bench_contention(const std::string& config_path, const std::vector<std::uint64_t>& key_ranges,
                         const std::string& out_dir, std::ostream& log);

int cmd_gen_trace(const std::string& profile, std::size_t frames, std::uint64_t seed, const std::string& out_path,
                  std::ostream& log);

/// street_vehicles, pedestrians, mall, runway, park.
std::vector<std::string> trace_profiles();
/// Seeded synthetic trace with recorded edge detections. Throws
/// std::invalid_argument for an unknown profile.
std::vector<Frame> generate_trace(const std::string& profile, std::size_t frames, std::uint64_t seed);

/// "1000,10K,1e5" style list; K and M suffixes allowed.
std::vector<std::uint64_t> parse_ranges(const std::string& text);

}  // namespace croesus
