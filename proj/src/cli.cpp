#include "croesus/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>

#include "croesus/checker.hpp"
#include "croesus/io.hpp"
#include "croesus/sim.hpp"
#include "croesus/thresholds.hpp"
#include "croesus/workload.hpp"

namespace croesus {

namespace fs = std::filesystem;

namespace {

std::optional<std::vector<Frame>> load_trace(const std::string& path, std::ostream& log) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return std::nullopt;
  }
  try {
    return parse_trace(text);
  } catch (const FormatError& e) {
    log << "error: " << path << ": " << e.what() << "\n";
    return std::nullopt;
  }
}

std::vector<std::string> vocabulary(const std::vector<Frame>& trace) {
  std::set<std::string> names;
  for (const auto& f : trace) {
    for (const auto& l : f.truth) names.insert(l.name);
    if (f.recorded_edge) {
      for (const auto& l : *f.recorded_edge) names.insert(l.name);
    }
  }
  return {names.begin(), names.end()};
}

// Writes every (name, bytes) pair and returns their digests for the manifest.
ojson write_outputs(const fs::path& dir, const std::vector<std::pair<std::string, std::string>>& files) {
  fs::create_directories(dir);
  ojson digests = ojson::object();
  for (const auto& [name, bytes] : files) {
    write_file((dir / name).string(), bytes);
    digests[name] = sha256_hex(bytes);
  }
  return digests;
}

void write_manifest(const fs::path& dir, ojson manifest) {
  manifest["tool_version"] = kToolVersion;
  write_file((dir / "manifest.json").string(), manifest.dump(2) + "\n");
}

ojson input_entry(const std::string& path) {
  return {{"path", path}, {"sha256", sha256_hex(read_file(path))}};
}

void print_violations(const std::vector<Violation>& vs, std::ostream& out) {
  for (const auto& v : vs) {
    out << to_string(v.kind) << " instances=";
    for (std::size_t i = 0; i < v.instances.size(); ++i) out << (i ? "," : "") << v.instances[i];
    out << " seq=";
    for (std::size_t i = 0; i < v.witness.size(); ++i) out << (i ? "," : "") << v.witness[i];
    if (!v.detail.empty()) out << " " << v.detail;
    out << "\n";
  }
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_run_sim(const std::string& config_path, const std::string& trace_path, const std::string& out_dir,
                std::ostream& log) {
  SimConfig config;
  try {
    config = load_config(config_path);
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  auto trace = load_trace(trace_path, log);
  if (!trace) return kExitInput;

  SimResult res;
  try {
    auto wl = make_workload(config.workload, vocabulary(*trace));
    res = run(*trace, wl->bank, wl->seed, config);
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  // Every run is audited against the protocol's own guarantee.
  auto violations = config.protocol == ProtocolMode::MSSR ? check_mssr(res.history) : check_msia(res.history);
  if (config.protocol == ProtocolMode::MSSR) {
    auto more = check_section_serializability(res.history);
    violations.insert(violations.end(), more.begin(), more.end());
  }
  if (!violations.empty()) {
    log << "warning: history has " << violations.size() << " violation(s)\n";
    print_violations(violations, log);
  }

  const fs::path dir(out_dir);
  const auto effective = config_to_json(config);
  const auto digests = write_outputs(dir, {{"metrics.json", metrics_to_json(res.metrics).dump(2) + "\n"},
                                           {"history.jsonl", format_history(res.history)},
                                           {"frames.csv", frames_csv(res.frames)}});
  ojson manifest;
  manifest["command"] = "run-sim";
  manifest["seed"] = config.seed;
  manifest["config_digest"] = sha256_hex(effective.dump());
  manifest["config"] = effective;
  manifest["inputs"] = {{"config", input_entry(config_path)}, {"trace", input_entry(trace_path)}};
  manifest["outputs"] = digests;
  manifest["history_violations"] = violations.size();
  write_manifest(dir, manifest);
  log << "run-sim: " << res.metrics.frames << " frames, " << res.metrics.instances << " instances, abort rate "
      << format_number(res.metrics.abort_rate) << "\n";
  return kExitOk;
}

int cmd_optimize(const std::string& trace_path, double mu, const std::string& method, double grid_step,
                 const std::string& out_dir, const std::optional<std::string>& config_path, std::uint64_t seed,
                 std::ostream& log) {
  if (method != "brute" && method != "gradient") {
    log << "error: method must be brute or gradient\n";
    return kExitConfig;
  }
  SimConfig config;
  if (config_path) {
    try {
      config = load_config(*config_path);
    } catch (const ConfigError& e) {
      log << "error: " << e.what() << "\n";
      return kExitConfig;
    }
  }
  auto trace = load_trace(trace_path, log);
  if (!trace) return kExitInput;
  if (trace->empty()) {
    log << "error: " << trace_path << " holds no frames\n";
    return kExitInput;
  }

  OptimizationResult r;
  try {
    const auto stats = make_trace_stats(*trace, config.detector, config.confidence_floor);
    r = method == "brute" ? brute_force_optimize(stats, mu, grid_step) : gradient_optimize(stats, mu, grid_step, seed);
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  const fs::path dir(out_dir);
  const auto digests =
      write_outputs(dir, {{"heatmap.csv", heatmap_csv(r.visited)}, {"optimum.json", optimum_to_json(r).dump(2) + "\n"}});
  ojson manifest;
  manifest["command"] = "optimize";
  manifest["seed"] = seed;
  manifest["arguments"] = {{"mu", mu}, {"method", method}, {"grid_step", grid_step}};
  if (config_path) {
    const auto effective = config_to_json(config);
    manifest["config_digest"] = sha256_hex(effective.dump());
    manifest["config"] = effective;
    manifest["inputs"]["config"] = input_entry(*config_path);
  }
  manifest["inputs"]["trace"] = input_entry(trace_path);
  manifest["outputs"] = digests;
  write_manifest(dir, manifest);
  log << "optimize: (" << format_number(r.pair.theta_low) << ", " << format_number(r.pair.theta_high)
      << ") delta=" << format_number(r.delta) << " f=" << format_number(r.score.f)
      << (r.feasible ? "" : " INFEASIBLE") << " after " << r.evaluations << " evaluations\n";
  return kExitOk;
}

int cmd_check(const std::string& history_path, const std::string& mode, std::ostream& out, std::ostream& log) {
  if (mode != "mssr" && mode != "msia" && mode != "serial") {
    log << "error: mode must be mssr, msia or serial\n";
    return kExitInput;
  }
  std::vector<SectionEvent> history;
  try {
    history = parse_history(read_file(history_path));
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitHistory;
  }
  std::vector<Violation> vs;
  try {
    if (mode == "msia") {
      vs = check_msia(history);
    } else {
      vs = check_section_serializability(history);
      if (mode == "mssr") {
        auto more = check_mssr(history);
        vs.insert(vs.end(), more.begin(), more.end());
      }
    }
  } catch (const IncompleteHistory& e) {
    log << "error: " << e.what() << "\n";
    return kExitHistory;
  }
  print_violations(vs, out);
  out << vs.size() << " violation(s)\n";
  return vs.empty() ? kExitOk : 1;
}

int cmd_bench_contention(const std::string& config_path, const std::vector<std::uint64_t>& key_ranges,
                         const std::string& out_dir, std::ostream& log) {
  SimConfig config;
  try {
    config = load_config(config_path);
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  if (key_ranges.empty()) {
    log << "error: no key ranges\n";
    return kExitConfig;
  }

  SimConfig mssr = config;
  mssr.protocol = ProtocolMode::MSSR;
  mssr.use_sequencer = false;
  SimConfig msia = config;
  msia.protocol = ProtocolMode::MSIA;
  msia.use_sequencer = true;

  std::string aborts = "key_range,protocol,instances,aborted,abort_rate\n";
  std::string holds = "key_range,protocol,mean_initial_hold_ms,mean_final_hold_ms\n";
  try {
    for (auto range : key_ranges) {
      for (const SimConfig* c : {&mssr, &msia}) {
        const auto p = contention_bench(range, *c);
        const std::string proto = to_string(p.protocol);
        aborts += std::to_string(range) + "," + proto + "," + std::to_string(p.instances) + "," +
                  std::to_string(p.aborted) + "," + format_number(p.abort_rate) + "\n";
        holds += std::to_string(range) + "," + proto + "," + format_number(p.lock_hold.mean_initial_ms) + "," +
                 format_number(p.lock_hold.mean_final_ms) + "\n";
        log << "bench: range " << range << " " << proto << " abort rate " << format_number(p.abort_rate) << "\n";
      }
    }
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  const fs::path dir(out_dir);
  const auto digests = write_outputs(dir, {{"abort_rate.csv", aborts}, {"lockhold.csv", holds}});
  const auto effective = config_to_json(config);
  ojson manifest;
  manifest["command"] = "bench-contention";
  manifest["seed"] = config.seed;
  manifest["config_digest"] = sha256_hex(effective.dump());
  manifest["config"] = effective;
  manifest["arguments"] = {{"ranges", key_ranges}};
  manifest["inputs"] = {{"config", input_entry(config_path)}};
  manifest["outputs"] = digests;
  write_manifest(dir, manifest);
  return kExitOk;
}

int cmd_gen_trace(const std::string& profile, std::size_t frames, std::uint64_t seed, const std::string& out_path,
                  std::ostream& log) {
  std::vector<Frame> trace;
  try {
    trace = generate_trace(profile, frames, seed);
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  const fs::path out(out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_file(out.string(), format_trace(trace));
  log << "gen-trace: " << trace.size() << " frames of " << profile << " to " << out_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Synthetic traces

namespace {

struct Profile {
  std::string name;
  std::vector<std::string> classes;
  std::size_t min_objects, max_objects;
  double min_size, max_size;  // box side, fraction of the frame
  double speed;               // per frame
  EdgeDetectorConfig detector;
};

// Object density and detector difficulty per scenario. Runway: few large,
// clear objects; mall: many small ones the edge model struggles with.
Profile profile_of(const std::string& name) {
  Profile p;
  if (name == "street_vehicles") {
    p = {name, {"car", "truck", "bus", "motorcycle"}, 3, 6, 0.08, 0.20, 0.02, {}};
    p.detector = {0.15, 0.05, 0.3, {8, 2}, {2, 3}, 0, {{"car", "truck", "bus"}, {"motorcycle", "bicycle"}}};
  } else if (name == "pedestrians") {
    p = {name, {"person", "bicycle", "dog"}, 4, 8, 0.04, 0.10, 0.01, {}};
    p.detector = {0.10, 0.10, 0.3, {7, 2}, {2, 3}, 0, {{"person", "mannequin"}, {"dog", "cat"}, {"bicycle"}}};
  } else if (name == "mall") {
    p = {name, {"person", "bag", "cart"}, 8, 14, 0.02, 0.06, 0.005, {}};
    p.detector = {0.30, 0.15, 0.6, {5, 3}, {3, 3}, 0, {{"person", "mannequin"}, {"bag", "box", "cart"}}};
  } else if (name == "runway") {
    p = {name, {"airplane", "truck"}, 1, 2, 0.30, 0.50, 0.01, {}};
    p.detector = {0.02, 0.0, 0.05, {20, 1}, {2, 3}, 0, {{"airplane", "bird"}, {"truck", "car"}}};
  } else if (name == "park") {
    p = {name, {"person", "dog", "bicycle", "frisbee"}, 2, 5, 0.05, 0.15, 0.015, {}};
    p.detector = {0.12, 0.08, 0.25, {8, 2}, {2, 3}, 0, {{"person"}, {"dog", "cat"}, {"bicycle"}, {"frisbee", "ball"}}};
  } else {
    throw std::invalid_argument("unknown trace profile '" + name + "'");
  }
  return p;
}

struct Track {
  std::string name;
  double cx, cy, w, h, vx, vy;
  std::size_t ttl;
};

}  // namespace

std::vector<std::string> trace_profiles() { return {"street_vehicles", "pedestrians", "mall", "runway", "park"}; }

std::vector<Frame> generate_trace(const std::string& profile, std::size_t frames, std::uint64_t seed) {
  const Profile p = profile_of(profile);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> size(p.min_size, p.max_size);
  std::uniform_int_distribution<std::size_t> cls(0, p.classes.size() - 1);
  std::uniform_int_distribution<std::size_t> count(p.min_objects, p.max_objects);
  std::uniform_int_distribution<std::size_t> life(10, 40);

  auto spawn = [&] {
    Track t;
    t.name = p.classes[cls(rng)];
    t.w = size(rng);
    t.h = size(rng);
    t.cx = t.w / 2 + unit(rng) * (1 - t.w);
    t.cy = t.h / 2 + unit(rng) * (1 - t.h);
    const double angle = unit(rng) * 6.283185307179586;
    t.vx = std::cos(angle) * p.speed;
    t.vy = std::sin(angle) * p.speed;
    t.ttl = life(rng);
    return t;
  };

  EdgeDetectorConfig det = p.detector;
  det.seed = seed;
  std::vector<Track> tracks;
  std::vector<Frame> out;
  out.reserve(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    std::erase_if(tracks, [](const Track& t) { return t.ttl == 0; });
    const std::size_t want = count(rng);
    while (tracks.size() < want) tracks.push_back(spawn());

    Frame f;
    f.id = i;
    f.ts_ms = static_cast<double>(i) * 100.0;
    for (auto& t : tracks) {
      // bounce off the frame edges
      if (t.cx + t.vx < t.w / 2 || t.cx + t.vx > 1 - t.w / 2) t.vx = -t.vx;
      if (t.cy + t.vy < t.h / 2 || t.cy + t.vy > 1 - t.h / 2) t.vy = -t.vy;
      t.cx = std::clamp(t.cx + t.vx, t.w / 2, 1 - t.w / 2);
      t.cy = std::clamp(t.cy + t.vy, t.h / 2, 1 - t.h / 2);
      --t.ttl;
      f.truth.push_back({t.name, 1.0, {t.cx - t.w / 2, t.cy - t.h / 2, t.cx + t.w / 2, t.cy + t.h / 2}});
    }
    f.recorded_edge = edge_detect(f, det);
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<std::uint64_t> parse_ranges(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    std::string tok = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    tok.erase(std::remove_if(tok.begin(), tok.end(), [](unsigned char c) { return std::isspace(c); }), tok.end());
    if (tok.empty()) throw std::invalid_argument("empty key range in '" + text + "'");
    double mult = 1;
    if (tok.back() == 'K' || tok.back() == 'k') {
      mult = 1e3;
      tok.pop_back();
    } else if (tok.back() == 'M' || tok.back() == 'm') {
      mult = 1e6;
      tok.pop_back();
    }
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad key range '" + tok + "'");
    }
    v *= mult;
    if (used != tok.size() || !(v >= 1) || v != std::floor(v) || v > 1e15) {
      throw std::invalid_argument("bad key range '" + tok + "'");
    }
    out.push_back(static_cast<std::uint64_t>(v));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace croesus
