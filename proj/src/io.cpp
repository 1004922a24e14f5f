#include "croesus/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace croesus {

using json = nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << bytes;
  if (!out) throw std::runtime_error("short write to " + path);
}

std::string format_number(double v) { return ojson(v).dump(); }

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return ss.str();
}

namespace {

// Lines of a JSONL document with their 1-based numbers; blank lines skipped.
std::vector<std::pair<std::size_t, std::string>> jsonl_lines(const std::string& text) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back({n, line});
  }
  return out;
}

BoundingBox box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("box must be [x0,y0,x1,y1]");
  BoundingBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!b.valid()) throw std::invalid_argument("box outside the unit square or empty");
  return b;
}

ojson box_json(const BoundingBox& b) { return ojson::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

}  // namespace

// ---------------------------------------------------------------------------
// Traces

std::vector<Frame> parse_trace(const std::string& text) {
  std::vector<Frame> out;
  for (const auto& [n, line] : jsonl_lines(text)) {
    try {
      const json j = json::parse(line);
      Frame f;
      f.id = j.at("frame_id").get<FrameId>();
      f.ts_ms = j.value("ts_ms", 0.0);
      for (const auto& o : j.value("objects", json::array())) {
        f.truth.push_back({o.at("name").get<std::string>(), 1.0, box_from(o.at("box"))});
      }
      if (j.contains("aux") && !j["aux"].is_null()) {
        const auto& a = j["aux"];
        AuxInput aux;
        if (a.is_string()) {
          aux.kind = a.get<std::string>();
        } else {
          aux.kind = a.at("kind").get<std::string>();
          for (const auto& [k, v] : a.value("params", json::object()).items()) {
            aux.params[k] = v.is_string() ? v.get<std::string>() : v.dump();
          }
        }
        f.aux = std::move(aux);
      }
      if (j.contains("edge") && !j["edge"].is_null()) {
        std::vector<Label> edge;
        for (const auto& e : j["edge"]) {
          const double c = e.at("confidence").get<double>();
          if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("confidence outside [0,1]");
          edge.push_back({e.at("name").get<std::string>(), c, box_from(e.at("box"))});
        }
        f.recorded_edge = std::move(edge);
      }
      out.push_back(std::move(f));
    } catch (const std::exception& e) {
      throw FormatError("trace line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::string format_trace(const std::vector<Frame>& frames) {
  std::string out;
  for (const auto& f : frames) {
    ojson j;
    j["frame_id"] = f.id;
    j["ts_ms"] = f.ts_ms;
    j["objects"] = ojson::array();
    for (const auto& o : f.truth) j["objects"].push_back({{"name", o.name}, {"box", box_json(o.box)}});
    if (f.aux) {
      if (f.aux->params.empty()) {
        j["aux"] = f.aux->kind;
      } else {
        j["aux"] = {{"kind", f.aux->kind}, {"params", f.aux->params}};
      }
    }
    if (f.recorded_edge) {
      j["edge"] = ojson::array();
      for (const auto& l : *f.recorded_edge) {
        j["edge"].push_back({{"name", l.name}, {"confidence", l.confidence}, {"box", box_json(l.box)}});
      }
    }
    out += j.dump() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Histories

namespace {

std::vector<Access> accesses_from(const json& j) {
  std::vector<Access> out;
  for (const auto& a : j) out.push_back({a.at("key").get<std::string>(), a.at("version").get<std::uint64_t>()});
  return out;
}

ojson accesses_json(const std::vector<Access>& v) {
  ojson out = ojson::array();
  for (const auto& a : v) out.push_back({{"key", a.key}, {"version", a.version}});
  return out;
}

}  // namespace

std::vector<SectionEvent> parse_history(const std::string& text) {
  std::vector<SectionEvent> out;
  for (const auto& [n, line] : jsonl_lines(text)) {
    try {
      const json j = json::parse(line);
      SectionEvent ev;
      ev.seq = j.at("seq").get<std::uint64_t>();
      ev.instance = j.at("instance").get<InstanceId>();
      const auto section = j.at("section").get<std::string>();
      if (section == "initial") {
        ev.section = SectionKind::Initial;
      } else if (section == "final") {
        ev.section = SectionKind::Final;
      } else {
        throw std::invalid_argument("section must be initial or final");
      }
      const auto kind = j.at("event").get<std::string>();
      if (kind == "begin") {
        ev.kind = EventKind::Begin;
      } else if (kind == "commit") {
        ev.kind = EventKind::Commit;
      } else if (kind == "abort") {
        ev.kind = EventKind::Abort;
      } else {
        throw std::invalid_argument("event must be begin, commit or abort");
      }
      ev.time_ms = j.value("time_ms", 0.0);
      ev.reads = accesses_from(j.value("reads", json::array()));
      ev.writes = accesses_from(j.value("writes", json::array()));
      out.push_back(std::move(ev));
    } catch (const std::exception& e) {
      throw FormatError("history line " + std::to_string(n) + ": " + e.what());
    }
  }
  std::set<std::uint64_t> seqs;
  for (const auto& ev : out) {
    if (!seqs.insert(ev.seq).second) throw FormatError("history repeats seq " + std::to_string(ev.seq));
  }
  return out;
}

std::string format_history(const std::vector<SectionEvent>& events) {
  std::string out;
  for (const auto& ev : events) {
    ojson j;
    j["seq"] = ev.seq;
    j["instance"] = ev.instance;
    j["section"] = to_string(ev.section);
    j["event"] = to_string(ev.kind);
    j["time_ms"] = ev.time_ms;
    j["reads"] = accesses_json(ev.reads);
    j["writes"] = accesses_json(ev.writes);
    out += j.dump() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

// Reads the fields of one JSON object and complains about the rest.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_[key];
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected true or false");
      } else if constexpr (std::is_arithmetic_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
        if constexpr (std::is_unsigned_v<T>) {
          if (!v.is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
        } else if constexpr (std::is_integral_v<T>) {
          if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        }
      }
      out = v.get<T>();
    } catch (const std::exception& e) {
      throw ConfigError(label() + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) return nullptr;
    return &j_[key];
  }

  std::string path(const char* key) const { return (where_.empty() ? "" : where_ + ".") + key; }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError("unknown field " + path(k.c_str()));
    }
  }

 private:
  std::string label() const { return where_.empty() ? "config" : where_; }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

BetaParams beta_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ConfigError(where + " must be [a, b]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(byte), '\n'));
}

}  // namespace

SimConfig parse_config(const std::string& text, const char* env_seed) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte is one past the offending character
    const std::size_t byte = e.byte > 0 ? e.byte - 1 : 0;
    throw ConfigError("config line " + std::to_string(line_of(text, byte)) + ": " + e.what());
  }

  SimConfig c;
  Fields top(root, "");
  top.get("seed", c.seed);
  if (const json* p = top.sub("protocol")) {
    try {
      c.protocol = parse_protocol(p->get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("protocol: ") + e.what());
    }
  }
  if (const json* l = top.sub("latency")) {
    Fields f(*l, "latency");
    f.get("edge_detect_ms", c.latency.edge_detect_ms);
    f.get("cloud_detect_ms", c.latency.cloud_detect_ms);
    f.get("client_rtt_ms", c.latency.client_rtt_ms);
    f.get("cloud_rtt_ms", c.latency.cloud_rtt_ms);
    f.get("op_cost_ms", c.latency.op_cost_ms);
    f.finish();
  }
  if (const json* t = top.sub("thresholds")) {
    Fields f(*t, "thresholds");
    ThresholdPair p;
    if (!f.has("low") || !f.has("high")) throw ConfigError("thresholds needs both low and high");
    f.get("low", p.theta_low);
    f.get("high", p.theta_high);
    f.finish();
    c.thresholds = p;
  }
  top.get("confidence_floor", c.confidence_floor);
  top.get("overlap_threshold", c.overlap_threshold);
  top.get("lock_timeout_ms", c.lock_timeout_ms);
  top.get("batch_size", c.batch_size);
  top.get("use_sequencer", c.use_sequencer);
  top.get("partitions", c.partitions);
  if (top.has("inter_edge_ms")) {
    double v = 0;
    top.get("inter_edge_ms", v);
    c.inter_edge_ms = v;
  } else {
    top.sub("inter_edge_ms");
  }
  top.get("vote_abort_probability", c.vote_abort_probability);

  bool detector_seed = false, workload_seed = false;
  if (const json* d = top.sub("detector")) {
    Fields f(*d, "detector");
    f.get("mislabel_rate", c.detector.mislabel_rate);
    f.get("miss_rate", c.detector.miss_rate);
    f.get("false_positive_rate", c.detector.false_positive_rate);
    if (const json* b = f.sub("correct_confidence")) c.detector.correct_confidence = beta_from(*b, "detector.correct_confidence");
    if (const json* b = f.sub("error_confidence")) c.detector.error_confidence = beta_from(*b, "detector.error_confidence");
    detector_seed = f.has("seed");
    f.get("seed", c.detector.seed);
    f.get("confusion_groups", c.detector.confusion_groups);
    f.finish();
  }
  if (const json* w = top.sub("workload")) {
    Fields f(*w, "workload");
    if (const json* k = f.sub("kind")) {
      try {
        c.workload.kind = parse_workload_kind(k->get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError(std::string("workload.kind: ") + e.what());
      }
    }
    f.get("ops_per_txn", c.workload.ops_per_txn);
    f.get("write_fraction", c.workload.write_fraction);
    f.get("key_range", c.workload.key_range);
    f.get("hotspot_size", c.workload.hotspot_size);
    workload_seed = f.has("seed");
    f.get("seed", c.workload.seed);
    f.get("classes", c.workload.classes);
    f.finish();
  }
  if (const json* b = top.sub("bench")) {
    Fields f(*b, "bench");
    f.get("batches", c.bench.batches);
    f.get("txns_per_batch", c.bench.txns_per_batch);
    f.get("updates_per_txn", c.bench.updates_per_txn);
    f.get("interval_ms", c.bench.interval_ms);
    f.finish();
  }
  top.finish();

  if (env_seed && *env_seed) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env_seed, &end, 10);
    if (*end != '\0') throw ConfigError(std::string("CROESUS_SEED is not an integer: ") + env_seed);
    c.seed = v;
  }
  // Nested seeds follow the top-level one unless given explicitly.
  if (!detector_seed) c.detector.seed = c.seed;
  if (!workload_seed) c.workload.seed = c.seed;

  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

SimConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, std::getenv("CROESUS_SEED"));
}

ojson config_to_json(const SimConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["protocol"] = to_string(c.protocol);
  j["latency"] = {{"edge_detect_ms", c.latency.edge_detect_ms},
                  {"cloud_detect_ms", c.latency.cloud_detect_ms},
                  {"client_rtt_ms", c.latency.client_rtt_ms},
                  {"cloud_rtt_ms", c.latency.cloud_rtt_ms},
                  {"op_cost_ms", c.latency.op_cost_ms}};
  j["thresholds"] = c.thresholds ? ojson{{"low", c.thresholds->theta_low}, {"high", c.thresholds->theta_high}}
                                 : ojson(nullptr);
  j["confidence_floor"] = c.confidence_floor;
  j["overlap_threshold"] = c.overlap_threshold;
  j["lock_timeout_ms"] = c.lock_timeout_ms;
  j["batch_size"] = c.batch_size;
  j["use_sequencer"] = c.use_sequencer;
  j["partitions"] = c.partitions;
  j["inter_edge_ms"] = c.engine_config().inter_edge_ms;
  j["vote_abort_probability"] = c.vote_abort_probability;
  j["detector"] = {{"mislabel_rate", c.detector.mislabel_rate},
                   {"miss_rate", c.detector.miss_rate},
                   {"false_positive_rate", c.detector.false_positive_rate},
                   {"correct_confidence", {c.detector.correct_confidence.a, c.detector.correct_confidence.b}},
                   {"error_confidence", {c.detector.error_confidence.a, c.detector.error_confidence.b}},
                   {"seed", c.detector.seed},
                   {"confusion_groups", c.detector.confusion_groups}};
  j["workload"] = {{"kind", to_string(c.workload.kind)},
                   {"ops_per_txn", c.workload.ops_per_txn},
                   {"write_fraction", c.workload.write_fraction},
                   {"key_range", c.workload.key_range},
                   {"hotspot_size", c.workload.hotspot_size},
                   {"seed", c.workload.seed},
                   {"classes", c.workload.classes}};
  j["bench"] = {{"batches", c.bench.batches},
                {"txns_per_batch", c.bench.txns_per_batch},
                {"updates_per_txn", c.bench.updates_per_txn},
                {"interval_ms", c.bench.interval_ms}};
  return j;
}

// ---------------------------------------------------------------------------
// Outputs

ojson metrics_to_json(const Metrics& m) {
  ojson j;
  j["frames"] = m.frames;
  j["frames_sent"] = m.frames_sent;
  j["bandwidth_utilization"] = m.bandwidth_utilization;
  j["precision"] = m.accuracy.precision;
  j["recall"] = m.accuracy.recall;
  j["fscore"] = m.accuracy.f;
  j["instances"] = m.instances;
  j["instances_from_cloud"] = m.instances_from_cloud;
  j["final_committed"] = m.final_committed;
  j["aborted"] = m.aborted;
  j["abort_rate"] = m.abort_rate;
  j["mean_initial_latency_ms"] = m.mean_initial_latency_ms;
  j["mean_final_latency_ms"] = m.mean_final_latency_ms;
  j["max_initial_latency_ms"] = m.max_initial_latency_ms;
  j["max_final_latency_ms"] = m.max_final_latency_ms;
  j["lock_hold"] = {{"mean_initial_ms", m.lock_hold.mean_initial_ms},
                    {"mean_final_ms", m.lock_hold.mean_final_ms},
                    {"initial_spans", m.lock_hold.initial_spans},
                    {"final_spans", m.lock_hold.final_spans}};
  ojson ap = ojson::object();
  for (const char* o : {"confirmed", "corrected", "retracted"}) {
    auto it = m.apologies.find(o);
    ap[o] = it == m.apologies.end() ? 0 : it->second;
  }
  j["apologies"] = ap;
  j["cloud_events"] = m.cloud_events;
  j["lock_timeouts"] = m.lock_timeouts;
  j["commit_rounds"] = m.commit_rounds;
  return j;
}

std::string frames_csv(const std::vector<FrameRecord>& frames) {
  std::string out = "frame_id,initial_latency_ms,final_latency_ms,sent_to_cloud,apology_outcome\n";
  for (const auto& f : frames) {
    out += std::to_string(f.frame) + "," + format_number(f.initial_latency_ms) + "," +
           format_number(f.final_latency_ms) + "," + (f.sent_to_cloud ? "1" : "0") + "," + f.apology_outcome + "\n";
  }
  return out;
}

std::string heatmap_csv(const std::vector<GridPoint>& points) {
  std::string out = "theta_low,theta_high,delta,precision,recall,fscore\n";
  for (const auto& p : points) {
    out += format_number(p.pair.theta_low) + "," + format_number(p.pair.theta_high) + "," + format_number(p.delta) +
           "," + format_number(p.score.precision) + "," + format_number(p.score.recall) + "," +
           format_number(p.score.f) + "\n";
  }
  return out;
}

ojson optimum_to_json(const OptimizationResult& r) {
  ojson j;
  j["pair"] = {{"theta_low", r.pair.theta_low}, {"theta_high", r.pair.theta_high}};
  j["delta"] = r.delta;
  j["fscore"] = r.score.f;
  j["precision"] = r.score.precision;
  j["recall"] = r.score.recall;
  j["mu"] = r.mu;
  j["feasible"] = r.feasible;
  j["method"] = to_string(r.method);
  j["evaluations"] = r.evaluations;
  return j;
}

}  // namespace croesus
