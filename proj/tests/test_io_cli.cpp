#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "croesus/cli.hpp"
#include "croesus/io.hpp"
#include "support/interleaver.hpp"
#include "support/tmpdir.hpp"

using namespace croesus;
namespace fs = std::filesystem;

namespace {

std::string message_of(const std::string& text, const char* env = nullptr) {
  try {
    parse_config(text, env);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

// Two instances touching x; `swap` puts instance 2's final commit before
// its own initial commit.
std::string small_history(bool swap) {
  std::vector<SectionEvent> ev;
  auto add = [&](InstanceId id, SectionKind s, EventKind k, std::vector<Access> r = {}, std::vector<Access> w = {}) {
    ev.push_back({ev.size() + 1, id, s, k, static_cast<double>(ev.size()), std::move(r), std::move(w)});
  };
  add(1, SectionKind::Initial, EventKind::Begin);
  add(1, SectionKind::Initial, EventKind::Commit, {{"x", 0}}, {{"s1", 1}});
  add(1, SectionKind::Final, EventKind::Begin);
  add(1, SectionKind::Final, EventKind::Commit, {}, {{"x", 1}});
  add(2, SectionKind::Initial, EventKind::Begin);
  add(2, SectionKind::Initial, EventKind::Commit, {{"x", 1}}, {{"s2", 1}});
  add(2, SectionKind::Final, EventKind::Begin);
  add(2, SectionKind::Final, EventKind::Commit, {}, {{"x", 2}});
  if (swap) std::swap(ev[5].seq, ev[7].seq);
  return format_history(ev);
}

}  // namespace

TEST(ConfigFile, DefaultsWhenEmpty) {
  const auto c = parse_config("{}");
  EXPECT_EQ(c.protocol, ProtocolMode::MSIA);
  EXPECT_FALSE(c.thresholds.has_value());
  EXPECT_EQ(c.detector.seed, c.seed);
}

TEST(ConfigFile, ReadsNestedFields) {
  const auto c = parse_config(R"({"seed": 9, "protocol": "mssr", "thresholds": {"low": 0.3, "high": 0.7},
    "latency": {"cloud_detect_ms": 500}, "workload": {"kind": "hotspot", "key_range": 1000}})");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.protocol, ProtocolMode::MSSR);
  EXPECT_EQ(c.thresholds->theta_high, 0.7);
  EXPECT_EQ(c.latency.cloud_detect_ms, 500.0);
  EXPECT_EQ(c.workload.kind, WorkloadKind::HotSpot);
  EXPECT_EQ(c.workload.seed, 9u);
}

TEST(ConfigFile, ErrorsNameTheProblem) {
  EXPECT_NE(message_of("{\n  \"seed\": ,\n}").find("config line 2"), std::string::npos);
  EXPECT_NE(message_of(R"({"sede": 1})").find("unknown field"), std::string::npos);
  EXPECT_NE(message_of(R"({"latency": {"edge_ms": 1}})").find("latency.edge_ms"), std::string::npos);
  EXPECT_NE(message_of(R"({"seed": "one"})").find("seed"), std::string::npos);
  EXPECT_NE(message_of(R"({"thresholds": {"low": 0.8, "high": 0.2}})"), "");
  EXPECT_NE(message_of(R"({"protocol": "2pl"})").find("protocol"), std::string::npos);
  EXPECT_NE(message_of(R"({"protocol": "mssr", "use_sequencer": true})"), "");
}

TEST(ConfigFile, EnvironmentSeedWins) {
  EXPECT_EQ(parse_config(R"({"seed": 3})", "11").seed, 11u);
  EXPECT_EQ(parse_config(R"({"seed": 3})", "11").detector.seed, 11u);
  EXPECT_NE(message_of("{}", "eleven").find("CROESUS_SEED"), std::string::npos);
}

TEST(ConfigFile, EffectiveConfigRoundTrips) {
  const auto c = parse_config(R"({"seed": 4, "thresholds": {"low": 0.25, "high": 0.75}})");
  const auto again = parse_config(config_to_json(c).dump());
  EXPECT_EQ(config_to_json(again).dump(), config_to_json(c).dump());
}

TEST(TraceFile, RoundTrip) {
  const auto trace = generate_trace("park", 15, 2);
  const auto back = parse_trace(format_trace(trace));
  ASSERT_EQ(back.size(), trace.size());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    EXPECT_EQ(back[i].truth, trace[i].truth);
    EXPECT_EQ(back[i].recorded_edge, trace[i].recorded_edge);
    EXPECT_EQ(back[i].ts_ms, trace[i].ts_ms);
  }
}

TEST(TraceFile, RejectsBadLines) {
  EXPECT_THROW(parse_trace("{\"ts_ms\": 1}\n"), FormatError);
  EXPECT_THROW(parse_trace("{\"frame_id\": 1, \"objects\": [{\"name\": \"a\", \"box\": [0.5, 0, 0.2, 1]}]}\n"),
               FormatError);
  try {
    parse_trace("{\"frame_id\": 0}\n\nnot json\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(HistoryFile, RoundTrip) {
  const auto text = small_history(false);
  EXPECT_EQ(format_history(parse_history(text)), text);
  EXPECT_THROW(parse_history("{\"seq\": 1}\n"), FormatError);
}

TEST(Numbers, ShortestForm) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(2.0), "2.0");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Ranges, Suffixes) {
  EXPECT_EQ(parse_ranges("1K,10K,1e5"), (std::vector<std::uint64_t>{1000, 10000, 100000}));
  EXPECT_EQ(parse_ranges("2M"), (std::vector<std::uint64_t>{2000000}));
  EXPECT_THROW(parse_ranges("ten"), std::invalid_argument);
  EXPECT_THROW(parse_ranges(""), std::invalid_argument);
}

TEST(Cli, RunSimWritesItsOutputs) {
  harness::TempDir d;
  std::ostringstream log;
  ASSERT_EQ(cmd_gen_trace("street_vehicles", 30, 1, d / "trace.jsonl", log), kExitOk);
  write_file(d / "config.json", R"({"seed": 2, "thresholds": {"low": 0.4, "high": 0.7}})");
  ASSERT_EQ(cmd_run_sim(d / "config.json", d / "trace.jsonl", d / "out", log), kExitOk) << log.str();
  for (const char* f : {"metrics.json", "history.jsonl", "frames.csv", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(d.path / "out" / f)) << f;
  }
  const auto manifest = ojson::parse(read_file(d / "out/manifest.json"));
  EXPECT_EQ(manifest["seed"], 2);
  EXPECT_EQ(manifest["outputs"]["metrics.json"], sha256_hex(read_file(d / "out/metrics.json")));
  EXPECT_EQ(manifest["history_violations"], 0);
  const auto frames = read_file(d / "out/frames.csv");
  EXPECT_EQ(frames.substr(0, frames.find('\n')), "frame_id,initial_latency_ms,final_latency_ms,sent_to_cloud,apology_outcome");

  // the recorded history passes the offline checker
  std::ostringstream out;
  EXPECT_EQ(cmd_check(d / "out/history.jsonl", "msia", out, log), kExitOk) << out.str();
}

TEST(Cli, RunSimExitCodes) {
  harness::TempDir d;
  std::ostringstream log;
  write_file(d / "bad.json", "{\n  \"seed\": 1,\n  oops\n}");
  write_file(d / "ok.json", "{}");
  write_file(d / "trace.jsonl", "{\"frame_id\": 0}\n");
  EXPECT_EQ(cmd_run_sim(d / "bad.json", d / "trace.jsonl", d / "out", log), kExitConfig);
  EXPECT_NE(log.str().find("line 3"), std::string::npos) << log.str();
  EXPECT_EQ(cmd_run_sim(d / "ok.json", d / "missing.jsonl", d / "out", log), kExitInput);
  write_file(d / "broken.jsonl", "{\"frame_id\": 0}\n{\"frame_id\": \n");
  EXPECT_EQ(cmd_run_sim(d / "ok.json", d / "broken.jsonl", d / "out", log), kExitInput);
}

TEST(Cli, CheckReportsOrderViolations) {
  harness::TempDir d;
  std::ostringstream out, log;
  write_file(d / "good.jsonl", small_history(false));
  write_file(d / "swapped.jsonl", small_history(true));
  EXPECT_EQ(cmd_check(d / "good.jsonl", "mssr", out, log), kExitOk);
  out.str("");
  EXPECT_EQ(cmd_check(d / "swapped.jsonl", "msia", out, log), 1);
  EXPECT_NE(out.str().find("MSIAOrder"), std::string::npos) << out.str();
  EXPECT_EQ(cmd_check(d / "nothing.jsonl", "msia", out, log), kExitHistory);
  write_file(d / "cut.jsonl", "{\"seq\":1,\"instance\":1,\"section\":\"initial\",\"event\":\"begin\",\"time_ms\":0}\n");
  EXPECT_EQ(cmd_check(d / "cut.jsonl", "msia", out, log), kExitHistory);
}

TEST(Cli, OptimizeWritesHeatmapAndOptimum) {
  harness::TempDir d;
  std::ostringstream log;
  ASSERT_EQ(cmd_gen_trace("runway", 40, 5, d / "t.jsonl", log), kExitOk);
  ASSERT_EQ(cmd_optimize(d / "t.jsonl", 0.8, "brute", 0.05, d / "o", std::nullopt, 1, log), kExitOk) << log.str();
  const auto opt = ojson::parse(read_file(d / "o/optimum.json"));
  EXPECT_EQ(opt["method"], "brute");
  EXPECT_EQ(opt["evaluations"], 210);
  EXPECT_EQ(opt["feasible"], true);
  const auto heat = read_file(d / "o/heatmap.csv");
  EXPECT_EQ(std::count(heat.begin(), heat.end(), '\n'), 211);
  EXPECT_EQ(cmd_optimize(d / "t.jsonl", 0.8, "newton", 0.05, d / "o", std::nullopt, 1, log), kExitConfig);
  EXPECT_EQ(cmd_optimize(d / "none.jsonl", 0.8, "brute", 0.05, d / "o", std::nullopt, 1, log), kExitInput);
}

TEST(Cli, GenTraceIsSeeded) {
  harness::TempDir d;
  std::ostringstream log;
  cmd_gen_trace("mall", 20, 3, d / "a", log);
  cmd_gen_trace("mall", 20, 3, d / "b", log);
  cmd_gen_trace("mall", 20, 4, d / "c", log);
  EXPECT_EQ(read_file(d / "a"), read_file(d / "b"));
  EXPECT_NE(read_file(d / "a"), read_file(d / "c"));
  EXPECT_THROW(generate_trace("moon", 5, 1), std::invalid_argument);
}

TEST(Cli, BenchContentionCsv) {
  harness::TempDir d;
  std::ostringstream log;
  write_file(d / "c.json", R"({"bench": {"batches": 3}})");
  ASSERT_EQ(cmd_bench_contention(d / "c.json", {1000, 100000}, d / "b", log), kExitOk) << log.str();
  const auto csv = read_file(d / "b/abort_rate.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "key_range,protocol,instances,aborted,abort_rate");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_TRUE(fs::exists(d.path / "b/lockhold.csv"));
}

TEST(Cli, CheckFlagsTheWeakenedAnomaly) {
  harness::TempDir d;
  std::ostringstream out, log;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    TransactionsBank bank;
    bank.register_template(increment_template());
    Engine e(bank, {.mode = ProtocolMode::MSSR, .seed = seed, .weakened_for_testing = true});
    e.store().seed("x", std::int64_t{0});
    std::vector<InstanceId> ids;
    for (int i = 0; i < 2; ++i) {
      ids.push_back(e.create_instance(kIncrementTemplate, i, {}, AuxInput{"increment", {}}, {{"key", "x"}}));
    }
    harness::interleave(e, ids, seed, {.retry_aborted = true});
    if (payload_as_int(e.store().peek("x")->payload) != 1) continue;
    write_file(d / "h.jsonl", format_history(e.history().events()));
    EXPECT_EQ(cmd_check(d / "h.jsonl", "mssr", out, log), 1);
    EXPECT_NE(out.str().find("MSSRb"), std::string::npos) << out.str();
    return;
  }
  FAIL() << "no lost increment in 100 seeds";
}

TEST(Cli, BenchTrendAndSingleTransaction) {
  harness::TempDir d;
  std::ostringstream log;
  write_file(d / "one.json", R"({"bench": {"batches": 1, "txns_per_batch": 1}})");
  ASSERT_EQ(cmd_bench_contention(d / "one.json", {1000}, d / "one", log), kExitOk);
  EXPECT_NE(read_file(d / "one/abort_rate.csv").find("1000,mssr,1,0,0.0"), std::string::npos)
      << read_file(d / "one/abort_rate.csv");

  SimConfig c;
  c.protocol = ProtocolMode::MSSR;
  c.bench.batches = 8;
  const auto curve = contention_curve({1000, 10000, 100000}, c);
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_GE(curve[0].abort_rate, curve[1].abort_rate);
  EXPECT_GE(curve[1].abort_rate, curve[2].abort_rate);
  EXPECT_GT(curve[0].abort_rate, curve[2].abort_rate);
}
