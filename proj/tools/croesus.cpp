// croesus: simulation, threshold optimization, history checking and
// contention benchmarks from the command line.

#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "croesus/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multi-stage edge/cloud transactions"};
  app.set_version_flag("--version", croesus::kToolVersion);
  app.require_subcommand(1);

  std::string config, trace, out = "out", history, mode, method = "brute", profile, ranges;
  double mu = 0.8, step = 0.05;
  std::size_t frames = 200;
  std::uint64_t seed = 1;
  std::optional<std::string> opt_config;

  auto* run = app.add_subcommand("run-sim", "simulate a trace end to end");
  run->add_option("--config", config, "config JSON")->required();
  run->add_option("--trace", trace, "JSONL trace")->required();
  run->add_option("--out", out, "output directory");

  auto* opt = app.add_subcommand("optimize", "search the threshold grid");
  opt->add_option("--trace", trace, "JSONL trace")->required();
  opt->add_option("--mu", mu, "minimum F-score");
  opt->add_option("--method", method, "brute or gradient")->check(CLI::IsMember({"brute", "gradient"}));
  opt->add_option("--grid-step", step, "grid spacing");
  opt->add_option("--seed", seed, "gradient start seed");
  opt->add_option("--config", opt_config, "detector settings");
  opt->add_option("--out", out, "output directory");

  auto* check = app.add_subcommand("check", "verify a recorded history");
  check->add_option("--history", history, "history JSONL")->required();
  check->add_option("--mode", mode, "mssr, msia or serial")
      ->required()
      ->check(CLI::IsMember({"mssr", "msia", "serial"}));

  auto* bench = app.add_subcommand("bench-contention", "abort rate against hot-spot size");
  bench->add_option("--config", config, "config JSON")->required();
  bench->add_option("--ranges", ranges, "e.g. 1K,10K,100K")->required();
  bench->add_option("--out", out, "output directory");

  auto* gen = app.add_subcommand("gen-trace", "write a synthetic trace");
  gen->add_option("--profile", profile, "scenario")->required()->check(CLI::IsMember(croesus::trace_profiles()));
  gen->add_option("--frames", frames, "frame count");
  gen->add_option("--seed", seed, "RNG seed");
  gen->add_option("--out", out, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return croesus::cmd_run_sim(config, trace, out, std::cerr);
    if (*opt) return croesus::cmd_optimize(trace, mu, method, step, out, opt_config, seed, std::cerr);
    if (*check) return croesus::cmd_check(history, mode, std::cout, std::cerr);
    if (*bench) {
      std::vector<std::uint64_t> list;
      try {
        list = croesus::parse_ranges(ranges);
      } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return croesus::kExitConfig;
      }
      return croesus::cmd_bench_contention(config, list, out, std::cerr);
    }
    if (*gen) return croesus::cmd_gen_trace(profile, frames, seed, out, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
