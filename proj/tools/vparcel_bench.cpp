// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "vparcel/bench.hpp"
#include "vparcel/error.hpp"

using namespace vparcel;
using namespace vparcel::bench;

int main(int argc, char** argv) {
  CLI::App app{"vparcel-bench: ping-pong, flood and attentiveness benchmarks"};
  BenchConfig cfg;
  std::string benchmark;
  std::string strategy = "local";
  std::string completion = "cont";
  std::string lock_mode = "try";
  std::string transport = "loopback";
  std::string csv;
  std::size_t repeat = 1;

  app.add_option("benchmark", benchmark, "pingpong, flood or attentiveness")
      ->required()
      ->check(CLI::IsMember({"pingpong", "flood", "attentiveness"}));
  app.add_option("--threads", cfg.threads, "Worker threads per rank")->capture_default_str();
  app.add_option("--channels", cfg.channels, "Channels per rank")->capture_default_str();
  app.add_option("--iters", cfg.iterations, "Iterations per thread")->capture_default_str();
  app.add_option("--warmup", cfg.warmup, "Warmup iterations (default 10%)");
  app.add_option("--size", cfg.msg_size, "NZC bytes per parcel")->capture_default_str();
  app.add_option("--zc", cfg.zc_chunks, "ZC chunks per parcel")->capture_default_str();
  app.add_option("--zc-size", cfg.zc_size, "Bytes per ZC chunk")->capture_default_str();
  app.add_flag("--random-sizes", cfg.random_sizes, "Flood: random nzc and zc sizes");
  app.add_option("--strategy", strategy)->check(CLI::IsMember({"local", "random"}))
      ->capture_default_str();
  app.add_option("--completion", completion)->check(CLI::IsMember({"pool", "cont"}))
      ->capture_default_str();
  app.add_option("--lock-mode", lock_mode)->check(CLI::IsMember({"try", "blocking"}))
      ->capture_default_str();
  app.add_option("--global-progress-interval", cfg.global_progress_interval, "0 disables")
      ->capture_default_str();
  app.add_option("--eager", cfg.eager_threshold, "Piggyback threshold in bytes")
      ->capture_default_str();
  app.add_option("--drain-budget", cfg.drain_budget)->capture_default_str();
  app.add_option("--transport", transport)->check(CLI::IsMember({"loopback", "socket"}))
      ->capture_default_str();
  app.add_option("--seed", cfg.seed)->capture_default_str();
  app.add_option("--rank", cfg.rank, "Run one rank of a two-process socket run")
      ->check(CLI::Range(0, 1));
  app.add_option("--addr", cfg.addresses, "host:port per rank, in rank order");
  app.add_option("--window", cfg.window, "Flood: parcels in flight per thread")
      ->capture_default_str();
  app.add_option("--task-duration", cfg.task_duration_ms, "Attentiveness: task length in ms")
      ->capture_default_str();
  app.add_option("--task-fraction", cfg.task_fraction, "Attentiveness: share of busy slots")
      ->capture_default_str();
  app.add_option("--send-interval", cfg.send_interval_us, "Attentiveness: us between sends")
      ->capture_default_str();
  app.add_option("--timeout", cfg.timeout_s, "Seconds before a run is failed")
      ->capture_default_str();
  app.add_option("--repeat", repeat, "Runs with identical config")->capture_default_str();
  app.add_option("--csv", csv, "Write CSV here ('-' for stdout)");

  CLI11_PARSE(app, argc, argv);

  cfg.benchmark = *parse_benchmark(benchmark);
  cfg.strategy = strategy == "local" ? Strategy::local : Strategy::random;
  cfg.completion_mode = completion == "pool" ? CompletionMode::pool : CompletionMode::continuation;
  cfg.lock_mode = lock_mode == "try" ? LockMode::try_lock : LockMode::blocking;
  cfg.transport = transport == "loopback" ? TransportKind::loopback : TransportKind::socket;

  std::vector<BenchResult> results;
  bool ok = true;
  try {
    for (std::size_t i = 0; i < repeat; ++i) {
      results.push_back(run(cfg));
      const auto& r = results.back();
      ok = ok && r.ok;
      std::cerr << to_string(cfg.benchmark) << " run " << i << ": " << (r.ok ? "ok" : "FAILED")
                << " rate=" << r.message_rate << "/s p50=" << r.p50_us << "us p99=" << r.p99_us
                << "us max=" << r.max_us << "us delivered=" << r.parcels_delivered
                << " frames=" << r.frames_sent;
      if (!r.ok) std::cerr << " (" << r.failure << ")";
      std::cerr << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  const std::string text = emit_csv(results);
  if (csv == "-") {
    std::cout << text;
  } else if (!csv.empty()) {
    std::ofstream out(csv);
    out << text;
  }
  return ok ? 0 : 1;
}
