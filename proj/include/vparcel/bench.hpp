// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vparcel/parcelport.hpp"
#include "vparcel/transport.hpp"

namespace vparcel::bench {

enum class Benchmark { pingpong, flood, attentiveness };

struct BenchConfig {
  Benchmark benchmark = Benchmark::pingpong;
  std::size_t threads = 1;
  std::size_t channels = 1;
  std::size_t iterations = 1000;
  // Negative: 10% of iterations.
  long warmup = -1;
  std::size_t msg_size = 8;
  std::size_t zc_chunks = 0;
  std::size_t zc_size = 4096;
  // Flood: nzc in [0, 64 KiB] and 0-4 zc chunks per parcel.
  bool random_sizes = false;
  Strategy strategy = Strategy::local;
  CompletionMode completion_mode = CompletionMode::continuation;
  LockMode lock_mode = LockMode::try_lock;
  std::size_t global_progress_interval = 256;
  std::size_t eager_threshold = 8192;
  std::size_t drain_budget = 16;
  std::uint64_t seed = 0;
  TransportKind transport = TransportKind::loopback;
  // -1 runs both ranks in this process; 0 or 1 runs one rank over sockets.
  int rank = -1;
  std::vector<std::string> addresses;
  // Flood: parcels in flight per sender thread.
  std::size_t window = 64;
  // Attentiveness.
  double task_duration_ms = 10.0;
  double task_fraction = 0.5;
  double send_interval_us = 1000.0;
  double timeout_s = 300.0;
};

/// Throws error(invalid_config).
void validate(const BenchConfig& cfg);
std::size_t warmup_count(const BenchConfig& cfg);

struct BenchResult {
  BenchConfig config;
  bool ok = false;
  std::string failure;
  double elapsed_s = 0;
  // Parcels per second over the measured phase.
  double message_rate = 0;
  double p50_us = 0;
  double p99_us = 0;
  double max_us = 0;
  std::uint64_t parcels_sent = 0;
  std::uint64_t parcels_delivered = 0;
  std::uint64_t parcel_errors = 0;
  std::uint64_t frames_sent = 0;
  std::uint64_t header_frames_sent = 0;
  std::uint64_t expected_frames = 0;
  std::uint64_t send_trace = 0;
  // Summed over the ranks run by this process.
  std::vector<std::uint64_t> progress_calls;
  std::vector<std::uint64_t> busy;
  std::vector<std::uint64_t> blocked;
  std::vector<std::uint64_t> selections;
  std::uint64_t blocked_total() const;
  std::uint64_t busy_total() const;
};

BenchResult run_pingpong(const BenchConfig& cfg);
BenchResult run_flood(const BenchConfig& cfg);
BenchResult run_attentiveness(const BenchConfig& cfg);
BenchResult run(const BenchConfig& cfg);

/// Column order is fixed; per-channel columns are ';'-joined lists.
std::string csv_header();
std::string emit_csv(const std::vector<BenchResult>& results);

std::string to_string(Benchmark b);
std::optional<Benchmark> parse_benchmark(const std::string& s);

/// Nearest-rank percentile of unsorted samples; 0 when empty.
double percentile(std::vector<double> samples, double q);

}  // namespace vparcel::bench
