// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#include "vparcel/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "vparcel/error.hpp"

namespace vparcel::bench {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t fnv(std::uint64_t h, const Bytes& b) {
  for (std::byte c : b) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t parcel_hash(const Parcel& p) {
  std::uint64_t h = 1469598103934665603ull;
  h = fnv(h ^ p.nzc.size(), p.nzc);
  for (const auto& z : p.zc) h = fnv(h ^ (z.size() << 1), z);
  return splitmix(h ^ p.zc.size());
}

struct alignas(64) Oracle {
  std::atomic<std::uint64_t> count{0};
  std::atomic<std::uint64_t> sum{0};
  std::atomic<std::uint64_t> mix{0};

  void add(std::uint64_t h) {
    count.fetch_add(1, std::memory_order_relaxed);
    sum.fetch_add(h, std::memory_order_relaxed);
    mix.fetch_add(splitmix(h ^ 0x5bd1e995ull), std::memory_order_relaxed);
  }
  bool operator==(const Oracle& o) const {
    return count.load() == o.count.load() && sum.load() == o.sum.load() &&
           mix.load() == o.mix.load();
  }
};

void fill(Bytes& b, std::uint64_t state, std::size_t from = 0) {
  for (std::size_t i = from; i < b.size(); i += 8) {
    state = splitmix(state);
    const std::size_t n = std::min<std::size_t>(8, b.size() - i);
    std::memcpy(b.data() + i, &state, n);
  }
}

void put32(Bytes& b, std::size_t at, std::uint32_t v) { std::memcpy(b.data() + at, &v, 4); }
std::uint32_t get32(const Bytes& b, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + at, 4);
  return v;
}
void put64(Bytes& b, std::size_t at, std::uint64_t v) { std::memcpy(b.data() + at, &v, 8); }
std::uint64_t get64(const Bytes& b, std::size_t at) {
  std::uint64_t v;
  std::memcpy(&v, b.data() + at, 8);
  return v;
}

std::uint64_t now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now().time_since_epoch())
      .count();
}

double seconds(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

// Deterministic parcel for (thread, seq).
Parcel make_parcel(const BenchConfig& cfg, std::size_t t, std::size_t i, rank_t dest) {
  const std::uint64_t base = splitmix(cfg.seed ^ splitmix((t << 32) | i));
  Parcel p;
  p.dest = dest;
  std::size_t nzc = cfg.msg_size;
  std::size_t zc = cfg.zc_chunks;
  std::mt19937_64 rng(base);
  if (cfg.random_sizes) {
    nzc = std::uniform_int_distribution<std::size_t>(0, 65536)(rng);
    zc = std::uniform_int_distribution<std::size_t>(0, 4)(rng);
  }
  p.nzc.resize(nzc);
  fill(p.nzc, base);
  if (nzc >= 8) {
    put32(p.nzc, 0, static_cast<std::uint32_t>(t));
    put32(p.nzc, 4, static_cast<std::uint32_t>(i));
  }
  for (std::size_t k = 0; k < zc; ++k) {
    std::size_t size = cfg.zc_size;
    if (cfg.random_sizes) size = std::uniform_int_distribution<std::size_t>(1, 16384)(rng);
    Bytes chunk(size);
    fill(chunk, base + k + 1);
    p.zc.push_back(std::move(chunk));
  }
  return p;
}

std::uint64_t frames_for(const Parcel& p, std::size_t eager) {
  return 1 + (p.nzc.size() > eager ? 1 : 0) + p.zc.size();
}

struct Mailbox {
  std::mutex mu;
  std::deque<Parcel> q;
  std::atomic<std::size_t> size{0};

  void push(Parcel&& p) {
    std::lock_guard lock(mu);
    q.push_back(std::move(p));
    size.fetch_add(1, std::memory_order_release);
  }
  std::optional<Parcel> pop() {
    if (size.load(std::memory_order_acquire) == 0) return std::nullopt;
    std::lock_guard lock(mu);
    if (q.empty()) return std::nullopt;
    Parcel p = std::move(q.front());
    q.pop_front();
    size.fetch_sub(1, std::memory_order_relaxed);
    return p;
  }
};

// Parcelports for the ranks this process runs, plus the shared run state.
class Harness {
 public:
  explicit Harness(const BenchConfig& cfg) : cfg_(cfg) {
    validate(cfg_);
    PortConfig pc;
    pc.num_channels = cfg_.channels;
    pc.num_threads = cfg_.threads;
    pc.strategy = cfg_.strategy;
    pc.completion_mode = cfg_.completion_mode;
    pc.lock_mode = cfg_.lock_mode;
    pc.eager_threshold = cfg_.eager_threshold;
    pc.drain_budget = cfg_.drain_budget;
    pc.global_progress_interval = cfg_.global_progress_interval;
    pc.seed = cfg_.seed;

    TransportConfig tc;
    tc.kind = cfg_.transport;
    tc.addresses = cfg_.addresses;
    if (tc.addresses.empty() && cfg_.rank >= 0) tc.addresses = addresses_from_env(2);
    if (cfg_.rank < 0) {
      auto matrices = connect_all(tc, 2, cfg_.channels);
      for (rank_t r = 0; r < 2; ++r) {
        ports_[r] = std::make_unique<Parcelport>(pc, r, std::move(matrices[r]));
      }
    } else {
      const auto r = static_cast<rank_t>(cfg_.rank);
      ports_[r] = std::make_unique<Parcelport>(pc, r, connect_rank(tc, r, 2, cfg_.channels));
    }
    for (auto& p : ports_) {
      if (!p) continue;
      p->register_error_handler([this](const ParcelError& e) {
        if (done_.load(std::memory_order_acquire)) return;
        fail("parcel error on channel " + std::to_string(e.channel) + ": " + e.message);
      });
      p->register_zc_allocator([](std::span<const std::uint32_t> sizes) {
        std::vector<Bytes> out;
        out.reserve(sizes.size());
        for (auto s : sizes) out.emplace_back(s);
        return out;
      });
    }
    deadline_ = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                   std::chrono::duration<double>(cfg_.timeout_s));
  }

  bool has(rank_t r) const { return static_cast<bool>(ports_[r]); }
  Parcelport& port(rank_t r) { return *ports_[r]; }

  void fail(const std::string& why) {
    std::lock_guard lock(mu_);
    if (failure_.empty()) failure_ = why;
    abort_.store(true, std::memory_order_release);
  }
  bool aborted() const { return abort_.load(std::memory_order_acquire); }
  bool done() const { return done_.load(std::memory_order_acquire); }
  std::string failure() {
    std::lock_guard lock(mu_);
    return failure_;
  }

  // One background_work step; false when the run should stop.
  bool step(rank_t r, std::size_t t) {
    if (aborted()) return false;
    if (!ports_[r]->background_work(t)) std::this_thread::yield();
    if (Clock::now() > deadline_) {
      fail("timeout");
      return false;
    }
    return true;
  }

  // Called once per worker after its own quota; keeps polling so shared
  // channels drain, until every local worker and every local send is done.
  void linger(rank_t r, std::size_t t) {
    finished_.fetch_add(1, std::memory_order_acq_rel);
    while (!done()) {
      if (finished_.load(std::memory_order_acquire) == workers() && sends_idle()) {
        done_.store(true, std::memory_order_release);
        break;
      }
      if (!step(r, t)) break;
    }
  }

  // Runs fn(rank, worker) on cfg.threads threads per local rank.
  void run(const std::function<void(rank_t, std::size_t)>& fn) {
    std::vector<std::thread> threads;
    for (rank_t r = 0; r < 2; ++r) {
      if (!has(r)) continue;
      for (std::size_t t = 0; t < cfg_.threads; ++t) {
        threads.emplace_back([this, &fn, r, t] {
          try {
            fn(r, t);
            linger(r, t);
          } catch (const std::exception& e) {
            fail(std::string("rank ") + std::to_string(r) + " worker " + std::to_string(t) +
                 ": " + e.what());
          }
        });
      }
    }
    for (auto& th : threads) th.join();
  }

  void collect(BenchResult& res) {
    res.progress_calls.assign(cfg_.channels, 0);
    res.busy.assign(cfg_.channels, 0);
    res.blocked.assign(cfg_.channels, 0);
    res.selections.assign(cfg_.channels, 0);
    for (rank_t r = 0; r < 2; ++r) {
      if (!has(r)) continue;
      const PortStats s = ports_[r]->stats();
      res.parcels_sent += s.parcels_sent;
      res.parcels_delivered += s.parcels_delivered;
      res.parcel_errors += s.parcel_errors;
      res.frames_sent += s.frames_sent;
      res.header_frames_sent += s.header_frames_sent;
      res.send_trace = res.send_trace * 31 + s.send_trace;
      for (std::size_t c = 0; c < cfg_.channels; ++c) {
        res.progress_calls[c] += s.channels[c].progress_calls;
        res.busy[c] += s.channels[c].busy;
        res.blocked[c] += s.channels[c].blocked;
        res.selections[c] += s.selections_per_channel[c];
      }
    }
  }

 private:
  std::size_t workers() const {
    return cfg_.threads * (static_cast<std::size_t>(has(0)) + static_cast<std::size_t>(has(1)));
  }
  bool sends_idle() const {
    for (const auto& p : ports_) {
      if (p && p->sends_in_flight() != 0) return false;
    }
    return true;
  }

  BenchConfig cfg_;
  std::unique_ptr<Parcelport> ports_[2];
  Clock::time_point deadline_;
  std::atomic<bool> abort_{false};
  std::atomic<bool> done_{false};
  std::atomic<std::size_t> finished_{0};
  std::mutex mu_;
  std::string failure_;
};

BenchResult finish(Harness& h, const BenchConfig& cfg, Clock::time_point begin) {
  BenchResult res;
  res.config = cfg;
  res.elapsed_s = seconds(begin, Clock::now());
  h.collect(res);
  res.failure = h.failure();
  if (res.failure.empty() && res.parcel_errors != 0) res.failure = "parcel errors reported";
  res.ok = res.failure.empty();
  return res;
}

void set_latencies(BenchResult& res, std::vector<double>& us) {
  res.p50_us = percentile(us, 0.50);
  res.p99_us = percentile(us, 0.99);
  res.max_us = us.empty() ? 0 : *std::max_element(us.begin(), us.end());
}

void check(BenchResult& res, bool cond, const std::string& what) {
  if (!cond && res.ok) {
    res.ok = false;
    res.failure = what;
  }
}

struct Span {
  std::mutex mu;
  Clock::time_point first = Clock::time_point::max();
  Clock::time_point last = Clock::time_point::min();
  void begin(Clock::time_point t) {
    std::lock_guard lock(mu);
    first = std::min(first, t);
  }
  void end(Clock::time_point t) {
    std::lock_guard lock(mu);
    last = std::max(last, t);
  }
  double seconds() {
    std::lock_guard lock(mu);
    if (first == Clock::time_point::max() || last <= first) return 0;
    return std::chrono::duration<double>(last - first).count();
  }
};

}  // namespace

void validate(const BenchConfig& cfg) {
  if (cfg.threads < 1) throw error(errc::invalid_config, "threads must be >= 1");
  if (cfg.channels < 1) throw error(errc::invalid_config, "channels must be >= 1");
  if (cfg.iterations < 1) throw error(errc::invalid_config, "iterations must be >= 1");
  if (cfg.warmup >= 0 && static_cast<std::size_t>(cfg.warmup) >= cfg.iterations) {
    throw error(errc::invalid_config, "iterations must exceed warmup");
  }
  if (!(cfg.task_fraction >= 0.0 && cfg.task_fraction <= 1.0)) {
    throw error(errc::invalid_config, "task_fraction must be in [0, 1]");
  }
  if (cfg.rank > 1 || cfg.rank < -1) throw error(errc::invalid_config, "rank must be 0 or 1");
  if (cfg.rank >= 0 && cfg.transport != TransportKind::socket) {
    throw error(errc::invalid_config, "a single-rank run needs the socket transport");
  }
  if (cfg.window < 1) throw error(errc::invalid_config, "window must be >= 1");
  if (cfg.zc_chunks > 0 && cfg.zc_size == 0) {
    throw error(errc::invalid_config, "zc chunks must be non-empty");
  }
  switch (cfg.benchmark) {
    case Benchmark::pingpong:
      if (cfg.msg_size < 8) throw error(errc::invalid_config, "pingpong needs size >= 8");
      break;
    case Benchmark::flood:
      break;
    case Benchmark::attentiveness:
      if (cfg.msg_size < 16) throw error(errc::invalid_config, "attentiveness needs size >= 16");
      if (!(cfg.task_duration_ms > 0)) {
        throw error(errc::invalid_config, "task_duration must be > 0");
      }
      break;
  }
}

std::size_t warmup_count(const BenchConfig& cfg) {
  if (cfg.warmup >= 0) return static_cast<std::size_t>(cfg.warmup);
  return cfg.iterations / 10;
}

std::uint64_t BenchResult::blocked_total() const {
  std::uint64_t n = 0;
  for (auto v : blocked) n += v;
  return n;
}

std::uint64_t BenchResult::busy_total() const {
  std::uint64_t n = 0;
  for (auto v : busy) n += v;
  return n;
}

double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) return 0;
  std::sort(samples.begin(), samples.end());
  const double rank = std::ceil(q * static_cast<double>(samples.size()));
  const std::size_t idx =
      std::min(samples.size() - 1, static_cast<std::size_t>(std::max(rank, 1.0)) - 1);
  return samples[idx];
}

BenchResult run_pingpong(const BenchConfig& cfg) {
  Harness h(cfg);
  const std::size_t T = cfg.threads;
  const std::size_t warm = warmup_count(cfg);
  std::vector<Mailbox> boxes(2 * T);
  std::vector<std::vector<double>> lat(T);
  Span span;

  for (rank_t r = 0; r < 2; ++r) {
    if (!h.has(r)) continue;
    h.port(r).register_handler([&boxes, T, r](Parcel&& p, rank_t) {
      const std::uint32_t tid = get32(p.nzc, 0);
      if (tid >= T) throw error(errc::data_size_mismatch, "bad thread id");
      boxes[r * T + tid].push(std::move(p));
    });
  }

  const auto begin = Clock::now();
  h.run([&](rank_t r, std::size_t t) {
    Parcelport& port = h.port(r);
    Mailbox& box = boxes[r * T + t];
    for (std::size_t i = 0; i < cfg.iterations; ++i) {
      if (r == 0) {
        if (i == warm) span.begin(Clock::now());
        const auto t0 = Clock::now();
        port.send_parcel(t, make_parcel(cfg, t, i, 1));
        std::optional<Parcel> reply;
        while (!(reply = box.pop())) {
          if (!h.step(r, t)) return;
        }
        const auto t1 = Clock::now();
        if (get32(reply->nzc, 4) != i || reply->nzc.size() != cfg.msg_size ||
            reply->zc.size() != cfg.zc_chunks) {
          h.fail("reply mismatch on thread " + std::to_string(t));
          return;
        }
        if (i >= warm) lat[t].push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
        if (i + 1 == cfg.iterations) span.end(t1);
      } else {
        std::optional<Parcel> ping;
        while (!(ping = box.pop())) {
          if (!h.step(r, t)) return;
        }
        if (get32(ping->nzc, 4) != i) {
          h.fail("ping out of order on thread " + std::to_string(t));
          return;
        }
        if (i == warm) span.begin(Clock::now());
        ping->dest = 0;
        ping->parcel_id = 0;
        port.send_parcel(t, std::move(*ping));
        if (i + 1 == cfg.iterations) span.end(Clock::now());
      }
    }
  });

  BenchResult res = finish(h, cfg, begin);
  std::vector<double> all;
  for (auto& v : lat) all.insert(all.end(), v.begin(), v.end());
  set_latencies(res, all);
  const double measured = 2.0 * static_cast<double>(T * (cfg.iterations - warm));
  const double secs = span.seconds();
  res.message_rate = secs > 0 ? measured / secs : 0;
  const std::uint64_t expect = cfg.rank < 0 ? 2 * T * cfg.iterations : T * cfg.iterations;
  check(res, res.parcels_sent == expect, "parcels sent " + std::to_string(res.parcels_sent) +
                                             ", expected " + std::to_string(expect));
  check(res, res.parcels_delivered == expect,
        "parcels delivered " + std::to_string(res.parcels_delivered));
  check(res, res.p50_us <= res.p99_us && res.p99_us <= res.max_us, "percentile order");
  return res;
}

BenchResult run_flood(const BenchConfig& cfg) {
  Harness h(cfg);
  const std::size_t T = cfg.threads;
  const std::size_t warm = warmup_count(cfg);
  const std::uint64_t total = T * cfg.iterations;
  Oracle sent;
  Oracle received;
  std::atomic<std::uint64_t> expected_frames{0};
  std::vector<std::unique_ptr<std::atomic<std::size_t>>> inflight;
  for (std::size_t t = 0; t < T; ++t) inflight.push_back(std::make_unique<std::atomic<std::size_t>>(0));
  Span span;

  if (h.has(1)) {
    if (!h.has(0)) {
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < cfg.iterations; ++i) {
          sent.add(parcel_hash(make_parcel(cfg, t, i, 1)));
        }
      }
    }
    h.port(1).register_handler([&](Parcel&& p, rank_t) {
      received.add(parcel_hash(p));
      if (received.count.load(std::memory_order_relaxed) == total) span.end(Clock::now());
    });
  }
  if (h.has(0)) {
    h.port(0).register_handler([&](Parcel&&, rank_t) { h.fail("unexpected parcel on rank 0"); });
  }

  const auto begin = Clock::now();
  h.run([&](rank_t r, std::size_t t) {
    if (r == 1) {
      while (received.count.load(std::memory_order_acquire) < total) {
        if (!h.step(r, t)) return;
      }
      return;
    }
    Parcelport& port = h.port(0);
    auto& mine = *inflight[t];
    for (std::size_t i = 0; i < cfg.iterations; ++i) {
      while (mine.load(std::memory_order_acquire) >= cfg.window) {
        if (!h.step(r, t)) return;
      }
      if (i == warm) span.begin(Clock::now());
      Parcel p = make_parcel(cfg, t, i, 1);
      sent.add(parcel_hash(p));
      expected_frames.fetch_add(frames_for(p, cfg.eager_threshold), std::memory_order_relaxed);
      mine.fetch_add(1, std::memory_order_acq_rel);
      port.send_parcel(t, std::move(p), [&mine](OpStatus) {
        mine.fetch_sub(1, std::memory_order_acq_rel);
      });
    }
    while (mine.load(std::memory_order_acquire) > 0) {
      if (!h.step(r, t)) return;
    }
    if (!h.has(1)) span.end(Clock::now());
  });

  BenchResult res = finish(h, cfg, begin);
  const double secs = span.seconds();
  res.message_rate = secs > 0 ? static_cast<double>(T * (cfg.iterations - warm)) / secs : 0;
  res.expected_frames = expected_frames.load();
  if (h.has(0)) {
    check(res, res.parcels_sent == total, "parcels sent " + std::to_string(res.parcels_sent));
    check(res, res.frames_sent == res.expected_frames,
          "frames " + std::to_string(res.frames_sent) + ", expected " +
              std::to_string(res.expected_frames));
  }
  if (h.has(1)) {
    check(res, received.count.load() == total,
          "delivered " + std::to_string(received.count.load()) + " of " + std::to_string(total));
    check(res, received == sent, "content oracle mismatch");
  }
  return res;
}

BenchResult run_attentiveness(const BenchConfig& cfg) {
  Harness h(cfg);
  const std::size_t T = cfg.threads;
  const std::size_t warm = warmup_count(cfg);
  const std::uint64_t total = T * cfg.iterations;
  std::atomic<std::uint64_t> received{0};
  std::vector<std::vector<double>> lat(T);
  std::vector<std::unique_ptr<std::atomic<std::size_t>>> inflight;
  for (std::size_t t = 0; t < T; ++t) inflight.push_back(std::make_unique<std::atomic<std::size_t>>(0));
  static thread_local std::vector<double>* samples = nullptr;
  Span span;

  if (h.has(1)) {
    h.port(1).register_handler([&](Parcel&& p, rank_t) {
      const std::uint64_t sent_at = get64(p.nzc, 8);
      const std::uint32_t seq = get32(p.nzc, 4);
      if (seq >= warm && samples) samples->push_back(static_cast<double>(now_ns() - sent_at) / 1e3);
      if (received.fetch_add(1, std::memory_order_acq_rel) + 1 == total) span.end(Clock::now());
    });
  }
  if (h.has(0)) {
    h.port(0).register_handler([&](Parcel&&, rank_t) { h.fail("unexpected parcel on rank 0"); });
  }

  const auto slot = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double, std::milli>(cfg.task_duration_ms));
  const auto interval = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double, std::micro>(cfg.send_interval_us));

  const auto begin = Clock::now();
  h.run([&](rank_t r, std::size_t t) {
    if (r == 1) {
      samples = &lat[t];
      std::mt19937_64 rng(splitmix(cfg.seed ^ splitmix(0xa77e0000ull + t)));
      std::bernoulli_distribution busy(cfg.task_fraction);
      Parcelport& port = h.port(1);
      while (received.load(std::memory_order_acquire) < total) {
        const auto end = Clock::now() + slot;
        if (busy(rng)) {
          while (Clock::now() < end) {
          }
          continue;
        }
        // A polling slot spins on background_work like a scheduler loop.
        while (Clock::now() < end) {
          if (h.aborted()) return;
          port.background_work(t);
        }
        if (!h.step(r, t)) return;
      }
      return;
    }
    Parcelport& port = h.port(0);
    auto& mine = *inflight[t];
    const auto start = Clock::now();
    for (std::size_t i = 0; i < cfg.iterations; ++i) {
      std::this_thread::sleep_until(start + i * interval);
      if (i == warm) span.begin(Clock::now());
      Parcel p = make_parcel(cfg, t, i, 1);
      put64(p.nzc, 8, now_ns());
      mine.fetch_add(1, std::memory_order_acq_rel);
      port.send_parcel(t, std::move(p), [&mine](OpStatus) {
        mine.fetch_sub(1, std::memory_order_acq_rel);
      });
      while (mine.load(std::memory_order_acquire) > 0) {
        if (!h.step(r, t)) return;
      }
    }
  });

  BenchResult res = finish(h, cfg, begin);
  std::vector<double> all;
  for (auto& v : lat) all.insert(all.end(), v.begin(), v.end());
  set_latencies(res, all);
  const double secs = span.seconds();
  res.message_rate = secs > 0 ? static_cast<double>(T * (cfg.iterations - warm)) / secs : 0;
  if (h.has(1)) {
    check(res, received.load() == total,
          "delivered " + std::to_string(received.load()) + " of " + std::to_string(total));
    check(res, all.size() == T * (cfg.iterations - warm), "latency sample count");
  }
  if (h.has(0)) {
    check(res, res.parcels_sent == total, "parcels sent " + std::to_string(res.parcels_sent));
  }
  check(res, res.p50_us <= res.p99_us && res.p99_us <= res.max_us, "percentile order");
  return res;
}

BenchResult run(const BenchConfig& cfg) {
  switch (cfg.benchmark) {
    case Benchmark::pingpong: return run_pingpong(cfg);
    case Benchmark::flood: return run_flood(cfg);
    case Benchmark::attentiveness: return run_attentiveness(cfg);
  }
  throw error(errc::invalid_config, "unknown benchmark");
}

std::string to_string(Benchmark b) {
  switch (b) {
    case Benchmark::pingpong: return "pingpong";
    case Benchmark::flood: return "flood";
    case Benchmark::attentiveness: return "attentiveness";
  }
  return "?";
}

std::optional<Benchmark> parse_benchmark(const std::string& s) {
  if (s == "pingpong") return Benchmark::pingpong;
  if (s == "flood") return Benchmark::flood;
  if (s == "attentiveness") return Benchmark::attentiveness;
  return std::nullopt;
}

std::string csv_header() {
  return "benchmark,transport,rank,threads,channels,iterations,warmup,msg_size,zc_chunks,"
         "random_sizes,strategy,completion,lock_mode,global_progress_interval,eager_threshold,"
         "seed,task_duration_ms,task_fraction,ok,elapsed_s,message_rate,p50_us,p99_us,max_us,"
         "parcels_sent,parcels_delivered,parcel_errors,frames_sent,header_frames_sent,"
         "send_trace,progress_calls,busy,blocked,selections";
}

namespace {

std::string join(const std::vector<std::uint64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

std::string emit_csv(const std::vector<BenchResult>& results) {
  std::ostringstream out;
  out << csv_header() << '\n';
  for (const auto& r : results) {
    const auto& c = r.config;
    out << to_string(c.benchmark) << ','
        << (c.transport == TransportKind::loopback ? "loopback" : "socket") << ','
        << (c.rank < 0 ? std::string("both") : std::to_string(c.rank)) << ',' << c.threads << ','
        << c.channels << ',' << c.iterations << ',' << warmup_count(c) << ',' << c.msg_size
        << ',' << c.zc_chunks << ',' << (c.random_sizes ? 1 : 0) << ','
        << (c.strategy == Strategy::local ? "local" : "random") << ','
        << (c.completion_mode == CompletionMode::pool ? "pool" : "cont") << ','
        << (c.lock_mode == LockMode::try_lock ? "try" : "blocking") << ','
        << c.global_progress_interval << ',' << c.eager_threshold << ',' << c.seed << ','
        << c.task_duration_ms << ',' << c.task_fraction << ',' << (r.ok ? 1 : 0) << ','
        << r.elapsed_s << ',' << r.message_rate << ',' << r.p50_us << ',' << r.p99_us << ','
        << r.max_us << ',' << r.parcels_sent << ',' << r.parcels_delivered << ','
        << r.parcel_errors << ',' << r.frames_sent << ',' << r.header_frames_sent << ','
        << r.send_trace << ',' << join(r.progress_calls) << ',' << join(r.busy) << ','
        << join(r.blocked) << ',' << join(r.selections) << '\n';
  }
  return out.str();
}

}  // namespace vparcel::bench
