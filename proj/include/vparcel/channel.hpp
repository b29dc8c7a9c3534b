// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

// A channel is one independently locked replica of communication state:
// endpoints to every peer, a tag-matching engine with its unexpected queue,
// deferred sends, and the send/recv request pools. Everything is mutated
// under the channel guard; continuation callbacks run after it is released.

#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "vparcel/transport.hpp"
#include "vparcel/wire.hpp"

namespace vparcel {

inline constexpr rank_t any_source = ~rank_t{0};

enum class LockMode { blocking, try_lock };
enum class ProgressResult { progressed, idle, busy };
enum class GlobalProgressResult { ran, skipped };

enum class OpKind : std::uint8_t { send_header, send_data, recv_data, recv_header_preposted };
enum class OpStatus : std::uint8_t { pending, ok, truncated, disconnected };

class OpRequest;
class ContinuationRequest;
class Channel;

using OpHandle = std::shared_ptr<OpRequest>;
using ContinuationFn = std::function<void(const OpRequest&)>;

namespace detail {
void fire_continuation(const OpHandle& req);
}  // namespace detail

/// Handle for one posted send or receive. Completes exactly once.
class OpRequest {
 public:
  OpRequest(OpKind kind, channel_t channel, rank_t peer, Tag tag, void* context);

  std::uint64_t id() const { return id_; }
  OpKind kind() const { return kind_; }
  channel_t channel() const { return channel_; }
  bool is_complete() const { return flags_.load(std::memory_order_acquire) & complete_bit; }
  /// pending until complete.
  OpStatus status() const {
    return is_complete() ? status_ : OpStatus::pending;
  }
  void* context() const { return context_; }

  /// Send: destination. Receive: posted source, then the matched source.
  rank_t peer() const { return peer_; }
  Tag tag() const { return tag_; }
  /// Receive: length of the matched frame.
  std::size_t size() const { return size_; }
  /// Receive without a caller buffer: the matched frame body.
  Bytes& body() { return body_; }
  const Bytes& body() const { return body_; }

  bool has_continuation() const {
    return flags_.load(std::memory_order_acquire) & attached_bit;
  }

 private:
  friend class Channel;
  friend class ContinuationRequest;
  friend void attach_continuation(const OpHandle&, ContinuationFn, ContinuationRequest*);
  friend void detail::fire_continuation(const OpHandle&);
  friend void start_continuation_request(ContinuationRequest&);

  static constexpr std::uint8_t complete_bit = 1;
  static constexpr std::uint8_t attached_bit = 2;
  static constexpr std::uint8_t claimed_bit = 4;

  // Returns true when an attached continuation is now due.
  bool finish(OpStatus status);

  const std::uint64_t id_;
  const OpKind kind_;
  const channel_t channel_;
  rank_t peer_;
  Tag tag_;
  void* context_;
  OpStatus status_ = OpStatus::pending;
  std::atomic<std::uint8_t> flags_{0};

  ContinuationFn continuation_;
  ContinuationRequest* cont_request_ = nullptr;
  bool pooled_ = false;

  std::span<std::byte> dest_;
  bool owning_ = false;
  Bytes body_;
  std::size_t size_ = 0;
};

/// How a posted operation reports completion.
class Completion {
 public:
  enum class Mode { none, pool, continuation };

  /// The caller tests the returned request itself.
  static Completion none() { return Completion(Mode::none); }
  /// The request is placed in the channel's send or recv pool.
  static Completion pool() { return Completion(Mode::pool); }
  static Completion continuation(ContinuationFn fn, ContinuationRequest* cr = nullptr) {
    Completion c(Mode::continuation);
    c.fn_ = std::move(fn);
    c.cr_ = cr;
    return c;
  }

  Mode mode() const { return mode_; }

 private:
  friend class Channel;
  explicit Completion(Mode m) : mode_(m) {}
  Mode mode_;
  ContinuationFn fn_;
  ContinuationRequest* cr_ = nullptr;
};

/// Spinlock with try-acquire; counts acquisitions that had to wait.
class Guard {
 public:
  bool try_lock() {
    return !locked_.load(std::memory_order_relaxed) &&
           !locked_.exchange(true, std::memory_order_acquire);
  }
  void lock();
  void unlock() { locked_.store(false, std::memory_order_release); }

  std::uint64_t blocked_events() const { return blocked_.load(std::memory_order_relaxed); }

 private:
  std::atomic<bool> locked_{false};
  std::atomic<std::uint64_t> blocked_{0};
};

struct ChannelConfig {
  LockMode lock_mode = LockMode::try_lock;
  // Every Nth counted progress call sweeps all channels; 0 disables.
  std::size_t global_progress_interval = 256;
  // Frames pulled from one endpoint per progress call.
  std::size_t recv_burst = 64;
};

struct ChannelStats {
  std::uint64_t progress_calls = 0;
  std::uint64_t busy = 0;
  std::uint64_t blocked = 0;
  std::uint64_t local_progress_count = 0;
  std::uint64_t global_sweeps = 0;
  std::uint64_t frames_received = 0;
  std::uint64_t frames_matched = 0;
  std::uint64_t unexpected = 0;
  std::uint64_t unexpected_headers = 0;
};

inline constexpr std::size_t default_pool_budget = 16;

class Channel {
 public:
  /// endpoints is indexed by peer rank; the local rank's slot is null.
  Channel(channel_t index, rank_t local_rank, std::vector<std::unique_ptr<Endpoint>> endpoints,
          ChannelConfig cfg = {});
  ~Channel();
  Channel(const Channel&) = delete;
  Channel& operator=(const Channel&) = delete;

  channel_t index() const { return index_; }
  rank_t local_rank() const { return local_rank_; }
  std::size_t peers() const { return endpoints_.size(); }
  const ChannelConfig& config() const { return cfg_; }

  /// Queues a frame for `peer`. Throws peer_out_of_range or tag_class_mismatch.
  OpHandle post_send(rank_t peer, FrameKind kind, Tag tag, Bytes body,
                     Completion completion = Completion::none(), void* context = nullptr);

  /// Receives into `buffer`; a larger frame completes the request as truncated.
  /// `source` may be any_source for the header tag only.
  OpHandle post_recv(rank_t source, Tag tag, std::span<std::byte> buffer,
                     Completion completion = Completion::none(), void* context = nullptr);
  /// Receives into a buffer owned by the request (see OpRequest::body()).
  OpHandle post_recv(rank_t source, Tag tag, Completion completion = Completion::none(),
                     void* context = nullptr);

  /// Pumps every endpoint under the guard. In try mode a held guard yields
  /// busy with no transport calls.
  ProgressResult progress(LockMode mode);

  /// Tests up to `budget` pooled requests, alternating send and recv pools.
  /// Completed requests are removed and returned.
  std::vector<OpHandle> poll_pools(std::size_t budget = default_pool_budget,
                                   LockMode mode = LockMode::blocking);

  std::uint64_t local_progress_count() const {
    return local_progress_count_.load(std::memory_order_acquire);
  }
  ChannelStats stats() const;
  std::size_t pool_sizes() const;
  /// Endpoint totals for this channel: frames sent, header frames sent.
  EndpointCounters endpoint_totals() const;

  /// Holds the guard; for tests and instrumentation.
  std::unique_lock<Guard> hold_guard() { return std::unique_lock<Guard>(guard_); }

 private:
  friend GlobalProgressResult maybe_global_progress(Channel&, std::span<Channel* const>);

  struct MatchKey {
    rank_t source;
    std::uint32_t tag;
    friend bool operator==(MatchKey, MatchKey) = default;
  };
  struct MatchKeyHash {
    std::size_t operator()(MatchKey k) const noexcept {
      return std::hash<std::uint64_t>{}((std::uint64_t{k.source} << 32) | k.tag);
    }
  };
  struct Posted {
    std::uint64_t seq;
    OpHandle req;
  };
  struct Arrived {
    std::uint64_t seq;
    Frame frame;
  };
  struct Deferred {
    Frame frame;
    OpHandle req;
  };

  ProgressResult progress_impl(LockMode mode, bool counted);
  bool pump_locked(std::vector<OpHandle>& fired);
  void deliver_locked(Frame frame, std::vector<OpHandle>& fired);
  void match_into_locked(const OpHandle& req, Frame frame, std::vector<OpHandle>& fired);
  std::optional<Frame> take_unexpected_locked(rank_t source, Tag tag);
  void fail_peer_locked(rank_t peer, std::vector<OpHandle>& fired);
  void complete_locked(const OpHandle& req, OpStatus status, std::vector<OpHandle>& fired);
  OpHandle post_recv_impl(rank_t source, Tag tag, std::span<std::byte> buffer, bool owning,
                          Completion completion, void* context);
  void apply_completion(const OpHandle& req, Completion& completion, bool is_send);
  static void fire_all(std::vector<OpHandle>& fired);

  const channel_t index_;
  const rank_t local_rank_;
  const ChannelConfig cfg_;
  std::vector<std::unique_ptr<Endpoint>> endpoints_;

  Guard guard_;
  // Guarded state.
  std::uint64_t next_seq_ = 0;
  std::unordered_map<MatchKey, std::deque<Posted>, MatchKeyHash> posted_;
  std::deque<Posted> posted_any_;
  std::unordered_map<MatchKey, std::deque<Arrived>, MatchKeyHash> unexpected_;
  std::vector<std::uint32_t> unexpected_headers_;
  std::atomic<std::uint64_t> unexpected_count_{0};
  std::atomic<std::uint64_t> unexpected_header_count_{0};
  std::vector<std::deque<Deferred>> deferred_;
  std::vector<bool> dead_;
  std::deque<OpHandle> send_pool_;
  std::deque<OpHandle> recv_pool_;
  bool next_pool_is_recv_ = false;
  std::atomic<std::uint64_t> frames_received_{0};
  std::atomic<std::uint64_t> frames_matched_{0};
  std::atomic<std::size_t> pooled_count_{0};

  std::atomic<std::uint64_t> progress_calls_{0};
  std::atomic<std::uint64_t> busy_{0};
  std::atomic<std::uint64_t> local_progress_count_{0};
  std::atomic<std::uint64_t> last_sweep_at_{0};
  std::atomic<std::uint64_t> global_sweeps_{0};
};

/// If the interval is enabled and `ch` just reached a multiple of it,
/// progresses every channel in `all` once (try mode, not counted as local).
GlobalProgressResult maybe_global_progress(Channel& ch, std::span<Channel* const> all);

}  // namespace vparcel
