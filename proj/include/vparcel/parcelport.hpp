// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

// Parcel transfer over channels.
//
// A parcel travels as a header frame (tag 0) followed by its data frames on
// one follow-up tag: the NZC chunk unless it was piggybacked in the header,
// then each ZC chunk in order. Every parcel owns at most one outstanding
// operation; the next one is posted when the previous completes. The
// sending worker's channel carries all of a parcel's frames.

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "vparcel/channel.hpp"
#include "vparcel/completion.hpp"
#include "vparcel/error.hpp"
#include "vparcel/transport.hpp"
#include "vparcel/wire.hpp"

namespace vparcel {

enum class Strategy { local, random };
enum class CompletionMode { pool, continuation };

struct Parcel {
  std::uint64_t parcel_id = 0;
  rank_t dest = 0;
  Bytes nzc;
  std::vector<Bytes> zc;
};

struct PortConfig {
  std::size_t num_channels = 1;
  std::size_t num_threads = 1;
  Strategy strategy = Strategy::local;
  CompletionMode completion_mode = CompletionMode::continuation;
  LockMode lock_mode = LockMode::try_lock;
  // NZC chunks up to this size ride inside the header frame.
  std::size_t eager_threshold = 8192;
  std::size_t drain_budget = 16;
  // 0 disables the periodic sweep over all channels.
  std::size_t global_progress_interval = 256;
  std::uint64_t seed = 0;
  std::size_t cq_capacity_hint = 1u << 14;
};

/// Throws error(invalid_config).
void validate(const PortConfig& cfg);

/// floor(t * C / T): adjacent workers share a channel.
channel_t map_thread_to_channel(std::size_t thread, std::size_t threads, std::size_t channels);

struct ParcelError {
  errc code;
  rank_t peer;
  channel_t channel;
  Tag tag;
  std::string message;
};

using HandleParcelFn = std::function<void(Parcel&&, rank_t source)>;
using AllocateZcFn = std::function<std::vector<Bytes>(std::span<const std::uint32_t> sizes)>;
using SendCompleteFn = std::function<void(OpStatus)>;
using ParcelErrorFn = std::function<void(const ParcelError&)>;

struct PortStats {
  std::uint64_t parcels_sent = 0;
  std::uint64_t parcels_delivered = 0;
  std::uint64_t parcel_errors = 0;
  std::uint64_t headers_received = 0;
  std::uint64_t completions_processed = 0;
  std::uint64_t frames_sent = 0;
  std::uint64_t header_frames_sent = 0;
  std::uint64_t send_trace = 0;
  std::vector<ChannelStats> channels;
  std::vector<std::uint64_t> frames_sent_per_channel;
  std::vector<std::uint64_t> selections_per_channel;
};

class Parcelport {
 public:
  /// `endpoints` comes from connect_all/connect_rank for `rank`.
  Parcelport(PortConfig cfg, rank_t rank, EndpointMatrix endpoints);
  ~Parcelport();
  Parcelport(const Parcelport&) = delete;
  Parcelport& operator=(const Parcelport&) = delete;

  /// Once, before traffic. Throws handler_registered on a second call.
  void register_handler(HandleParcelFn fn);
  /// Once, before traffic. Throws allocator_registered on a second call.
  void register_zc_allocator(AllocateZcFn fn);
  void register_error_handler(ParcelErrorFn fn);

  /// Starts sending `p` from `worker`; on_complete runs once after the last
  /// frame is accepted by the transport. Returns the parcel id.
  std::uint64_t send_parcel(std::size_t worker, Parcel p, SendCompleteFn on_complete = {});

  /// One polling step for `worker`. True iff communication advanced.
  bool background_work(std::size_t worker);

  channel_t channel_for(std::size_t worker) const;
  rank_t rank() const { return rank_; }
  std::size_t ranks() const { return ranks_; }
  const PortConfig& config() const { return cfg_; }
  Channel& channel(channel_t index) { return *channels_[index]; }
  std::span<Channel* const> channels() const { return channel_ptrs_; }
  CompletionQueue& completion_queue() { return cq_; }

  std::size_t sends_in_flight() const { return sends_in_flight_.load(std::memory_order_acquire); }
  std::size_t recvs_in_flight() const { return recvs_in_flight_.load(std::memory_order_acquire); }
  PortStats stats() const;

 private:
  struct StateBase;
  struct SendState;
  struct RecvState;
  struct HeaderSlot;
  struct alignas(64) Worker {
    std::mt19937_64 rng;
  };
  struct Registry;

  void post_send_op(SendState* s, FrameKind kind, Tag tag, Bytes body);
  void post_recv_op(RecvState* r, std::span<std::byte> buffer);
  Completion completion_for();
  bool poll_header(channel_t ch);
  void handle_header(channel_t ch, OpRequest& req);
  void advance(StateBase* s);
  void advance_send(SendState* s);
  void advance_recv(RecvState* r);
  void post_next_recv(RecvState* r);
  void discard_rest(RecvState* r, ParcelError err);
  void finish_recv(RecvState* r);
  void report(const ParcelError& err);
  void retire(StateBase* s);

  const PortConfig cfg_;
  const rank_t rank_;
  const std::size_t ranks_;
  std::vector<std::unique_ptr<Channel>> channels_;
  std::vector<Channel*> channel_ptrs_;
  std::vector<std::unique_ptr<TagAllocator>> tags_;
  std::vector<std::unique_ptr<HeaderSlot>> header_slots_;
  std::vector<Worker> workers_;
  std::unique_ptr<std::atomic<std::uint64_t>[]> selections_;
  CompletionQueue cq_;
  std::unique_ptr<Registry> registry_;

  HandleParcelFn handler_;
  AllocateZcFn allocator_;
  ParcelErrorFn error_handler_;
  std::atomic<bool> has_handler_{false};
  std::atomic<bool> has_allocator_{false};

  std::atomic<std::uint64_t> next_parcel_id_{1};
  std::atomic<std::uint64_t> next_recv_id_{1};
  std::atomic<std::size_t> sends_in_flight_{0};
  std::atomic<std::size_t> recvs_in_flight_{0};
  std::atomic<std::uint64_t> parcels_sent_{0};
  std::atomic<std::uint64_t> parcels_delivered_{0};
  std::atomic<std::uint64_t> parcel_errors_{0};
  std::atomic<std::uint64_t> headers_received_{0};
  std::atomic<std::uint64_t> completions_processed_{0};
};

}  // namespace vparcel
