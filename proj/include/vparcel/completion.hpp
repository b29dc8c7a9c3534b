// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "vparcel/channel.hpp"

namespace vparcel {

enum class DescriptorKind : std::uint8_t { header_sent, data_sent, header_received, data_received };

struct CompletionDescriptor {
  std::uint64_t op_id = 0;
  DescriptorKind kind = DescriptorKind::data_sent;
  channel_t channel = 0;
  rank_t source = 0;
  std::uint64_t parcel_id = 0;
  void* context = nullptr;

  friend bool operator==(const CompletionDescriptor&, const CompletionDescriptor&) = default;
};

/// Unbounded multi-producer multi-consumer queue.
///
/// A chain of bounded rings: producers claim slots with a CAS on the tail
/// ring's enqueue index, and when a ring fills it is closed by setting the
/// index's top bit and a fresh ring is linked behind it. Consumers move to
/// the next ring only after every claimed slot of a closed ring has been
/// taken. Order is FIFO per producer. Drained rings are kept until the
/// queue is destroyed, so memory tracks the peak backlog.
class CompletionQueue {
 public:
  explicit CompletionQueue(std::size_t capacity_hint = 1u << 14);
  ~CompletionQueue();
  CompletionQueue(const CompletionQueue&) = delete;
  CompletionQueue& operator=(const CompletionQueue&) = delete;

  void push(const CompletionDescriptor& d);
  std::optional<CompletionDescriptor> poll();

  std::uint64_t pushed() const { return pushed_.load(std::memory_order_relaxed); }
  std::uint64_t popped() const { return popped_.load(std::memory_order_relaxed); }
  std::size_t rings_allocated() const { return rings_.load(std::memory_order_relaxed); }

 private:
  struct Ring;

  std::size_t ring_capacity_;
  alignas(64) std::atomic<Ring*> head_;
  alignas(64) std::atomic<Ring*> tail_;
  Ring* first_;
  alignas(64) std::atomic<std::uint64_t> pushed_{0};
  alignas(64) std::atomic<std::uint64_t> popped_{0};
  std::atomic<std::size_t> rings_{1};
};

inline void cq_push(CompletionQueue& q, const CompletionDescriptor& d) { q.push(d); }
inline std::optional<CompletionDescriptor> cq_poll(CompletionQueue& q) { return q.poll(); }

enum class ContRequestState { inactive, active, complete };
enum class ContTestResult { complete, pending };

/// Aggregates continuations: one pending counter per channel plus a total.
///
/// Continuations registered while the request is not active are held and
/// run when it is started. Destroying a request with continuations still
/// registered aborts the process.
class ContinuationRequest {
 public:
  explicit ContinuationRequest(std::size_t channels);
  ~ContinuationRequest();
  ContinuationRequest(const ContinuationRequest&) = delete;
  ContinuationRequest& operator=(const ContinuationRequest&) = delete;

  ContRequestState state() const;
  std::int64_t pending(channel_t channel) const {
    return per_channel_[channel].load(std::memory_order_acquire);
  }
  std::int64_t pending_total() const { return total_.load(std::memory_order_acquire); }
  std::uint64_t registered_total() const {
    return registered_.load(std::memory_order_relaxed);
  }
  std::size_t held() const;
  std::size_t channels() const { return per_channel_.size(); }
  /// Atomic counter updates made on behalf of this request.
  std::uint64_t counter_ops() const { return counter_ops_.load(std::memory_order_relaxed); }

 private:
  friend void attach_continuation(const OpHandle&, ContinuationFn, ContinuationRequest*);
  friend void detail::fire_continuation(const OpHandle&);
  friend ContTestResult test_continuation_request(ContinuationRequest&,
                                                  std::span<Channel* const>);
  friend void start_continuation_request(ContinuationRequest&);

  void on_register(channel_t channel);
  void on_ready(const OpHandle& req);
  void on_executed(channel_t channel);

  std::vector<std::atomic<std::int64_t>> per_channel_;
  std::atomic<std::int64_t> total_{0};
  std::atomic<std::uint64_t> registered_{0};
  std::atomic<std::uint64_t> counter_ops_{0};
  mutable std::mutex mu_;
  ContRequestState state_ = ContRequestState::inactive;
  std::vector<OpHandle> held_;
};

/// Runs `fn` exactly once when `req` completes; immediately when it already
/// has. A null `cr` skips every counter update. Throws already_attached.
void attach_continuation(const OpHandle& req, ContinuationFn fn,
                         ContinuationRequest* cr = nullptr);

/// Progresses (try mode) only channels with pending continuations of `cr`.
/// Throws cont_request_inactive when `cr` was never started.
ContTestResult test_continuation_request(ContinuationRequest& cr,
                                         std::span<Channel* const> channels);

/// inactive/complete -> active, then runs held continuations.
/// Throws cont_request_active.
void start_continuation_request(ContinuationRequest& cr);

/// Explicit progress for one channel, for clients that drive nothing else.
inline void progress_channel(Channel& ch) { ch.progress(LockMode::try_lock); }

/// Shared-counter updates made by continuation requests on this thread.
std::uint64_t cont_counter_ops_on_this_thread();

namespace detail {

enum class CallbackKind { continuation, client };

/// Throws reentrant_call when invoked from inside a continuation callback
/// on this thread. Compiled out with VPARCEL_NO_REENTRANCY_CHECKS.
void check_not_in_callback(const char* where);
/// As above, and also rejects calls from inside client callbacks (parcel
/// handler, allocator, send completion).
void check_not_in_any_callback(const char* where);

class CallbackScope {
 public:
  explicit CallbackScope(CallbackKind kind);
  ~CallbackScope();
  CallbackScope(const CallbackScope&) = delete;
  CallbackScope& operator=(const CallbackScope&) = delete;

 private:
  CallbackKind kind_;
};

}  // namespace detail

}  // namespace vparcel
