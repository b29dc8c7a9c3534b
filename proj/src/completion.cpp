// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#include "vparcel/completion.hpp"

#include <bit>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <algorithm>

#include "vparcel/error.hpp"

namespace vparcel {

namespace {

thread_local std::uint64_t tl_cont_counter_ops = 0;
thread_local int tl_continuation_depth = 0;
thread_local int tl_client_depth = 0;

constexpr std::uint64_t closed_bit = std::uint64_t{1} << 63;

void run_continuation(const OpHandle& req, ContinuationFn& fn) {
  detail::CallbackScope scope(detail::CallbackKind::continuation);
  fn(*req);
}

}  // namespace

// ---------------------------------------------------------------------------
// CompletionQueue

struct CompletionQueue::Ring {
  struct Cell {
    std::atomic<std::uint64_t> seq;
    CompletionDescriptor value;
  };

  enum class Pop { got, empty, drained };

  explicit Ring(std::size_t capacity) : mask(capacity - 1), cells(new Cell[capacity]) {
    for (std::size_t i = 0; i < capacity; ++i) cells[i].seq.store(i, std::memory_order_relaxed);
  }

  // False once the ring is closed; a full ring gets closed here.
  bool try_push(const CompletionDescriptor& d) {
    auto pos = enq.load(std::memory_order_relaxed);
    for (;;) {
      if (pos & closed_bit) return false;
      Cell& c = cells[pos & mask];
      const auto seq = c.seq.load(std::memory_order_acquire);
      const auto dif = static_cast<std::int64_t>(seq - pos);
      if (dif == 0) {
        if (enq.compare_exchange_weak(pos, pos + 1, std::memory_order_relaxed)) {
          c.value = d;
          c.seq.store(pos + 1, std::memory_order_release);
          return true;
        }
      } else if (dif < 0) {
        enq.fetch_or(closed_bit, std::memory_order_acq_rel);
        return false;
      } else {
        pos = enq.load(std::memory_order_relaxed);
      }
    }
  }

  Pop try_pop(CompletionDescriptor& out) {
    auto pos = deq.load(std::memory_order_relaxed);
    for (;;) {
      Cell& c = cells[pos & mask];
      const auto seq = c.seq.load(std::memory_order_acquire);
      const auto dif = static_cast<std::int64_t>(seq - (pos + 1));
      if (dif == 0) {
        if (deq.compare_exchange_weak(pos, pos + 1, std::memory_order_relaxed)) {
          out = c.value;
          c.seq.store(pos + mask + 1, std::memory_order_release);
          return Pop::got;
        }
      } else if (dif < 0) {
        const auto e = enq.load(std::memory_order_acquire);
        if ((e & closed_bit) && (e & ~closed_bit) == pos) return Pop::drained;
        return Pop::empty;
      } else {
        pos = deq.load(std::memory_order_relaxed);
      }
    }
  }

  const std::uint64_t mask;
  std::unique_ptr<Cell[]> cells;
  alignas(64) std::atomic<std::uint64_t> enq{0};
  alignas(64) std::atomic<std::uint64_t> deq{0};
  std::atomic<Ring*> next{nullptr};
};

CompletionQueue::CompletionQueue(std::size_t capacity_hint)
    : ring_capacity_(std::bit_ceil(std::max<std::size_t>(capacity_hint, 2))) {
  first_ = new Ring(ring_capacity_);
  head_.store(first_, std::memory_order_relaxed);
  tail_.store(first_, std::memory_order_relaxed);
}

CompletionQueue::~CompletionQueue() {
  Ring* r = first_;
  while (r) {
    Ring* next = r->next.load(std::memory_order_relaxed);
    delete r;
    r = next;
  }
}

void CompletionQueue::push(const CompletionDescriptor& d) {
  for (;;) {
    Ring* t = tail_.load(std::memory_order_acquire);
    if (t->try_push(d)) break;
    Ring* next = t->next.load(std::memory_order_acquire);
    if (next == nullptr) {
      auto fresh = std::make_unique<Ring>(ring_capacity_);
      fresh->try_push(d);
      Ring* expected = nullptr;
      if (t->next.compare_exchange_strong(expected, fresh.get(), std::memory_order_acq_rel)) {
        Ring* linked = fresh.release();
        tail_.compare_exchange_strong(t, linked, std::memory_order_acq_rel);
        rings_.fetch_add(1, std::memory_order_relaxed);
        break;
      }
      next = expected;
    }
    tail_.compare_exchange_strong(t, next, std::memory_order_acq_rel);
  }
  pushed_.fetch_add(1, std::memory_order_relaxed);
}

std::optional<CompletionDescriptor> CompletionQueue::poll() {
  CompletionDescriptor out;
  for (;;) {
    Ring* h = head_.load(std::memory_order_acquire);
    switch (h->try_pop(out)) {
      case Ring::Pop::got:
        popped_.fetch_add(1, std::memory_order_relaxed);
        return out;
      case Ring::Pop::empty:
        return std::nullopt;
      case Ring::Pop::drained: {
        Ring* next = h->next.load(std::memory_order_acquire);
        if (next == nullptr) return std::nullopt;
        head_.compare_exchange_strong(h, next, std::memory_order_acq_rel);
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// ContinuationRequest

ContinuationRequest::ContinuationRequest(std::size_t channels) : per_channel_(channels) {
  if (channels == 0) throw error(errc::invalid_config, "continuation request over 0 channels");
}

ContinuationRequest::~ContinuationRequest() {
  const auto left = total_.load(std::memory_order_acquire);
  if (left != 0) {
    std::fprintf(stderr, "vparcel: continuation request destroyed with %lld pending\n",
                 static_cast<long long>(left));
    std::abort();
  }
}

ContRequestState ContinuationRequest::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

std::size_t ContinuationRequest::held() const {
  std::lock_guard lock(mu_);
  return held_.size();
}

void ContinuationRequest::on_register(channel_t channel) {
  per_channel_[channel].fetch_add(1, std::memory_order_acq_rel);
  total_.fetch_add(1, std::memory_order_acq_rel);
  registered_.fetch_add(1, std::memory_order_relaxed);
  counter_ops_.fetch_add(2, std::memory_order_relaxed);
  tl_cont_counter_ops += 2;
}

void ContinuationRequest::on_executed(channel_t channel) {
  per_channel_[channel].fetch_sub(1, std::memory_order_acq_rel);
  total_.fetch_sub(1, std::memory_order_acq_rel);
  counter_ops_.fetch_add(2, std::memory_order_relaxed);
  tl_cont_counter_ops += 2;
}

void ContinuationRequest::on_ready(const OpHandle& req) {
  {
    std::lock_guard lock(mu_);
    if (state_ != ContRequestState::active) {
      held_.push_back(req);
      return;
    }
  }
  auto fn = std::move(req->continuation_);
  run_continuation(req, fn);
  on_executed(req->channel());
}

void attach_continuation(const OpHandle& req, ContinuationFn fn, ContinuationRequest* cr) {
  if (!req) throw error(errc::not_pending, "null request");
  if (!fn) throw error(errc::invalid_config, "empty continuation");
  if (req->pooled_) throw error(errc::already_attached, "request uses pool completion");
  if (req->flags_.fetch_or(OpRequest::claimed_bit, std::memory_order_acq_rel) &
      OpRequest::claimed_bit) {
    throw error(errc::already_attached, "op " + std::to_string(req->id()));
  }
  if (cr && req->channel() >= cr->channels()) {
    throw error(errc::invalid_config, "channel outside continuation request");
  }
  req->continuation_ = std::move(fn);
  req->cont_request_ = cr;
  if (cr) cr->on_register(req->channel());
  const auto prev = req->flags_.fetch_or(OpRequest::attached_bit, std::memory_order_acq_rel);
  if (prev & OpRequest::complete_bit) detail::fire_continuation(req);
}

ContTestResult test_continuation_request(ContinuationRequest& cr,
                                         std::span<Channel* const> channels) {
  {
    std::lock_guard lock(cr.mu_);
    if (cr.state_ == ContRequestState::inactive) throw error(errc::cont_request_inactive);
    if (cr.state_ == ContRequestState::complete) return ContTestResult::complete;
  }
  for (Channel* ch : channels) {
    if (ch->index() < cr.channels() && cr.pending(ch->index()) > 0) {
      ch->progress(LockMode::try_lock);
    }
  }
  std::lock_guard lock(cr.mu_);
  if (cr.total_.load(std::memory_order_acquire) == 0 && cr.held_.empty() &&
      cr.state_ == ContRequestState::active) {
    cr.state_ = ContRequestState::complete;
  }
  return cr.state_ == ContRequestState::complete ? ContTestResult::complete
                                                 : ContTestResult::pending;
}

void start_continuation_request(ContinuationRequest& cr) {
  std::vector<OpHandle> held;
  {
    std::lock_guard lock(cr.mu_);
    if (cr.state_ == ContRequestState::active) throw error(errc::cont_request_active);
    cr.state_ = ContRequestState::active;
    held.swap(cr.held_);
  }
  for (auto& req : held) {
    auto fn = std::move(req->continuation_);
    run_continuation(req, fn);
    cr.on_executed(req->channel());
  }
}

std::uint64_t cont_counter_ops_on_this_thread() { return tl_cont_counter_ops; }

namespace detail {

void fire_continuation(const OpHandle& req) {
  if (ContinuationRequest* cr = req->cont_request_) {
    cr->on_ready(req);
    return;
  }
  auto fn = std::move(req->continuation_);
  run_continuation(req, fn);
}

void check_not_in_callback([[maybe_unused]] const char* where) {
#ifndef VPARCEL_NO_REENTRANCY_CHECKS
  if (tl_continuation_depth > 0) {
    throw error(errc::reentrant_call, std::string(where) + " called from a continuation");
  }
#endif
}

void check_not_in_any_callback([[maybe_unused]] const char* where) {
#ifndef VPARCEL_NO_REENTRANCY_CHECKS
  check_not_in_callback(where);
  if (tl_client_depth > 0) {
    throw error(errc::reentrant_call, std::string(where) + " called from a client callback");
  }
#endif
}

CallbackScope::CallbackScope(CallbackKind kind) : kind_(kind) {
  ++(kind_ == CallbackKind::continuation ? tl_continuation_depth : tl_client_depth);
}

CallbackScope::~CallbackScope() {
  --(kind_ == CallbackKind::continuation ? tl_continuation_depth : tl_client_depth);
}

}  // namespace detail

}  // namespace vparcel
