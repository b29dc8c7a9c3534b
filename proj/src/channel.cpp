// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#include "vparcel/channel.hpp"

#include <algorithm>
#include <string>
#include <thread>

#include "vparcel/completion.hpp"
#include "vparcel/error.hpp"

namespace vparcel {

namespace {

std::atomic<std::uint64_t> next_op_id{1};

std::uint64_t relaxed_inc(std::atomic<std::uint64_t>& a, std::uint64_t by = 1) {
  return a.fetch_add(by, std::memory_order_relaxed);
}

}  // namespace

OpRequest::OpRequest(OpKind kind, channel_t channel, rank_t peer, Tag tag, void* context)
    : id_(next_op_id.fetch_add(1, std::memory_order_relaxed)),
      kind_(kind),
      channel_(channel),
      peer_(peer),
      tag_(tag),
      context_(context) {}

bool OpRequest::finish(OpStatus status) {
  status_ = status;
  const auto prev = flags_.fetch_or(complete_bit, std::memory_order_acq_rel);
  return prev & attached_bit;
}

void Guard::lock() {
  if (try_lock()) return;
  blocked_.fetch_add(1, std::memory_order_relaxed);
  for (unsigned spins = 0;; ++spins) {
    if (try_lock()) return;
    if (spins > 64) std::this_thread::yield();
  }
}

Channel::Channel(channel_t index, rank_t local_rank,
                 std::vector<std::unique_ptr<Endpoint>> endpoints, ChannelConfig cfg)
    : index_(index),
      local_rank_(local_rank),
      cfg_(cfg),
      endpoints_(std::move(endpoints)),
      unexpected_headers_(endpoints_.size(), 0),
      deferred_(endpoints_.size()),
      dead_(endpoints_.size(), false) {
  if (local_rank_ >= endpoints_.size()) {
    throw error(errc::invalid_config, "local rank outside endpoint table");
  }
  for (std::size_t p = 0; p < endpoints_.size(); ++p) {
    if (p != local_rank_ && !endpoints_[p]) {
      throw error(errc::invalid_config, "missing endpoint for peer " + std::to_string(p));
    }
    if (endpoints_[p] && endpoints_[p]->channel_index() != index_) {
      throw error(errc::invalid_config, "endpoint belongs to another channel");
    }
  }
}

Channel::~Channel() = default;

void Channel::apply_completion(const OpHandle& req, Completion& completion, bool is_send) {
  switch (completion.mode()) {
    case Completion::Mode::none:
      break;
    case Completion::Mode::pool:
      req->pooled_ = true;
      break;
    case Completion::Mode::continuation:
      attach_continuation(req, std::move(completion.fn_), completion.cr_);
      break;
  }
  (void)is_send;
}

void Channel::complete_locked(const OpHandle& req, OpStatus status,
                              std::vector<OpHandle>& fired) {
  if (req->finish(status)) fired.push_back(req);
}

void Channel::fire_all(std::vector<OpHandle>& fired) {
  for (auto& r : fired) detail::fire_continuation(r);
  fired.clear();
}

OpHandle Channel::post_send(rank_t peer, FrameKind kind, Tag tag, Bytes body,
                            Completion completion, void* context) {
  detail::check_not_in_callback("post_send");
  if (peer >= endpoints_.size() || peer == local_rank_) {
    throw error(errc::peer_out_of_range, std::to_string(peer));
  }
  Frame frame{kind, local_rank_, tag, std::move(body)};
  if (!frame.consistent()) {
    throw error(errc::tag_class_mismatch, "tag " + std::to_string(tag.value()));
  }
  auto req = std::make_shared<OpRequest>(
      kind == FrameKind::header ? OpKind::send_header : OpKind::send_data, index_, peer, tag,
      context);
  apply_completion(req, completion, true);

  std::vector<OpHandle> fired;
  {
    std::lock_guard lock(guard_);
    if (req->pooled_) {
      send_pool_.push_back(req);
      pooled_count_.fetch_add(1, std::memory_order_relaxed);
    }
    if (dead_[peer]) {
      complete_locked(req, OpStatus::disconnected, fired);
    } else {
      deferred_[peer].push_back(Deferred{std::move(frame), req});
    }
  }
  fire_all(fired);
  return req;
}

OpHandle Channel::post_recv(rank_t source, Tag tag, std::span<std::byte> buffer,
                            Completion completion, void* context) {
  return post_recv_impl(source, tag, buffer, false, std::move(completion), context);
}

OpHandle Channel::post_recv(rank_t source, Tag tag, Completion completion, void* context) {
  return post_recv_impl(source, tag, {}, true, std::move(completion), context);
}

OpHandle Channel::post_recv_impl(rank_t source, Tag tag, std::span<std::byte> buffer,
                                 bool owning, Completion completion, void* context) {
  detail::check_not_in_callback("post_recv");
  if (source == any_source) {
    if (!tag.is_header()) throw error(errc::wildcard_requires_header_tag);
  } else if (source >= endpoints_.size() || source == local_rank_) {
    throw error(errc::peer_out_of_range, std::to_string(source));
  }
  if (!tag.in_range()) throw error(errc::invalid_tag, std::to_string(tag.value()));

  auto req = std::make_shared<OpRequest>(
      tag.is_header() ? OpKind::recv_header_preposted : OpKind::recv_data, index_, source, tag,
      context);
  req->dest_ = buffer;
  req->owning_ = owning;
  apply_completion(req, completion, false);

  std::vector<OpHandle> fired;
  {
    std::lock_guard lock(guard_);
    if (req->pooled_) {
      recv_pool_.push_back(req);
      pooled_count_.fetch_add(1, std::memory_order_relaxed);
    }
    if (auto f = take_unexpected_locked(source, tag)) {
      match_into_locked(req, std::move(*f), fired);
    } else if (source != any_source && dead_[source]) {
      complete_locked(req, OpStatus::disconnected, fired);
    } else if (source == any_source) {
      posted_any_.push_back(Posted{next_seq_++, req});
    } else {
      posted_[MatchKey{source, tag.value()}].push_back(Posted{next_seq_++, req});
    }
  }
  fire_all(fired);
  return req;
}

std::optional<Frame> Channel::take_unexpected_locked(rank_t source, Tag tag) {
  decltype(unexpected_)::iterator best = unexpected_.end();
  if (source == any_source) {
    for (rank_t p = 0; p < endpoints_.size(); ++p) {
      auto it = unexpected_.find(MatchKey{p, tag.value()});
      if (it == unexpected_.end() || it->second.empty()) continue;
      if (best == unexpected_.end() || it->second.front().seq < best->second.front().seq) {
        best = it;
      }
    }
  } else {
    best = unexpected_.find(MatchKey{source, tag.value()});
  }
  if (best == unexpected_.end() || best->second.empty()) return std::nullopt;

  Frame f = std::move(best->second.front().frame);
  best->second.pop_front();
  if (best->second.empty()) unexpected_.erase(best);
  unexpected_count_.fetch_sub(1, std::memory_order_relaxed);
  if (f.kind == FrameKind::header) {
    --unexpected_headers_[f.source_rank];
    unexpected_header_count_.fetch_sub(1, std::memory_order_relaxed);
  }
  return f;
}

void Channel::match_into_locked(const OpHandle& req, Frame frame, std::vector<OpHandle>& fired) {
  relaxed_inc(frames_matched_);
  req->peer_ = frame.source_rank;
  req->size_ = frame.body.size();
  OpStatus status = OpStatus::ok;
  if (req->owning_) {
    req->body_ = std::move(frame.body);
  } else if (frame.body.size() > req->dest_.size()) {
    status = OpStatus::truncated;
  } else if (!frame.body.empty()) {
    std::copy(frame.body.begin(), frame.body.end(), req->dest_.begin());
  }
  complete_locked(req, status, fired);
}

void Channel::deliver_locked(Frame frame, std::vector<OpHandle>& fired) {
  relaxed_inc(frames_received_);
  const rank_t src = frame.source_rank;
  std::deque<Posted>* specific = nullptr;
  auto it = posted_.find(MatchKey{src, frame.tag.value()});
  if (it != posted_.end() && !it->second.empty()) specific = &it->second;
  std::deque<Posted>* wildcard =
      frame.tag.is_header() && !posted_any_.empty() ? &posted_any_ : nullptr;

  std::deque<Posted>* from = specific;
  if (wildcard && (!specific || wildcard->front().seq < specific->front().seq)) from = wildcard;
  if (from) {
    OpHandle req = std::move(from->front().req);
    from->pop_front();
    if (from == specific && specific->empty()) posted_.erase(it);
    match_into_locked(req, std::move(frame), fired);
    return;
  }

  if (frame.kind == FrameKind::header) {
    ++unexpected_headers_[src];
    unexpected_header_count_.fetch_add(1, std::memory_order_relaxed);
  }
  unexpected_count_.fetch_add(1, std::memory_order_relaxed);
  const MatchKey key{src, frame.tag.value()};
  unexpected_[key].push_back(Arrived{next_seq_++, std::move(frame)});
}

void Channel::fail_peer_locked(rank_t peer, std::vector<OpHandle>& fired) {
  dead_[peer] = true;
  for (auto& d : deferred_[peer]) complete_locked(d.req, OpStatus::disconnected, fired);
  deferred_[peer].clear();
  for (auto it = posted_.begin(); it != posted_.end();) {
    if (it->first.source == peer) {
      for (auto& p : it->second) complete_locked(p.req, OpStatus::disconnected, fired);
      it = posted_.erase(it);
    } else {
      ++it;
    }
  }
}

bool Channel::pump_locked(std::vector<OpHandle>& fired) {
  bool changed = false;
  for (rank_t p = 0; p < endpoints_.size(); ++p) {
    Endpoint* ep = endpoints_[p].get();
    if (!ep || dead_[p]) continue;
    try {
      auto& q = deferred_[p];
      while (!q.empty()) {
        if (ep->try_send(q.front().frame) != SendResult::accepted) break;
        complete_locked(q.front().req, OpStatus::ok, fired);
        q.pop_front();
        changed = true;
      }
      ep->flush();
      // An unconsumed header from this peer pauses the endpoint, which bounds
      // unexpected headers per channel by the number of peers.
      for (std::size_t n = 0; n < cfg_.recv_burst && unexpected_headers_[p] == 0; ++n) {
        auto f = ep->try_recv();
        if (!f) break;
        deliver_locked(std::move(*f), fired);
        changed = true;
      }
    } catch (const error& e) {
      if (e.code() != errc::disconnected) throw;
      fail_peer_locked(p, fired);
      changed = true;
    }
  }
  return changed;
}

ProgressResult Channel::progress(LockMode mode) { return progress_impl(mode, true); }

ProgressResult Channel::progress_impl(LockMode mode, bool counted) {
  detail::check_not_in_callback("progress");
  relaxed_inc(progress_calls_);
  if (mode == LockMode::try_lock) {
    if (!guard_.try_lock()) {
      relaxed_inc(busy_);
      return ProgressResult::busy;
    }
  } else {
    guard_.lock();
  }
  std::vector<OpHandle> fired;
  bool changed;
  try {
    changed = pump_locked(fired);
  } catch (...) {
    guard_.unlock();
    throw;
  }
  if (counted) local_progress_count_.fetch_add(1, std::memory_order_acq_rel);
  guard_.unlock();
  fire_all(fired);
  return changed ? ProgressResult::progressed : ProgressResult::idle;
}

std::vector<OpHandle> Channel::poll_pools(std::size_t budget, LockMode mode) {
  std::vector<OpHandle> done;
  std::unique_lock lock(guard_, std::defer_lock);
  if (mode == LockMode::try_lock) {
    if (!lock.try_lock()) return done;
  } else {
    lock.lock();
  }
  for (std::size_t tested = 0; tested < budget; ++tested) {
    if (send_pool_.empty() && recv_pool_.empty()) break;
    bool use_recv = next_pool_is_recv_;
    if (use_recv ? recv_pool_.empty() : send_pool_.empty()) use_recv = !use_recv;
    next_pool_is_recv_ = !use_recv;
    auto& pool = use_recv ? recv_pool_ : send_pool_;
    OpHandle req = std::move(pool.front());
    pool.pop_front();
    if (req->is_complete()) {
      pooled_count_.fetch_sub(1, std::memory_order_relaxed);
      done.push_back(std::move(req));
    } else {
      pool.push_back(std::move(req));
    }
  }
  return done;
}

ChannelStats Channel::stats() const {
  ChannelStats s;
  s.progress_calls = progress_calls_.load(std::memory_order_relaxed);
  s.busy = busy_.load(std::memory_order_relaxed);
  s.blocked = guard_.blocked_events();
  s.local_progress_count = local_progress_count_.load(std::memory_order_relaxed);
  s.global_sweeps = global_sweeps_.load(std::memory_order_relaxed);
  s.frames_received = frames_received_.load(std::memory_order_relaxed);
  s.frames_matched = frames_matched_.load(std::memory_order_relaxed);
  s.unexpected = unexpected_count_.load(std::memory_order_relaxed);
  s.unexpected_headers = unexpected_header_count_.load(std::memory_order_relaxed);
  return s;
}

std::size_t Channel::pool_sizes() const { return pooled_count_.load(std::memory_order_relaxed); }

EndpointCounters Channel::endpoint_totals() const {
  EndpointCounters total;
  for (const auto& ep : endpoints_) {
    if (!ep) continue;
    const auto c = ep->counters();
    total.frames_sent += c.frames_sent;
    total.frames_received += c.frames_received;
    total.header_frames_sent += c.header_frames_sent;
    total.bytes_sent += c.bytes_sent;
    total.send_trace ^= c.send_trace + 0x9e3779b97f4a7c15ull * (ep->peer_rank() + 1);
  }
  return total;
}

GlobalProgressResult maybe_global_progress(Channel& ch, std::span<Channel* const> all) {
  const auto interval = ch.cfg_.global_progress_interval;
  if (interval == 0) return GlobalProgressResult::skipped;
  const auto count = ch.local_progress_count();
  if (count == 0 || count % interval != 0) return GlobalProgressResult::skipped;
  if (ch.last_sweep_at_.exchange(count, std::memory_order_acq_rel) == count) {
    return GlobalProgressResult::skipped;
  }
  for (Channel* c : all) c->progress_impl(LockMode::try_lock, false);
  ch.global_sweeps_.fetch_add(1, std::memory_order_relaxed);
  return GlobalProgressResult::ran;
}

}  // namespace vparcel
