// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#include "vparcel/parcelport.hpp"

#include <array>
#include <limits>

namespace vparcel {

namespace {

DescriptorKind descriptor_kind(OpKind k) {
  switch (k) {
    case OpKind::send_header: return DescriptorKind::header_sent;
    case OpKind::send_data: return DescriptorKind::data_sent;
    case OpKind::recv_data: return DescriptorKind::data_received;
    case OpKind::recv_header_preposted: return DescriptorKind::header_received;
  }
  return DescriptorKind::data_sent;
}

template <typename Fn, typename... Args>
void call_client(const Fn& fn, Args&&... args) {
  detail::CallbackScope scope(detail::CallbackKind::client);
  fn(std::forward<Args>(args)...);
}

}  // namespace

struct Parcelport::StateBase {
  explicit StateBase(bool send) : is_send(send) {}
  virtual ~StateBase() = default;
  const bool is_send;
  std::uint64_t parcel_id = 0;
  channel_t channel = 0;
  Tag tag;
  // Outcome of the single outstanding operation.
  OpStatus status = OpStatus::pending;
  std::size_t size = 0;
};

struct Parcelport::SendState final : StateBase {
  SendState() : StateBase(true) {}
  enum class Stage { header, nzc, zc };
  Parcel parcel;
  bool piggybacked = false;
  Stage stage = Stage::header;
  std::size_t next_zc = 0;
  SendCompleteFn on_complete;
};

struct Parcelport::RecvState final : StateBase {
  RecvState() : StateBase(false) {}
  enum class Stage { nzc, zc, discard };
  rank_t source = 0;
  Header header;
  Bytes nzc;
  std::vector<Bytes> zc;
  Stage stage = Stage::nzc;
  std::size_t next_zc = 0;
  std::size_t discard_left = 0;
};

struct Parcelport::HeaderSlot {
  Guard lock;
  OpHandle req;
};

// Owns in-flight parcel states so teardown can release them.
struct Parcelport::Registry {
  static constexpr std::size_t shards = 64;
  struct alignas(64) Shard {
    std::mutex mu;
    std::unordered_set<StateBase*> live;
  };
  std::array<Shard, shards> shard;

  Shard& of(StateBase* s) {
    return shard[(reinterpret_cast<std::uintptr_t>(s) >> 6) % shards];
  }
  void add(StateBase* s) {
    auto& sh = of(s);
    std::lock_guard lock(sh.mu);
    sh.live.insert(s);
  }
  void remove(StateBase* s) {
    auto& sh = of(s);
    std::lock_guard lock(sh.mu);
    sh.live.erase(s);
  }
  ~Registry() {
    for (auto& sh : shard) {
      for (auto* s : sh.live) delete s;
    }
  }
};

void validate(const PortConfig& cfg) {
  if (cfg.num_channels < 1 || cfg.num_channels > 65536) {
    throw error(errc::invalid_config, "num_channels must be in [1, 65536]");
  }
  if (cfg.num_threads < 1) throw error(errc::invalid_config, "num_threads must be >= 1");
  if (cfg.drain_budget < 1) throw error(errc::invalid_config, "drain_budget must be >= 1");
  if (cfg.eager_threshold > std::numeric_limits<std::uint32_t>::max()) {
    throw error(errc::invalid_config, "eager_threshold too large");
  }
}

channel_t map_thread_to_channel(std::size_t thread, std::size_t threads, std::size_t channels) {
  return static_cast<channel_t>(thread * channels / threads);
}

Parcelport::Parcelport(PortConfig cfg, rank_t rank, EndpointMatrix endpoints)
    : cfg_(cfg),
      rank_(rank),
      ranks_(endpoints.empty() ? 0 : endpoints.front().size()),
      workers_(cfg.num_threads),
      selections_(new std::atomic<std::uint64_t>[cfg.num_channels]),
      cq_(cfg.cq_capacity_hint),
      registry_(std::make_unique<Registry>()) {
  validate(cfg_);
  if (endpoints.size() != cfg_.num_channels) {
    throw error(errc::invalid_config, "endpoint matrix has " + std::to_string(endpoints.size()) +
                                          " channels, config " +
                                          std::to_string(cfg_.num_channels));
  }
  if (rank_ >= ranks_) throw error(errc::invalid_config, "rank outside endpoint matrix");

  ChannelConfig ccfg;
  ccfg.lock_mode = cfg_.lock_mode;
  ccfg.global_progress_interval = cfg_.global_progress_interval;
  for (std::size_t c = 0; c < cfg_.num_channels; ++c) {
    channels_.push_back(std::make_unique<Channel>(static_cast<channel_t>(c), rank_,
                                                  std::move(endpoints[c]), ccfg));
    channel_ptrs_.push_back(channels_.back().get());
    tags_.push_back(std::make_unique<TagAllocator>());
    selections_[c].store(0, std::memory_order_relaxed);
  }
  for (std::size_t t = 0; t < workers_.size(); ++t) {
    std::seed_seq seq{static_cast<std::uint64_t>(cfg_.seed), static_cast<std::uint64_t>(t),
                      static_cast<std::uint64_t>(rank_)};
    workers_[t].rng.seed(seq);
  }
  for (auto& ch : channels_) {
    auto slot = std::make_unique<HeaderSlot>();
    slot->req = ch->post_recv(any_source, header_tag);
    header_slots_.push_back(std::move(slot));
  }
}

Parcelport::~Parcelport() {
  // Channels hold requests whose contexts point into the registry.
  header_slots_.clear();
  channels_.clear();
  registry_.reset();
}

void Parcelport::register_handler(HandleParcelFn fn) {
  if (has_handler_.exchange(true)) throw error(errc::handler_registered);
  handler_ = std::move(fn);
}

void Parcelport::register_zc_allocator(AllocateZcFn fn) {
  if (has_allocator_.exchange(true)) throw error(errc::allocator_registered);
  allocator_ = std::move(fn);
}

void Parcelport::register_error_handler(ParcelErrorFn fn) { error_handler_ = std::move(fn); }

channel_t Parcelport::channel_for(std::size_t worker) const {
  return map_thread_to_channel(worker, cfg_.num_threads, cfg_.num_channels);
}

Completion Parcelport::completion_for() {
  if (cfg_.completion_mode == CompletionMode::pool) return Completion::pool();
  return Completion::continuation([this](const OpRequest& r) {
    auto* s = static_cast<StateBase*>(r.context());
    s->status = r.status();
    s->size = r.size();
    cq_.push(CompletionDescriptor{r.id(), descriptor_kind(r.kind()), r.channel(), r.peer(),
                                  s->parcel_id, s});
  });
}

void Parcelport::post_send_op(SendState* s, FrameKind kind, Tag tag, Bytes body) {
  channels_[s->channel]->post_send(s->parcel.dest, kind, tag, std::move(body),
                                                completion_for(), s);
}

void Parcelport::post_recv_op(RecvState* r, std::span<std::byte> buffer) {
  auto& ch = *channels_[r->channel];
  if (r->stage == RecvState::Stage::discard) {
    ch.post_recv(r->source, r->tag, completion_for(), r);
  } else {
    ch.post_recv(r->source, r->tag, buffer, completion_for(), r);
  }
}

std::uint64_t Parcelport::send_parcel(std::size_t worker, Parcel p, SendCompleteFn on_complete) {
  detail::check_not_in_callback("send_parcel");
  if (worker >= cfg_.num_threads) {
    throw error(errc::invalid_config, "worker " + std::to_string(worker) + " not registered");
  }
  if (p.dest >= ranks_ || p.dest == rank_) {
    throw error(errc::dest_out_of_range, std::to_string(p.dest));
  }
  if (p.zc.size() > max_zc_chunks) throw error(errc::too_many_chunks);
  if (p.nzc.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw error(errc::frame_too_large, "nzc chunk");
  }
  for (const auto& c : p.zc) {
    if (c.empty()) throw error(errc::zero_chunk_size);
    if (c.size() > std::numeric_limits<std::uint32_t>::max()) {
      throw error(errc::frame_too_large, "zc chunk");
    }
  }

  auto* s = new SendState();
  s->channel = channel_for(worker);
  s->tag = tags_[s->channel]->next();
  s->parcel_id = p.parcel_id != 0 ? p.parcel_id
                                  : next_parcel_id_.fetch_add(1, std::memory_order_relaxed);
  s->parcel = std::move(p);
  s->on_complete = std::move(on_complete);

  Header h;
  h.channel_index = s->channel;
  h.followup_tag = s->tag;
  h.nzc_size = static_cast<std::uint32_t>(s->parcel.nzc.size());
  h.zc_sizes.reserve(s->parcel.zc.size());
  for (const auto& c : s->parcel.zc) h.zc_sizes.push_back(static_cast<std::uint32_t>(c.size()));
  s->piggybacked = s->parcel.nzc.size() <= cfg_.eager_threshold;
  h.piggybacked = s->piggybacked;
  if (s->piggybacked) h.payload = std::move(s->parcel.nzc);
  Bytes encoded = encode_header(h);

  const auto id = s->parcel_id;
  registry_->add(s);
  sends_in_flight_.fetch_add(1, std::memory_order_acq_rel);
  post_send_op(s, FrameKind::header, header_tag, std::move(encoded));
  return id;
}

void Parcelport::advance(StateBase* s) {
  completions_processed_.fetch_add(1, std::memory_order_relaxed);
  if (s->is_send) {
    advance_send(static_cast<SendState*>(s));
  } else {
    advance_recv(static_cast<RecvState*>(s));
  }
}

void Parcelport::retire(StateBase* s) {
  registry_->remove(s);
  delete s;
}

void Parcelport::advance_send(SendState* s) {
  const OpStatus status = s->status;
  if (status != OpStatus::ok) {
    report({errc::disconnected, s->parcel.dest, s->channel, s->tag, "send failed"});
    sends_in_flight_.fetch_sub(1, std::memory_order_acq_rel);
    if (s->on_complete) call_client(s->on_complete, status);
    retire(s);
    return;
  }
  if (s->stage == SendState::Stage::header) {
    s->stage = SendState::Stage::zc;
    if (!s->piggybacked) {
      s->stage = SendState::Stage::nzc;
      post_send_op(s, FrameKind::data, s->tag, std::move(s->parcel.nzc));
      return;
    }
  } else if (s->stage == SendState::Stage::nzc) {
    s->stage = SendState::Stage::zc;
  }
  if (s->next_zc < s->parcel.zc.size()) {
    auto& chunk = s->parcel.zc[s->next_zc++];
    post_send_op(s, FrameKind::data, s->tag, std::move(chunk));
    return;
  }
  parcels_sent_.fetch_add(1, std::memory_order_relaxed);
  sends_in_flight_.fetch_sub(1, std::memory_order_acq_rel);
  if (s->on_complete) call_client(s->on_complete, OpStatus::ok);
  retire(s);
}

bool Parcelport::poll_header(channel_t ch) {
  auto& slot = *header_slots_[ch];
  if (!slot.lock.try_lock()) return false;
  OpHandle done;
  if (slot.req->is_complete()) {
    done = std::move(slot.req);
    try {
      slot.req = channels_[ch]->post_recv(any_source, header_tag);
    } catch (...) {
      slot.lock.unlock();
      throw;
    }
  }
  slot.lock.unlock();
  if (!done) return false;
  handle_header(ch, *done);
  return true;
}

void Parcelport::handle_header(channel_t ch, OpRequest& req) {
  headers_received_.fetch_add(1, std::memory_order_relaxed);
  const rank_t source = req.peer();
  Header h;
  try {
    h = decode_header(req.body());
  } catch (const error& e) {
    report({e.code(), source, ch, header_tag, e.what()});
    return;
  }
  if (!has_handler_.load(std::memory_order_acquire)) {
    throw error(errc::no_handler, "parcel arrived before register_handler");
  }

  auto* r = new RecvState();
  r->source = source;
  r->channel = ch;
  r->tag = h.followup_tag;
  r->header = std::move(h);
  r->parcel_id = next_recv_id_.fetch_add(1, std::memory_order_relaxed);
  registry_->add(r);
  recvs_in_flight_.fetch_add(1, std::memory_order_acq_rel);

  const Header& hd = r->header;
  if (hd.channel_index != ch) {
    discard_rest(r, {errc::channel_mismatch, source, ch, r->tag,
                     "header names channel " + std::to_string(hd.channel_index)});
    return;
  }
  if (!hd.zc_sizes.empty()) {
    if (!has_allocator_.load(std::memory_order_acquire)) {
      recvs_in_flight_.fetch_sub(1, std::memory_order_acq_rel);
      retire(r);
      throw error(errc::no_allocator, "zero-copy chunks arrived before register_zc_allocator");
    }
    std::vector<Bytes> buffers;
    try {
      detail::CallbackScope scope(detail::CallbackKind::client);
      buffers = allocator_(std::span<const std::uint32_t>(hd.zc_sizes));
    } catch (const std::exception& e) {
      discard_rest(r, {errc::allocator_mismatch, source, ch, r->tag,
                       std::string("allocator threw: ") + e.what()});
      return;
    }
    bool ok = buffers.size() == hd.zc_sizes.size();
    for (std::size_t i = 0; ok && i < buffers.size(); ++i) ok = buffers[i].size() == hd.zc_sizes[i];
    if (!ok) {
      discard_rest(r, {errc::allocator_mismatch, source, ch, r->tag,
                       "allocator returned buffers that do not match the header"});
      return;
    }
    r->zc = std::move(buffers);
  }
  if (hd.piggybacked) {
    r->nzc = std::move(r->header.payload);
    r->stage = RecvState::Stage::zc;
  } else {
    r->nzc.resize(hd.nzc_size);
    r->stage = RecvState::Stage::nzc;
  }
  post_next_recv(r);
}

void Parcelport::post_next_recv(RecvState* r) {
  if (r->stage == RecvState::Stage::nzc) {
    post_recv_op(r, r->nzc);
    return;
  }
  if (r->next_zc < r->zc.size()) {
    post_recv_op(r, r->zc[r->next_zc]);
    return;
  }
  finish_recv(r);
}

void Parcelport::discard_rest(RecvState* r, ParcelError err) {
  // Called before any data frame was posted for this parcel.
  report(err);
  r->stage = RecvState::Stage::discard;
  r->discard_left = r->header.zc_sizes.size() + (r->header.piggybacked ? 0 : 1);
  if (r->discard_left == 0) {
    recvs_in_flight_.fetch_sub(1, std::memory_order_acq_rel);
    retire(r);
    return;
  }
  post_recv_op(r, {});
}

void Parcelport::advance_recv(RecvState* r) {
  const OpStatus status = r->status;
  const std::size_t got = r->size;

  if (r->stage == RecvState::Stage::discard) {
    if (--r->discard_left == 0 || status == OpStatus::disconnected) {
      recvs_in_flight_.fetch_sub(1, std::memory_order_acq_rel);
      retire(r);
      return;
    }
    post_recv_op(r, {});
    return;
  }

  const std::size_t expected = r->stage == RecvState::Stage::nzc
                                   ? r->header.nzc_size
                                   : r->header.zc_sizes[r->next_zc];
  if (status == OpStatus::disconnected) {
    report({errc::disconnected, r->source, r->channel, r->tag, "receive failed"});
    recvs_in_flight_.fetch_sub(1, std::memory_order_acq_rel);
    retire(r);
    return;
  }
  if (status != OpStatus::ok || got != expected) {
    // This frame is consumed; drop the rest of the parcel.
    if (r->stage == RecvState::Stage::nzc) {
      r->stage = RecvState::Stage::zc;
    } else {
      ++r->next_zc;
    }
    r->discard_left = r->header.zc_sizes.size() - r->next_zc;
    r->stage = RecvState::Stage::discard;
    report({errc::data_size_mismatch, r->source, r->channel, r->tag,
            "frame of " + std::to_string(got) + " bytes, expected " + std::to_string(expected)});
    if (r->discard_left == 0) {
      recvs_in_flight_.fetch_sub(1, std::memory_order_acq_rel);
      retire(r);
    } else {
      post_recv_op(r, {});
    }
    return;
  }

  if (r->stage == RecvState::Stage::nzc) {
    r->stage = RecvState::Stage::zc;
  } else {
    ++r->next_zc;
  }
  post_next_recv(r);
}

void Parcelport::finish_recv(RecvState* r) {
  Parcel p;
  p.parcel_id = r->parcel_id;
  p.dest = rank_;
  p.nzc = std::move(r->nzc);
  p.zc = std::move(r->zc);
  const rank_t source = r->source;
  recvs_in_flight_.fetch_sub(1, std::memory_order_acq_rel);
  retire(r);
  parcels_delivered_.fetch_add(1, std::memory_order_relaxed);
  call_client(handler_, std::move(p), source);
}

void Parcelport::report(const ParcelError& err) {
  parcel_errors_.fetch_add(1, std::memory_order_relaxed);
  if (error_handler_) call_client(error_handler_, err);
}

bool Parcelport::background_work(std::size_t worker) {
  detail::check_not_in_any_callback("background_work");
  if (worker >= cfg_.num_threads) {
    throw error(errc::invalid_config, "worker " + std::to_string(worker) + " not registered");
  }
  channel_t ch;
  if (cfg_.strategy == Strategy::local) {
    ch = channel_for(worker);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, cfg_.num_channels - 1);
    ch = static_cast<channel_t>(pick(workers_[worker].rng));
  }
  selections_[ch].fetch_add(1, std::memory_order_relaxed);
  Channel& c = *channels_[ch];

  bool progressed = c.progress(cfg_.lock_mode) == ProgressResult::progressed;
  progressed |= poll_header(ch);

  if (cfg_.completion_mode == CompletionMode::pool) {
    for (auto& req : c.poll_pools(cfg_.drain_budget, cfg_.lock_mode)) {
      auto* s = static_cast<StateBase*>(req->context());
      s->status = req->status();
      s->size = req->size();
      advance(s);
      progressed = true;
    }
  } else {
    for (std::size_t i = 0; i < cfg_.drain_budget; ++i) {
      auto d = cq_.poll();
      if (!d) break;
      advance(static_cast<StateBase*>(d->context));
      progressed = true;
    }
  }

  maybe_global_progress(c, channel_ptrs_);
  return progressed;
}

PortStats Parcelport::stats() const {
  PortStats s;
  s.parcels_sent = parcels_sent_.load(std::memory_order_relaxed);
  s.parcels_delivered = parcels_delivered_.load(std::memory_order_relaxed);
  s.parcel_errors = parcel_errors_.load(std::memory_order_relaxed);
  s.headers_received = headers_received_.load(std::memory_order_relaxed);
  s.completions_processed = completions_processed_.load(std::memory_order_relaxed);
  for (std::size_t c = 0; c < channels_.size(); ++c) {
    const auto totals = channels_[c]->endpoint_totals();
    s.frames_sent += totals.frames_sent;
    s.header_frames_sent += totals.header_frames_sent;
    s.send_trace = s.send_trace * 1099511628211ull + totals.send_trace;
    s.frames_sent_per_channel.push_back(totals.frames_sent);
    s.channels.push_back(channels_[c]->stats());
    s.selections_per_channel.push_back(selections_[c].load(std::memory_order_relaxed));
  }
  return s;
}

}  // namespace vparcel
