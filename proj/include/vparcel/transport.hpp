// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vparcel/wire.hpp"

namespace vparcel {

enum class TransportKind { loopback, socket };

struct TransportConfig {
  TransportKind kind = TransportKind::loopback;
  // One "host:port" per rank; socket kind only. Port 0 asks for an
  // ephemeral port and is only meaningful for connect_all.
  std::vector<std::string> addresses;
  std::size_t max_frame = 1u << 20;
  std::size_t loopback_capacity = 1024;
  std::chrono::milliseconds connect_timeout{10000};
};

enum class SendResult { accepted, would_block };

struct EndpointCounters {
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_received = 0;
  std::uint64_t header_frames_sent = 0;
  std::uint64_t bytes_sent = 0;
  // Order-sensitive digest of sent frames (kind, tag, length).
  std::uint64_t send_trace = 0;
};

/// One directed pair of byte-frame queues between two ranks on one channel.
///
/// At most one thread sends and one thread receives at a time; the owning
/// channel's guard provides that.
class Endpoint {
 public:
  Endpoint(rank_t local, rank_t peer, channel_t channel, std::size_t max_frame)
      : local_(local), peer_(peer), channel_(channel), max_frame_(max_frame) {}
  virtual ~Endpoint() = default;
  Endpoint(const Endpoint&) = delete;
  Endpoint& operator=(const Endpoint&) = delete;

  rank_t local_rank() const { return local_; }
  rank_t peer_rank() const { return peer_; }
  channel_t channel_index() const { return channel_; }
  std::size_t max_frame() const { return max_frame_; }

  /// On accepted the frame has been moved from; on would_block it is untouched.
  /// Throws error(frame_too_large) or error(disconnected).
  SendResult try_send(Frame& f);

  /// Next frame in FIFO order with source_rank set to the peer, or nullopt.
  /// Throws error(disconnected) once the peer is gone and nothing is queued.
  std::optional<Frame> try_recv();

  /// Pushes internally buffered bytes; no-op for loopback.
  void flush();

  EndpointCounters counters() const;

 protected:
  virtual SendResult do_try_send(Frame& f) = 0;
  virtual std::optional<Frame> do_try_recv() = 0;
  virtual void do_flush() {}

 private:
  rank_t local_;
  rank_t peer_;
  channel_t channel_;
  std::size_t max_frame_;
  std::atomic<std::uint64_t> frames_sent_{0};
  std::atomic<std::uint64_t> frames_received_{0};
  std::atomic<std::uint64_t> header_frames_sent_{0};
  std::atomic<std::uint64_t> bytes_sent_{0};
  std::atomic<std::uint64_t> send_trace_{0};
};

/// endpoints[channel][peer]; the slot for the local rank is null.
using EndpointMatrix = std::vector<std::vector<std::unique_ptr<Endpoint>>>;

/// Transport calls (try_send, try_recv, flush) issued by the calling thread
/// since it started. Used to check that try-mode progress that reports busy
/// touched nothing.
std::uint64_t transport_ops_on_this_thread();

/// Connects every rank inside this process and returns one matrix per rank.
/// Loopback uses in-process bounded queues; socket opens one TCP stream per
/// (channel, rank pair) over 127.0.0.1 or the configured addresses.
std::vector<EndpointMatrix> connect_all(const TransportConfig& cfg, std::size_t ranks,
                                        std::size_t channels);

/// Socket kind only: connects `local_rank` to all other ranks, which run in
/// other processes. Lower ranks accept, higher ranks connect.
EndpointMatrix connect_rank(const TransportConfig& cfg, rank_t local_rank,
                            std::size_t ranks, std::size_t channels);

struct SocketAddress {
  std::string host;
  std::uint16_t port = 0;
};

/// Parses "host:port". Throws error(bad_address).
SocketAddress parse_address(const std::string& text);

/// Reads VPARCEL_ADDR_<rank> for every rank; empty when any is missing.
std::vector<std::string> addresses_from_env(std::size_t ranks);

}  // namespace vparcel
