// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#include "vparcel/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <string>
#include <thread>

#include "vparcel/error.hpp"

namespace vparcel {

namespace {

thread_local std::uint64_t tl_transport_ops = 0;

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

// ---------------------------------------------------------------------------
// loopback

// Single-producer single-consumer bounded ring of frames.
class FrameRing {
 public:
  explicit FrameRing(std::size_t capacity) : slots_(capacity) {}

  bool push(Frame& f) {
    const auto tail = tail_.load(std::memory_order_relaxed);
    if (tail - head_.load(std::memory_order_acquire) == slots_.size()) return false;
    slots_[tail % slots_.size()] = std::move(f);
    tail_.store(tail + 1, std::memory_order_release);
    return true;
  }

  std::optional<Frame> pop() {
    const auto head = head_.load(std::memory_order_relaxed);
    if (head == tail_.load(std::memory_order_acquire)) return std::nullopt;
    Frame f = std::move(slots_[head % slots_.size()]);
    head_.store(head + 1, std::memory_order_release);
    return f;
  }

  std::atomic<bool> sender_gone{false};
  std::atomic<bool> receiver_gone{false};

 private:
  std::vector<Frame> slots_;
  alignas(64) std::atomic<std::size_t> head_{0};
  alignas(64) std::atomic<std::size_t> tail_{0};
};

class LoopbackEndpoint final : public Endpoint {
 public:
  LoopbackEndpoint(rank_t local, rank_t peer, channel_t channel, std::size_t max_frame,
                   std::shared_ptr<FrameRing> out, std::shared_ptr<FrameRing> in)
      : Endpoint(local, peer, channel, max_frame), out_(std::move(out)), in_(std::move(in)) {}

  ~LoopbackEndpoint() override {
    out_->sender_gone.store(true, std::memory_order_release);
    in_->receiver_gone.store(true, std::memory_order_release);
  }

 protected:
  SendResult do_try_send(Frame& f) override {
    if (out_->receiver_gone.load(std::memory_order_acquire)) {
      throw error(errc::disconnected, "loopback peer gone");
    }
    return out_->push(f) ? SendResult::accepted : SendResult::would_block;
  }

  std::optional<Frame> do_try_recv() override {
    if (auto f = in_->pop()) return f;
    if (in_->sender_gone.load(std::memory_order_acquire)) {
      // The sender may have pushed right before leaving.
      if (auto f = in_->pop()) return f;
      throw error(errc::disconnected, "loopback peer gone");
    }
    return std::nullopt;
  }

 private:
  std::shared_ptr<FrameRing> out_;
  std::shared_ptr<FrameRing> in_;
};

std::vector<EndpointMatrix> connect_loopback(const TransportConfig& cfg, std::size_t ranks,
                                             std::size_t channels) {
  if (cfg.loopback_capacity == 0) throw error(errc::invalid_config, "loopback capacity 0");
  std::vector<EndpointMatrix> out(ranks);
  for (auto& m : out) {
    m.resize(channels);
    for (auto& row : m) row.resize(ranks);
  }
  for (std::size_t c = 0; c < channels; ++c) {
    for (rank_t a = 0; a < ranks; ++a) {
      for (rank_t b = a + 1; b < ranks; ++b) {
        auto ab = std::make_shared<FrameRing>(cfg.loopback_capacity);
        auto ba = std::make_shared<FrameRing>(cfg.loopback_capacity);
        const auto ch = static_cast<channel_t>(c);
        out[a][c][b] = std::make_unique<LoopbackEndpoint>(a, b, ch, cfg.max_frame, ab, ba);
        out[b][c][a] = std::make_unique<LoopbackEndpoint>(b, a, ch, cfg.max_frame, ba, ab);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// socket

// Stream framing: u32 body length, u8 kind, u32 tag, body (little-endian).
constexpr std::size_t stream_prefix = 9;
constexpr std::uint32_t handshake_magic = 0x43525056;  // "VPRC"
constexpr std::size_t send_high_water = 1u << 20;
constexpr std::size_t recv_chunk = 1u << 18;

void put_u32(std::byte* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::byte>((v >> (8 * i)) & 0xff);
}

std::uint32_t get_u32(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::to_integer<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }
  int get() const { return fd_; }
  int release() { return std::exchange(fd_, -1); }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

[[noreturn]] void throw_errno(errc code, const std::string& what) {
  throw error(code, what + ": " + std::strerror(errno));
}

sockaddr_in resolve(const SocketAddress& addr) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(addr.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw error(errc::bad_address, "cannot resolve " + addr.host);
  }
  sockaddr_in sa{};
  std::memcpy(&sa, res->ai_addr, sizeof(sa));
  ::freeaddrinfo(res);
  sa.sin_port = htons(addr.port);
  return sa;
}

void write_all(int fd, const std::byte* p, std::size_t n) {
  while (n > 0) {
    const auto w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw_errno(errc::connect_failed, "handshake write");
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

void read_all(int fd, std::byte* p, std::size_t n, std::chrono::milliseconds timeout) {
  while (n > 0) {
    pollfd pfd{fd, POLLIN, 0};
    const int r = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (r == 0) throw error(errc::connect_failed, "handshake timeout");
    if (r < 0) {
      if (errno == EINTR) continue;
      throw_errno(errc::connect_failed, "handshake poll");
    }
    const auto got = ::recv(fd, p, n, 0);
    if (got == 0) throw error(errc::connect_failed, "handshake eof");
    if (got < 0) {
      if (errno == EINTR) continue;
      throw_errno(errc::connect_failed, "handshake read");
    }
    p += got;
    n -= static_cast<std::size_t>(got);
  }
}

void set_stream_options(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

class Listener {
 public:
  explicit Listener(const SocketAddress& addr) {
    const auto sa = resolve(addr);
    Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (fd.get() < 0) throw_errno(errc::connect_failed, "socket");
    int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd.get(), reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) != 0) {
      throw_errno(errc::connect_failed, "bind " + addr.host + ":" + std::to_string(addr.port));
    }
    if (::listen(fd.get(), 256) != 0) throw_errno(errc::connect_failed, "listen");
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
    fd_ = std::move(fd);
  }

  std::uint16_t port() const { return port_; }

  Fd accept(std::chrono::steady_clock::time_point deadline) {
    for (;;) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw error(errc::connect_failed, "accept timeout");
      pollfd pfd{fd_.get(), POLLIN, 0};
      const int r = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (r < 0 && errno != EINTR) throw_errno(errc::connect_failed, "accept poll");
      if (r <= 0) continue;
      Fd s(::accept(fd_.get(), nullptr, nullptr));
      if (s.get() >= 0) return s;
      if (errno != EINTR && errno != EAGAIN) throw_errno(errc::connect_failed, "accept");
    }
  }

 private:
  Fd fd_;
  std::uint16_t port_ = 0;
};

class SocketEndpoint final : public Endpoint {
 public:
  SocketEndpoint(rank_t local, rank_t peer, channel_t channel, std::size_t max_frame, Fd fd)
      : Endpoint(local, peer, channel, max_frame), fd_(std::move(fd)) {
    set_stream_options(fd_.get());
  }

  ~SocketEndpoint() override {
    // Best effort: deliver what was accepted before closing.
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
    while (!broken_ && pending_out() > 0 && std::chrono::steady_clock::now() < deadline) {
      pollfd pfd{fd_.get(), POLLOUT, 0};
      ::poll(&pfd, 1, 50);
      try {
        push_out();
      } catch (const error&) {
        break;
      }
    }
    ::shutdown(fd_.get(), SHUT_WR);
  }

 protected:
  SendResult do_try_send(Frame& f) override {
    if (broken_) throw error(errc::disconnected, "socket peer gone");
    push_out();
    if (pending_out() > send_high_water) return SendResult::would_block;
    const auto at = out_.size();
    out_.resize(at + stream_prefix + f.body.size());
    put_u32(out_.data() + at, static_cast<std::uint32_t>(f.body.size()));
    out_[at + 4] = static_cast<std::byte>(f.kind);
    put_u32(out_.data() + at + 5, f.tag.value());
    if (!f.body.empty()) std::memcpy(out_.data() + at + stream_prefix, f.body.data(), f.body.size());
    f.body.clear();
    push_out();
    return SendResult::accepted;
  }

  std::optional<Frame> do_try_recv() override {
    if (!broken_) {
      try {
        push_out();
      } catch (const error&) {
        // Reported by the next send; queued input is still readable.
      }
    }
    if (auto f = parse()) return f;
    if (!eof_) {
      fill();
      if (auto f = parse()) return f;
    }
    if (eof_) throw error(errc::disconnected, "socket peer closed");
    return std::nullopt;
  }

  void do_flush() override {
    if (!broken_) push_out();
  }

 private:
  std::size_t pending_out() const { return out_.size() - out_off_; }

  void push_out() {
    while (out_off_ < out_.size()) {
      const auto n = ::send(fd_.get(), out_.data() + out_off_, out_.size() - out_off_,
                            MSG_NOSIGNAL | MSG_DONTWAIT);
      if (n > 0) {
        out_off_ += static_cast<std::size_t>(n);
        continue;
      }
      if (n < 0 && errno == EINTR) continue;
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) break;
      broken_ = true;
      throw error(errc::disconnected, std::string("socket send: ") + std::strerror(errno));
    }
    if (out_off_ == out_.size()) {
      out_.clear();
      out_off_ = 0;
    } else if (out_off_ > (1u << 20)) {
      out_.erase(out_.begin(), out_.begin() + static_cast<std::ptrdiff_t>(out_off_));
      out_off_ = 0;
    }
  }

  void fill() {
    for (;;) {
      const auto at = in_.size();
      in_.resize(at + recv_chunk);
      const auto n = ::recv(fd_.get(), in_.data() + at, recv_chunk, MSG_DONTWAIT);
      if (n > 0) {
        in_.resize(at + static_cast<std::size_t>(n));
        if (static_cast<std::size_t>(n) < recv_chunk) return;
        continue;
      }
      in_.resize(at);
      if (n == 0) {
        eof_ = true;
        return;
      }
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) return;
      eof_ = true;
      return;
    }
  }

  std::optional<Frame> parse() {
    const std::size_t avail = in_.size() - in_off_;
    if (avail < stream_prefix) return std::nullopt;
    const std::byte* p = in_.data() + in_off_;
    const std::size_t len = get_u32(p);
    if (len > max_frame()) throw error(errc::frame_too_large, "incoming " + std::to_string(len));
    if (avail < stream_prefix + len) return std::nullopt;
    Frame f;
    const auto kind = std::to_integer<std::uint8_t>(p[4]);
    f.kind = kind == 0 ? FrameKind::header : FrameKind::data;
    f.tag = Tag{get_u32(p + 5)};
    if (kind > 1 || !f.consistent()) {
      throw error(errc::tag_class_mismatch, "malformed stream frame");
    }
    f.body.assign(p + stream_prefix, p + stream_prefix + len);
    in_off_ += stream_prefix + len;
    if (in_off_ == in_.size()) {
      in_.clear();
      in_off_ = 0;
    } else if (in_off_ > (1u << 20)) {
      in_.erase(in_.begin(), in_.begin() + static_cast<std::ptrdiff_t>(in_off_));
      in_off_ = 0;
    }
    return f;
  }

  Fd fd_;
  Bytes out_;
  std::size_t out_off_ = 0;
  Bytes in_;
  std::size_t in_off_ = 0;
  bool eof_ = false;
  bool broken_ = false;
};

Fd connect_with_retry(const SocketAddress& addr, std::chrono::steady_clock::time_point deadline) {
  const auto sa = resolve(addr);
  for (;;) {
    Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (fd.get() < 0) throw_errno(errc::connect_failed, "socket");
    if (::connect(fd.get(), reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) == 0) return fd;
    const int err = errno;
    if (std::chrono::steady_clock::now() >= deadline) {
      throw error(errc::connect_failed, "connect " + addr.host + ":" + std::to_string(addr.port) +
                                            ": " + std::strerror(err));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

EndpointMatrix connect_socket_rank(const TransportConfig& cfg, rank_t local, std::size_t ranks,
                                   std::size_t channels, Listener* listener) {
  const auto deadline = std::chrono::steady_clock::now() + cfg.connect_timeout;
  EndpointMatrix m(channels);
  for (auto& row : m) row.resize(ranks);

  for (rank_t peer = 0; peer < local; ++peer) {
    const auto addr = parse_address(cfg.addresses.at(peer));
    for (std::size_t c = 0; c < channels; ++c) {
      Fd fd = connect_with_retry(addr, deadline);
      std::byte hello[12];
      put_u32(hello, handshake_magic);
      put_u32(hello + 4, local);
      put_u32(hello + 8, static_cast<std::uint32_t>(c));
      write_all(fd.get(), hello, sizeof(hello));
      m[c][peer] = std::make_unique<SocketEndpoint>(local, peer, static_cast<channel_t>(c),
                                                    cfg.max_frame, std::move(fd));
    }
  }

  const std::size_t expected = (ranks - 1 - local) * channels;
  for (std::size_t i = 0; i < expected; ++i) {
    Fd fd = listener->accept(deadline);
    std::byte hello[12];
    read_all(fd.get(), hello, sizeof(hello), cfg.connect_timeout);
    const auto peer = get_u32(hello + 4);
    const auto c = get_u32(hello + 8);
    if (get_u32(hello) != handshake_magic || peer <= local || peer >= ranks || c >= channels ||
        m[c][peer]) {
      throw error(errc::connect_failed, "bad handshake");
    }
    m[c][peer] = std::make_unique<SocketEndpoint>(local, peer, static_cast<channel_t>(c),
                                                  cfg.max_frame, std::move(fd));
  }
  return m;
}

void check_shape(std::size_t ranks, std::size_t channels) {
  if (ranks < 1) throw error(errc::invalid_config, "need at least one rank");
  if (channels < 1 || channels > 65536) throw error(errc::invalid_config, "channel count");
}

}  // namespace

// ---------------------------------------------------------------------------

SendResult Endpoint::try_send(Frame& f) {
  ++tl_transport_ops;
  if (f.body.size() > max_frame_) {
    throw error(errc::frame_too_large,
                std::to_string(f.body.size()) + " > " + std::to_string(max_frame_));
  }
  if (!f.consistent()) throw error(errc::tag_class_mismatch, "frame kind/tag");
  const auto kind = f.kind;
  const auto tag = f.tag.value();
  const auto size = f.body.size();
  const auto r = do_try_send(f);
  if (r == SendResult::accepted) {
    frames_sent_.fetch_add(1, std::memory_order_relaxed);
    if (kind == FrameKind::header) header_frames_sent_.fetch_add(1, std::memory_order_relaxed);
    bytes_sent_.fetch_add(size, std::memory_order_relaxed);
    auto h = send_trace_.load(std::memory_order_relaxed);
    h = mix(mix(mix(h, static_cast<std::uint64_t>(kind)), tag), size);
    send_trace_.store(h, std::memory_order_relaxed);
  }
  return r;
}

std::optional<Frame> Endpoint::try_recv() {
  ++tl_transport_ops;
  auto f = do_try_recv();
  if (f) {
    f->source_rank = peer_;
    frames_received_.fetch_add(1, std::memory_order_relaxed);
  }
  return f;
}

void Endpoint::flush() {
  ++tl_transport_ops;
  do_flush();
}

EndpointCounters Endpoint::counters() const {
  return {frames_sent_.load(std::memory_order_relaxed),
          frames_received_.load(std::memory_order_relaxed),
          header_frames_sent_.load(std::memory_order_relaxed),
          bytes_sent_.load(std::memory_order_relaxed),
          send_trace_.load(std::memory_order_relaxed)};
}

std::uint64_t transport_ops_on_this_thread() { return tl_transport_ops; }

SocketAddress parse_address(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw error(errc::bad_address, "expected host:port, got '" + text + "'");
  }
  const auto port_text = text.substr(colon + 1);
  char* end = nullptr;
  const long port = std::strtol(port_text.c_str(), &end, 10);
  if (*end != '\0' || port < 0 || port > 65535) {
    throw error(errc::bad_address, "bad port in '" + text + "'");
  }
  return {text.substr(0, colon), static_cast<std::uint16_t>(port)};
}

std::vector<std::string> addresses_from_env(std::size_t ranks) {
  std::vector<std::string> out;
  for (std::size_t r = 0; r < ranks; ++r) {
    const char* v = std::getenv(("VPARCEL_ADDR_" + std::to_string(r)).c_str());
    if (v == nullptr) return {};
    out.emplace_back(v);
  }
  return out;
}

std::vector<EndpointMatrix> connect_all(const TransportConfig& cfg, std::size_t ranks,
                                        std::size_t channels) {
  check_shape(ranks, channels);
  if (cfg.kind == TransportKind::loopback) return connect_loopback(cfg, ranks, channels);

  TransportConfig local = cfg;
  if (local.addresses.empty()) local.addresses.assign(ranks, "127.0.0.1:0");
  if (local.addresses.size() != ranks) throw error(errc::bad_address, "one address per rank");

  std::vector<std::unique_ptr<Listener>> listeners;
  for (std::size_t r = 0; r < ranks; ++r) {
    auto addr = parse_address(local.addresses[r]);
    listeners.push_back(std::make_unique<Listener>(addr));
    local.addresses[r] = addr.host + ":" + std::to_string(listeners.back()->port());
  }

  std::vector<EndpointMatrix> out(ranks);
  std::vector<std::exception_ptr> errors(ranks);
  std::vector<std::thread> workers;
  for (rank_t r = 0; r < ranks; ++r) {
    workers.emplace_back([&, r] {
      try {
        out[r] = connect_socket_rank(local, r, ranks, channels, listeners[r].get());
      } catch (...) {
        errors[r] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

EndpointMatrix connect_rank(const TransportConfig& cfg, rank_t local_rank, std::size_t ranks,
                            std::size_t channels) {
  check_shape(ranks, channels);
  if (cfg.kind != TransportKind::socket) {
    throw error(errc::invalid_config, "connect_rank needs the socket transport");
  }
  if (cfg.addresses.size() != ranks) throw error(errc::bad_address, "one address per rank");
  if (local_rank >= ranks) throw error(errc::invalid_config, "rank out of range");
  Listener listener(parse_address(cfg.addresses[local_rank]));
  return connect_socket_rank(cfg, local_rank, ranks, channels, &listener);
}

}  // namespace vparcel
