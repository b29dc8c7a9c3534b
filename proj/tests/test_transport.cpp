// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>

#include "support.hpp"
#include "vparcel/error.hpp"
#include "vparcel/transport.hpp"

using namespace vparcel;
using namespace vparcel::testing;

namespace {

Frame data(std::uint32_t tag, const std::string& s) { return Frame::make(Tag{tag}, to_bytes(s)); }

std::optional<Frame> recv_wait(Endpoint& ep) {
  std::optional<Frame> f;
  spin_until([&] { return (f = ep.try_recv()).has_value(); }, [] {});
  return f;
}

class TransportKinds : public ::testing::TestWithParam<TransportKind> {
 protected:
  TransportConfig config() const {
    TransportConfig c;
    c.kind = GetParam();
    return c;
  }
};

}  // namespace

TEST_P(TransportKinds, MatrixShape) {
  auto m = connect_all(config(), 2, 4);
  ASSERT_EQ(m.size(), 2u);
  for (rank_t r = 0; r < 2; ++r) {
    ASSERT_EQ(m[r].size(), 4u);
    for (channel_t c = 0; c < 4; ++c) {
      ASSERT_EQ(m[r][c].size(), 2u);
      EXPECT_EQ(m[r][c][r], nullptr);
      Endpoint& ep = *m[r][c][1 - r];
      EXPECT_EQ(ep.local_rank(), r);
      EXPECT_EQ(ep.peer_rank(), 1 - r);
      EXPECT_EQ(ep.channel_index(), c);
    }
  }
}

TEST_P(TransportKinds, FifoAndSource) {
  auto m = connect_all(config(), 2, 1);
  Endpoint& a = *m[0][0][1];
  Endpoint& b = *m[1][0][0];
  EXPECT_FALSE(b.try_recv());
  for (const char* s : {"A", "B", "C"}) {
    Frame f = data(3, s);
    ASSERT_EQ(a.try_send(f), SendResult::accepted);
  }
  a.flush();
  for (const char* s : {"A", "B", "C"}) {
    auto f = recv_wait(b);
    ASSERT_TRUE(f);
    EXPECT_EQ(f->body, to_bytes(s));
    EXPECT_EQ(f->source_rank, 0u);
    EXPECT_EQ(f->tag, Tag{3});
  }
  EXPECT_EQ(a.counters().frames_sent, 3u);
  EXPECT_EQ(b.counters().frames_received, 3u);
}

TEST_P(TransportKinds, OversizedFrameRejected) {
  auto cfg = config();
  cfg.max_frame = 64;
  auto m = connect_all(cfg, 2, 1);
  Frame f = Frame::make(Tag{1}, Bytes(65));
  EXPECT_THROW(m[0][0][1]->try_send(f), error);
  EXPECT_EQ(f.body.size(), 65u);
  Frame ok = Frame::make(Tag{1}, Bytes(64));
  EXPECT_EQ(m[0][0][1]->try_send(ok), SendResult::accepted);
}

TEST_P(TransportKinds, NoCrossChannelLeakage) {
  auto m = connect_all(config(), 2, 2);
  std::mt19937_64 rng(5);
  std::vector<std::vector<Bytes>> expect(2);
  for (int i = 0; i < 20; ++i) {
    const channel_t c = rng() % 2;
    Bytes body = random_bytes(rng, 1 + rng() % 32);
    body[0] = static_cast<std::byte>(c);
    expect[c].push_back(body);
    Frame f = Frame::make(Tag{1u + c}, body);
    ASSERT_EQ(m[0][c][1]->try_send(f), SendResult::accepted);
  }
  for (channel_t c = 0; c < 2; ++c) m[0][c][1]->flush();
  for (channel_t c = 0; c < 2; ++c) {
    for (const auto& body : expect[c]) {
      auto f = recv_wait(*m[1][c][0]);
      ASSERT_TRUE(f);
      EXPECT_EQ(f->body, body);
      EXPECT_EQ(f->tag, Tag{1u + c});
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    EXPECT_FALSE(m[1][c][0]->try_recv());
  }
}

TEST_P(TransportKinds, DisconnectAfterDrain) {
  auto m = connect_all(config(), 2, 1);
  Frame f = data(1, "last");
  ASSERT_EQ(m[0][0][1]->try_send(f), SendResult::accepted);
  m[0][0][1].reset();
  auto got = recv_wait(*m[1][0][0]);
  ASSERT_TRUE(got);
  EXPECT_EQ(got->body, to_bytes("last"));
  bool disconnected = false;
  spin_until([&] { return disconnected; }, [&] {
    try {
      m[1][0][0]->try_recv();
    } catch (const error& e) {
      disconnected = e.code() == errc::disconnected;
    }
  });
  EXPECT_TRUE(disconnected);
}

INSTANTIATE_TEST_SUITE_P(Kinds, TransportKinds,
                         ::testing::Values(TransportKind::loopback, TransportKind::socket),
                         [](const auto& info) {
                           return info.param == TransportKind::loopback ? "loopback" : "socket";
                         });

TEST(Loopback, BackpressureThenDrain) {
  TransportConfig cfg;
  cfg.loopback_capacity = 16;
  auto m = connect_all(cfg, 2, 1);
  Endpoint& a = *m[0][0][1];
  Endpoint& b = *m[1][0][0];
  for (int i = 0; i < 16; ++i) {
    Frame f = Frame::make(Tag{1}, Bytes(1, static_cast<std::byte>(i)));
    ASSERT_EQ(a.try_send(f), SendResult::accepted);
  }
  Frame extra = Frame::make(Tag{1}, Bytes(1, std::byte{16}));
  EXPECT_EQ(a.try_send(extra), SendResult::would_block);
  EXPECT_EQ(extra.body.size(), 1u);
  ASSERT_TRUE(b.try_recv());
  EXPECT_EQ(a.try_send(extra), SendResult::accepted);
  for (int i = 1; i <= 16; ++i) {
    auto f = b.try_recv();
    ASSERT_TRUE(f);
    EXPECT_EQ(f->body[0], static_cast<std::byte>(i));
  }
  EXPECT_FALSE(b.try_recv());
}

TEST(Socket, OneStreamPerChannelPair) {
  TransportConfig cfg;
  cfg.kind = TransportKind::socket;
  auto m = connect_all(cfg, 3, 1);
  std::size_t endpoints = 0;
  for (auto& rank : m) {
    for (auto& ep : rank[0]) endpoints += ep ? 1 : 0;
  }
  EXPECT_EQ(endpoints, 6u);
  Frame f = data(9, "x");
  ASSERT_EQ(m[2][0][0]->try_send(f), SendResult::accepted);
  m[2][0][0]->flush();
  auto got = recv_wait(*m[0][0][2]);
  ASSERT_TRUE(got);
  EXPECT_EQ(got->source_rank, 2u);
  EXPECT_EQ(m[2][0][0]->counters().frames_sent, 1u);
  EXPECT_EQ(m[0][0][1]->counters().frames_received, 0u);
}

TEST(Socket, LargeFramesReassembled) {
  TransportConfig cfg;
  cfg.kind = TransportKind::socket;
  auto m = connect_all(cfg, 2, 1);
  std::mt19937_64 rng(11);
  std::vector<Bytes> sent;
  std::size_t received = 0;
  for (int i = 0; i < 40; ++i) {
    sent.push_back(random_bytes(rng, rng() % (256 * 1024)));
  }
  std::size_t next = 0;
  ASSERT_TRUE(spin_until([&] { return received == sent.size(); }, [&] {
    if (next < sent.size()) {
      Frame f = Frame::make(Tag{2}, sent[next]);
      if (m[0][0][1]->try_send(f) == SendResult::accepted) ++next;
    }
    m[0][0][1]->flush();
    if (auto f = m[1][0][0]->try_recv()) {
      ASSERT_EQ(f->body, sent[received]);
      ++received;
    }
  }));
}

TEST(Socket, AddressErrors) {
  EXPECT_THROW(parse_address("nohost"), error);
  EXPECT_THROW(parse_address("host:99999"), error);
  EXPECT_THROW(parse_address(":80"), error);
  const auto a = parse_address("127.0.0.1:4000");
  EXPECT_EQ(a.host, "127.0.0.1");
  EXPECT_EQ(a.port, 4000);

  TransportConfig cfg;
  cfg.kind = TransportKind::socket;
  cfg.addresses = {"not an address", "127.0.0.1:1"};
  EXPECT_THROW(connect_all(cfg, 2, 1), error);

  // Rank 1 connects to rank 0, which is not listening.
  cfg.addresses = {"127.0.0.1:1", "127.0.0.1:0"};
  cfg.connect_timeout = std::chrono::milliseconds(300);
  try {
    connect_rank(cfg, 1, 2, 1);
    FAIL() << "connected to a closed port";
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::connect_failed);
  }
}

TEST(Socket, AddressesFromEnvironment) {
  ::setenv("VPARCEL_ADDR_0", "127.0.0.1:5000", 1);
  ::setenv("VPARCEL_ADDR_1", "127.0.0.1:5001", 1);
  EXPECT_EQ(addresses_from_env(2), (std::vector<std::string>{"127.0.0.1:5000", "127.0.0.1:5001"}));
  ::unsetenv("VPARCEL_ADDR_1");
  EXPECT_TRUE(addresses_from_env(2).empty());
  ::unsetenv("VPARCEL_ADDR_0");
}

TEST(Transport, InstrumentationCountsCalls) {
  auto m = connect_all({}, 2, 1);
  const auto before = transport_ops_on_this_thread();
  m[1][0][0]->try_recv();
  Frame f = data(1, "a");
  m[0][0][1]->try_send(f);
  m[0][0][1]->flush();
  EXPECT_EQ(transport_ops_on_this_thread() - before, 3u);
}
