// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <atomic>
#include <map>
#include <thread>

#include "support.hpp"
#include "vparcel/channel.hpp"
#include "vparcel/completion.hpp"
#include "vparcel/error.hpp"

using namespace vparcel;
using namespace vparcel::testing;

namespace {

void pump(Job& job) {
  for (auto& rank : job.ch) {
    for (auto& c : rank) c->progress(LockMode::blocking);
  }
}

bool settle(Job& job, const std::function<bool()>& pred) {
  return spin_until(pred, [&] { pump(job); });
}

}  // namespace

TEST(Channel, SendRecvDelivers) {
  Job job = make_job(2, 1);
  Bytes buf(16);
  auto r = job.at(1, 0).post_recv(0, Tag{7}, buf);
  auto s = job.at(0, 0).post_send(1, FrameKind::data, Tag{7}, to_bytes("payload"));
  EXPECT_FALSE(s->is_complete());
  ASSERT_TRUE(settle(job, [&] { return r->is_complete() && s->is_complete(); }));
  EXPECT_EQ(r->status(), OpStatus::ok);
  EXPECT_EQ(r->size(), 7u);
  EXPECT_EQ(r->peer(), 0u);
  EXPECT_EQ(Bytes(buf.begin(), buf.begin() + 7), to_bytes("payload"));
  EXPECT_EQ(s->status(), OpStatus::ok);
}

TEST(Channel, NonOvertakingSameKey) {
  Job job = make_job(2, 1);
  std::vector<OpHandle> recvs;
  for (int i = 0; i < 5; ++i) recvs.push_back(job.at(1, 0).post_recv(0, Tag{3}));
  for (int i = 0; i < 5; ++i) {
    job.at(0, 0).post_send(1, FrameKind::data, Tag{3}, Bytes(1, static_cast<std::byte>(i)));
  }
  ASSERT_TRUE(settle(job, [&] { return recvs.back()->is_complete(); }));
  for (int i = 0; i < 5; ++i) EXPECT_EQ(recvs[i]->body()[0], static_cast<std::byte>(i));
}

TEST(Channel, TagClassChecked) {
  Job job = make_job(2, 1);
  auto& c = job.at(0, 0);
  EXPECT_THROW(c.post_send(1, FrameKind::data, header_tag, {}), error);
  EXPECT_THROW(c.post_send(1, FrameKind::header, Tag{4}, {}), error);
  EXPECT_THROW(c.post_send(0, FrameKind::data, Tag{4}, {}), error);
  EXPECT_THROW(c.post_send(2, FrameKind::data, Tag{4}, {}), error);
  EXPECT_THROW(c.post_recv(any_source, Tag{4}), error);
  EXPECT_THROW(c.post_recv(1, Tag{tag_limit}), error);
}

TEST(Channel, UnexpectedThenPost) {
  Job job = make_job(2, 1);
  job.at(0, 0).post_send(1, FrameKind::data, Tag{9}, to_bytes("early"));
  ASSERT_TRUE(settle(job, [&] { return job.at(1, 0).stats().unexpected == 1; }));
  auto r = job.at(1, 0).post_recv(0, Tag{9});
  EXPECT_TRUE(r->is_complete());
  EXPECT_EQ(r->body(), to_bytes("early"));
  EXPECT_EQ(job.at(1, 0).stats().unexpected, 0u);
}

TEST(Channel, WildcardHeaderFromTwoSenders) {
  Job job = make_job(3, 1);
  auto& rx = job.at(0, 0);
  std::vector<OpHandle> hdr{rx.post_recv(any_source, header_tag), rx.post_recv(any_source, header_tag)};
  job.at(1, 0).post_send(0, FrameKind::header, header_tag, to_bytes("from1"));
  job.at(2, 0).post_send(0, FrameKind::header, header_tag, to_bytes("from2"));
  ASSERT_TRUE(settle(job, [&] { return hdr[0]->is_complete() && hdr[1]->is_complete(); }));
  std::map<rank_t, Bytes> got;
  for (auto& h : hdr) got[h->peer()] = h->body();
  EXPECT_EQ(got[1], to_bytes("from1"));
  EXPECT_EQ(got[2], to_bytes("from2"));
}

TEST(Channel, UnmatchedStaysPending) {
  Job job = make_job(2, 1);
  auto r = job.at(1, 0).post_recv(0, Tag{12});
  job.at(0, 0).post_send(1, FrameKind::data, Tag{13}, to_bytes("other"));
  for (int i = 0; i < 100; ++i) pump(job);
  EXPECT_FALSE(r->is_complete());
  EXPECT_EQ(r->status(), OpStatus::pending);
}

TEST(Channel, TruncationStatus) {
  Job job = make_job(2, 1);
  Bytes small(2);
  auto r = job.at(1, 0).post_recv(0, Tag{1}, small);
  job.at(0, 0).post_send(1, FrameKind::data, Tag{1}, to_bytes("toolong"));
  ASSERT_TRUE(settle(job, [&] { return r->is_complete(); }));
  EXPECT_EQ(r->status(), OpStatus::truncated);
  EXPECT_EQ(r->size(), 7u);
}

TEST(Channel, ProgressResults) {
  Job job = make_job(2, 1);
  EXPECT_EQ(job.at(1, 0).progress(LockMode::try_lock), ProgressResult::idle);
  auto r = job.at(1, 0).post_recv(0, Tag{2});
  job.at(0, 0).post_send(1, FrameKind::data, Tag{2}, to_bytes("x"));
  EXPECT_EQ(job.at(0, 0).progress(LockMode::try_lock), ProgressResult::progressed);
  EXPECT_EQ(job.at(1, 0).progress(LockMode::try_lock), ProgressResult::progressed);
  EXPECT_TRUE(r->is_complete());
  EXPECT_EQ(job.at(1, 0).progress(LockMode::try_lock), ProgressResult::idle);
}

TEST(Channel, BusyMeansNoTransportCalls) {
  Job job = make_job(2, 1);
  job.at(0, 0).post_send(1, FrameKind::data, Tag{2}, to_bytes("x"));
  auto held = job.at(0, 0).hold_guard();
  std::uint64_t ops = 99;
  ProgressResult res = ProgressResult::idle;
  std::thread other([&] {
    const auto before = transport_ops_on_this_thread();
    res = job.at(0, 0).progress(LockMode::try_lock);
    ops = transport_ops_on_this_thread() - before;
  });
  other.join();
  EXPECT_EQ(res, ProgressResult::busy);
  EXPECT_EQ(ops, 0u);
  EXPECT_EQ(job.at(0, 0).stats().busy, 1u);
  held.unlock();
  EXPECT_EQ(job.at(0, 0).progress(LockMode::try_lock), ProgressResult::progressed);
}

TEST(Channel, BlockingProgressWaitsAndCounts) {
  Job job = make_job(2, 1);
  auto held = job.at(0, 0).hold_guard();
  std::atomic<bool> finished{false};
  std::thread other([&] {
    job.at(0, 0).progress(LockMode::blocking);
    finished = true;
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  EXPECT_FALSE(finished);
  held.unlock();
  other.join();
  EXPECT_TRUE(finished);
  EXPECT_GE(job.at(0, 0).stats().blocked, 1u);
}

TEST(Channel, PollPoolsReturnsCompleted) {
  Job job = make_job(2, 1);
  auto& c = job.at(0, 0);
  EXPECT_TRUE(c.poll_pools(8).empty());
  std::vector<std::uint64_t> sends;
  for (int i = 0; i < 3; ++i) {
    sends.push_back(c.post_send(1, FrameKind::data, Tag{1}, to_bytes("s"), Completion::pool())->id());
  }
  c.post_recv(1, Tag{50}, Completion::pool());
  c.post_recv(1, Tag{51}, Completion::pool());
  c.progress(LockMode::blocking);
  auto done = c.poll_pools(8);
  ASSERT_EQ(done.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(done[i]->id(), sends[i]);
  EXPECT_EQ(c.pool_sizes(), 2u);
}

TEST(Channel, PollPoolsAlternates) {
  Job job = make_job(2, 1);
  auto& c = job.at(0, 0);
  std::vector<std::uint64_t> s, r;
  for (int i = 0; i < 2; ++i) {
    s.push_back(c.post_send(1, FrameKind::data, Tag{1}, to_bytes("s"), Completion::pool())->id());
    r.push_back(c.post_recv(1, Tag{2}, Completion::pool())->id());
    job.at(1, 0).post_send(0, FrameKind::data, Tag{2}, to_bytes("r"));
  }
  ASSERT_TRUE(settle(job, [&] { return c.stats().frames_matched == 2; }));
  std::vector<std::uint64_t> order;
  for (int i = 0; i < 4; ++i) {
    auto got = c.poll_pools(1);
    ASSERT_EQ(got.size(), 1u);
    order.push_back(got[0]->id());
  }
  EXPECT_EQ(order, (std::vector<std::uint64_t>{s[0], r[0], s[1], r[1]}));
}

TEST(Channel, PendingRequestsRotate) {
  Job job = make_job(2, 1);
  auto& c = job.at(0, 0);
  auto stuck = c.post_recv(1, Tag{60}, Completion::pool());
  auto ready = c.post_recv(1, Tag{61}, Completion::pool());
  job.at(1, 0).post_send(0, FrameKind::data, Tag{61}, {});
  ASSERT_TRUE(settle(job, [&] { return ready->is_complete(); }));
  EXPECT_TRUE(c.poll_pools(1).empty());
  auto got = c.poll_pools(1);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0], ready);
  EXPECT_FALSE(stuck->is_complete());
}

TEST(Channel, PoolAndContinuationExclusive) {
  Job job = make_job(2, 1);
  auto req = job.at(0, 0).post_recv(1, Tag{5}, Completion::pool());
  EXPECT_THROW(attach_continuation(req, [](const OpRequest&) {}), error);
}

TEST(Channel, GlobalProgressDisabled) {
  ChannelConfig cfg;
  cfg.global_progress_interval = 0;
  Job job = make_job(2, 2, cfg);
  auto all = job.of(0);
  for (int i = 0; i < 600; ++i) {
    job.at(0, 0).progress(LockMode::try_lock);
    EXPECT_EQ(maybe_global_progress(job.at(0, 0), all), GlobalProgressResult::skipped);
  }
}

TEST(Channel, GlobalProgressEvery256) {
  Job job = make_job(2, 2);
  auto all = job.of(0);
  for (int i = 1; i <= 512; ++i) {
    job.at(0, 0).progress(LockMode::try_lock);
    const auto r = maybe_global_progress(job.at(0, 0), all);
    EXPECT_EQ(r == GlobalProgressResult::ran, i % 256 == 0) << i;
  }
  EXPECT_EQ(job.at(0, 0).stats().global_sweeps, 2u);
  EXPECT_EQ(job.at(0, 1).local_progress_count(), 0u);
  EXPECT_EQ(job.at(0, 1).stats().progress_calls, 2u);
}

TEST(Channel, GlobalProgressInterval4) {
  ChannelConfig cfg;
  cfg.global_progress_interval = 4;
  Job job = make_job(2, 3, cfg);
  auto all = job.of(0);
  int ran = 0;
  for (int i = 0; i < 12; ++i) {
    job.at(0, 1).progress(LockMode::try_lock);
    ran += maybe_global_progress(job.at(0, 1), all) == GlobalProgressResult::ran;
  }
  EXPECT_EQ(ran, 3);
  EXPECT_EQ(maybe_global_progress(job.at(0, 1), all), GlobalProgressResult::skipped);
}

TEST(Channel, GlobalProgressRescuesUnpolledChannel) {
  ChannelConfig cfg;
  cfg.global_progress_interval = 8;
  Job job = make_job(2, 2, cfg);
  auto all = job.of(0);
  auto s = job.at(0, 1).post_send(1, FrameKind::data, Tag{4}, to_bytes("stuck"));
  for (int i = 0; i < 7; ++i) {
    job.at(0, 0).progress(LockMode::try_lock);
    maybe_global_progress(job.at(0, 0), all);
  }
  EXPECT_FALSE(s->is_complete());
  job.at(0, 0).progress(LockMode::try_lock);
  EXPECT_EQ(maybe_global_progress(job.at(0, 0), all), GlobalProgressResult::ran);
  EXPECT_TRUE(s->is_complete());
}

TEST(Channel, ConservationAtQuiescence) {
  Job job = make_job(2, 1);
  std::mt19937_64 rng(3);
  std::vector<OpHandle> recvs;
  std::size_t sent = 0;
  for (int i = 0; i < 200; ++i) {
    const Tag t{1 + static_cast<std::uint32_t>(rng() % 6)};
    if (rng() % 2) {
      job.at(0, 0).post_send(1, FrameKind::data, t, random_bytes(rng, rng() % 8));
      ++sent;
    } else {
      recvs.push_back(job.at(1, 0).post_recv(0, t));
    }
    if (rng() % 3 == 0) pump(job);
  }
  for (int i = 0; i < 50; ++i) pump(job);
  const auto st = job.at(1, 0).stats();
  EXPECT_EQ(job.at(0, 0).endpoint_totals().frames_sent, sent);
  EXPECT_EQ(st.frames_received, sent);
  EXPECT_EQ(st.frames_matched + st.unexpected, sent);
}

TEST(Channel, MatchingIsDeterministic) {
  auto replay = [] {
    Job job = make_job(2, 1);
    std::mt19937_64 rng(17);
    std::vector<OpHandle> recvs;
    for (int i = 0; i < 300; ++i) {
      const Tag t{1 + static_cast<std::uint32_t>(rng() % 4)};
      switch (rng() % 3) {
        case 0:
          job.at(0, 0).post_send(1, FrameKind::data, t,
                                 Bytes(1, static_cast<std::byte>(i & 0xff)));
          break;
        case 1: recvs.push_back(job.at(1, 0).post_recv(0, t)); break;
        default: pump(job);
      }
    }
    for (int i = 0; i < 20; ++i) pump(job);
    std::vector<int> trace;
    for (auto& r : recvs) trace.push_back(r->is_complete() ? static_cast<int>(r->body()[0]) : -1);
    return trace;
  };
  EXPECT_EQ(replay(), replay());
}

TEST(Channel, UnexpectedHeadersBoundedByPeers) {
  Job job = make_job(3, 1);
  for (rank_t src : {1u, 2u}) {
    for (int i = 0; i < 50; ++i) {
      job.at(src, 0).post_send(0, FrameKind::header, header_tag, to_bytes("h"));
    }
  }
  std::size_t consumed = 0;
  for (int round = 0; round < 400 && consumed < 100; ++round) {
    pump(job);
    EXPECT_LE(job.at(0, 0).stats().unexpected_headers, 2u);
    if (round % 2 == 0) {
      auto h = job.at(0, 0).post_recv(any_source, header_tag);
      if (h->is_complete()) ++consumed;
    }
  }
  EXPECT_GT(consumed, 0u);
}

TEST(Channel, DisconnectFailsPending) {
  Job job = make_job(2, 1);
  auto r = job.at(1, 0).post_recv(0, Tag{3});
  auto any = job.at(1, 0).post_recv(any_source, header_tag);
  job.ch[0].clear();
  ASSERT_TRUE(spin_until([&] { return r->is_complete(); },
                         [&] { job.at(1, 0).progress(LockMode::blocking); }));
  EXPECT_EQ(r->status(), OpStatus::disconnected);
  EXPECT_FALSE(any->is_complete());
  auto late = job.at(1, 0).post_recv(0, Tag{4});
  EXPECT_EQ(late->status(), OpStatus::disconnected);
  auto s = job.at(1, 0).post_send(0, FrameKind::data, Tag{4}, {});
  EXPECT_EQ(s->status(), OpStatus::disconnected);
}
