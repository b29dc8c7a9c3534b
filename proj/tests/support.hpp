// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "vparcel/channel.hpp"
#include "vparcel/transport.hpp"
#include "vparcel/wire.hpp"

namespace vparcel::testing {

inline Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::byte>(rng());
  return b;
}

inline Bytes hex(const std::string& s) {
  Bytes out;
  std::string digits;
  for (char c : s) {
    if (c != ' ') digits += c;
  }
  for (std::size_t i = 0; i + 1 < digits.size(); i += 2) {
    out.push_back(static_cast<std::byte>(std::stoi(digits.substr(i, 2), nullptr, 16)));
  }
  return out;
}

// Independent byte-by-byte encoder used as an oracle for the header layout.
inline Bytes reference_encode(const Header& h) {
  Bytes out;
  auto push = [&](std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
  };
  push(h.version, 1);
  push(h.piggybacked ? 1 : 0, 1);
  push(h.channel_index, 2);
  push(h.followup_tag.value(), 4);
  push(h.nzc_size, 4);
  push(h.zc_sizes.size(), 2);
  for (auto z : h.zc_sizes) push(z, 4);
  if (h.piggybacked) out.insert(out.end(), h.payload.begin(), h.payload.end());
  return out;
}

inline Header random_header(std::mt19937_64& rng) {
  Header h;
  h.channel_index = static_cast<channel_t>(rng());
  h.followup_tag = Tag{1 + static_cast<std::uint32_t>(rng() % (tag_limit - 1))};
  const std::size_t zc = rng() % 4 == 0 ? rng() % 64 : rng() % 5;
  for (std::size_t i = 0; i < zc; ++i) h.zc_sizes.push_back(1 + static_cast<std::uint32_t>(rng()));
  h.piggybacked = rng() % 2 == 0;
  const std::size_t nzc = rng() % 3 == 0 ? rng() % 70000 : rng() % 64;
  h.nzc_size = static_cast<std::uint32_t>(nzc);
  if (h.piggybacked) h.payload = random_bytes(rng, nzc);
  return h;
}

// Both ranks' channels for one in-process job.
struct Job {
  std::vector<std::vector<std::unique_ptr<Channel>>> ch;  // [rank][channel]

  Channel& at(rank_t r, channel_t c) { return *ch[r][c]; }
  std::vector<Channel*> of(rank_t r) {
    std::vector<Channel*> out;
    for (auto& c : ch[r]) out.push_back(c.get());
    return out;
  }
};

inline Job make_job(std::size_t ranks, std::size_t channels, ChannelConfig cfg = {},
                    TransportConfig tc = {}) {
  auto matrices = connect_all(tc, ranks, channels);
  Job job;
  job.ch.resize(ranks);
  for (rank_t r = 0; r < ranks; ++r) {
    for (channel_t c = 0; c < channels; ++c) {
      job.ch[r].push_back(
          std::make_unique<Channel>(c, r, std::move(matrices[r][c]), cfg));
    }
  }
  return job;
}

// Calls step until pred holds or the deadline passes.
inline bool spin_until(const std::function<bool()>& pred, const std::function<void()>& step,
                       std::chrono::milliseconds limit = std::chrono::milliseconds(20000)) {
  const auto end = std::chrono::steady_clock::now() + limit;
  while (!pred()) {
    if (std::chrono::steady_clock::now() > end) return false;
    step();
  }
  return true;
}

}  // namespace vparcel::testing
