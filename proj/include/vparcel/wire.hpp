// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

// Header wire format, frame envelope and the tag namespace.
//
// Layout of an encoded header (all integers little-endian):
//
//   offset  size  field
//   0       1     version
//   1       1     flags (bit 0 = piggybacked, other bits must be zero)
//   2       2     channel_index
//   4       4     followup_tag
//   8       4     nzc_size
//   12      2     zc_count
//   14      4*n   zc sizes
//   ...     nzc   payload, present iff piggybacked
//
// docs/protocol.md carries the golden vectors.

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace vparcel {

using Bytes = std::vector<std::byte>;
using ByteView = std::span<const std::byte>;
using rank_t = std::uint32_t;
using channel_t = std::uint16_t;

inline constexpr std::uint8_t wire_version = 1;
inline constexpr std::size_t header_fixed_size = 14;
inline constexpr std::uint32_t tag_limit = 1u << 20;
inline constexpr std::size_t max_zc_chunks = 65535;

/// A message tag. Zero is reserved for headers; data messages use [1, 2^20).
class Tag {
 public:
  constexpr Tag() = default;
  constexpr explicit Tag(std::uint32_t value) : value_(value) {}

  constexpr std::uint32_t value() const { return value_; }
  constexpr bool is_header() const { return value_ == 0; }
  constexpr bool is_data() const { return value_ != 0; }
  constexpr bool in_range() const { return value_ < tag_limit; }

  friend constexpr bool operator==(Tag, Tag) = default;
  friend constexpr auto operator<=>(Tag, Tag) = default;

 private:
  std::uint32_t value_ = 0;
};

inline constexpr Tag header_tag{0};

struct Header {
  std::uint8_t version = wire_version;
  channel_t channel_index = 0;
  Tag followup_tag{1};
  std::uint32_t nzc_size = 0;
  std::vector<std::uint32_t> zc_sizes;
  bool piggybacked = false;
  Bytes payload;

  friend bool operator==(const Header&, const Header&) = default;
};

/// Throws vparcel::error when the header violates its invariants.
void validate(const Header& h);

std::size_t encoded_size(const Header& h);
Bytes encode_header(const Header& h);
/// Total over arbitrary input: returns a valid header or throws vparcel::error.
Header decode_header(ByteView bytes);

enum class FrameKind : std::uint8_t { header = 0, data = 1 };

struct Frame {
  FrameKind kind = FrameKind::header;
  rank_t source_rank = 0;
  Tag tag;
  Bytes body;

  /// Builds a frame whose kind follows from the tag class.
  static Frame make(Tag tag, Bytes body, rank_t source = 0) {
    return Frame{tag.is_header() ? FrameKind::header : FrameKind::data,
                 source, tag, std::move(body)};
  }
  bool consistent() const {
    return (kind == FrameKind::header) == tag.is_header() && tag.in_range();
  }
};

/// 1 + (counter mod (2^20 - 1)).
constexpr Tag allocate_tag(std::uint64_t counter) {
  return Tag{static_cast<std::uint32_t>(1 + counter % (tag_limit - 1))};
}

/// Per-channel follow-up tag source. Tags repeat only after 2^20 - 1 calls;
/// a wrapped tag colliding with a parcel still in flight is out of contract.
class TagAllocator {
 public:
  Tag next() { return allocate_tag(counter_.fetch_add(1, std::memory_order_relaxed)); }
  std::uint64_t issued() const { return counter_.load(std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> counter_{0};
};

inline Bytes to_bytes(std::string_view s) {
  Bytes out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = static_cast<std::byte>(s[i]);
  return out;
}

}  // namespace vparcel
