// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#include "vparcel/wire.hpp"

#include <cstring>
#include <string>

#include "vparcel/error.hpp"

namespace vparcel {

namespace {

constexpr std::uint8_t flag_piggybacked = 0x01;

template <typename T>
void put_le(std::byte* out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out[i] = static_cast<std::byte>((value >> (8 * i)) & 0xff);
  }
}

template <typename T>
T get_le(const std::byte* in) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(std::to_integer<T>(in[i]) << (8 * i));
  }
  return value;
}

void check_tag(Tag tag) {
  if (tag.is_header() || !tag.in_range()) {
    throw error(errc::invalid_tag, "followup tag " + std::to_string(tag.value()));
  }
}

}  // namespace

void validate(const Header& h) {
  if (h.version != wire_version) {
    throw error(errc::unknown_version, std::to_string(h.version));
  }
  check_tag(h.followup_tag);
  if (h.zc_sizes.size() > max_zc_chunks) {
    throw error(errc::too_many_chunks, std::to_string(h.zc_sizes.size()));
  }
  for (auto s : h.zc_sizes) {
    if (s == 0) throw error(errc::zero_chunk_size);
  }
  if (h.piggybacked ? h.payload.size() != h.nzc_size : !h.payload.empty()) {
    throw error(errc::payload_mismatch,
                "payload " + std::to_string(h.payload.size()) + " nzc_size " +
                    std::to_string(h.nzc_size));
  }
}

std::size_t encoded_size(const Header& h) {
  return header_fixed_size + 4 * h.zc_sizes.size() +
         (h.piggybacked ? h.payload.size() : 0);
}

Bytes encode_header(const Header& h) {
  validate(h);
  Bytes out(encoded_size(h));
  std::byte* p = out.data();
  put_le<std::uint8_t>(p, h.version);
  put_le<std::uint8_t>(p + 1, h.piggybacked ? flag_piggybacked : 0);
  put_le<std::uint16_t>(p + 2, h.channel_index);
  put_le<std::uint32_t>(p + 4, h.followup_tag.value());
  put_le<std::uint32_t>(p + 8, h.nzc_size);
  put_le<std::uint16_t>(p + 12, static_cast<std::uint16_t>(h.zc_sizes.size()));
  p += header_fixed_size;
  for (auto s : h.zc_sizes) {
    put_le<std::uint32_t>(p, s);
    p += 4;
  }
  if (h.piggybacked && !h.payload.empty()) {
    std::memcpy(p, h.payload.data(), h.payload.size());
  }
  return out;
}

Header decode_header(ByteView bytes) {
  if (bytes.size() < header_fixed_size) {
    throw error(errc::truncated, "need " + std::to_string(header_fixed_size) +
                                     " bytes, got " + std::to_string(bytes.size()));
  }
  const std::byte* p = bytes.data();
  Header h;
  h.version = get_le<std::uint8_t>(p);
  if (h.version != wire_version) {
    throw error(errc::unknown_version, std::to_string(h.version));
  }
  const auto flags = get_le<std::uint8_t>(p + 1);
  if (flags & ~flag_piggybacked) {
    throw error(errc::invalid_flags, std::to_string(flags));
  }
  h.piggybacked = flags & flag_piggybacked;
  h.channel_index = get_le<std::uint16_t>(p + 2);
  h.followup_tag = Tag{get_le<std::uint32_t>(p + 4)};
  check_tag(h.followup_tag);
  h.nzc_size = get_le<std::uint32_t>(p + 8);
  const std::size_t zc_count = get_le<std::uint16_t>(p + 12);

  const std::size_t sizes_end = header_fixed_size + 4 * zc_count;
  if (bytes.size() < sizes_end) {
    throw error(errc::truncated, "zc size table");
  }
  h.zc_sizes.resize(zc_count);
  for (std::size_t i = 0; i < zc_count; ++i) {
    h.zc_sizes[i] = get_le<std::uint32_t>(p + header_fixed_size + 4 * i);
    if (h.zc_sizes[i] == 0) throw error(errc::zero_chunk_size);
  }

  const std::size_t rest = bytes.size() - sizes_end;
  if (h.piggybacked) {
    if (rest < h.nzc_size) throw error(errc::truncated, "piggybacked payload");
    if (rest > h.nzc_size) throw error(errc::trailing_bytes);
    h.payload.assign(bytes.begin() + sizes_end, bytes.end());
  } else if (rest != 0) {
    throw error(errc::trailing_bytes);
  }
  return h;
}

}  // namespace vparcel
