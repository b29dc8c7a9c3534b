// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#include "vparcel/error.hpp"

namespace vparcel {

std::string_view to_string(errc code) noexcept {
  switch (code) {
    case errc::truncated: return "truncated";
    case errc::unknown_version: return "unknown_version";
    case errc::invalid_flags: return "invalid_flags";
    case errc::payload_mismatch: return "payload_mismatch";
    case errc::invalid_tag: return "invalid_tag";
    case errc::too_many_chunks: return "too_many_chunks";
    case errc::zero_chunk_size: return "zero_chunk_size";
    case errc::trailing_bytes: return "trailing_bytes";
    case errc::frame_too_large: return "frame_too_large";
    case errc::disconnected: return "disconnected";
    case errc::connect_failed: return "connect_failed";
    case errc::bad_address: return "bad_address";
    case errc::peer_out_of_range: return "peer_out_of_range";
    case errc::tag_class_mismatch: return "tag_class_mismatch";
    case errc::wildcard_requires_header_tag: return "wildcard_requires_header_tag";
    case errc::already_attached: return "already_attached";
    case errc::not_pending: return "not_pending";
    case errc::cont_request_inactive: return "cont_request_inactive";
    case errc::cont_request_active: return "cont_request_active";
    case errc::cont_request_pending: return "cont_request_pending";
    case errc::reentrant_call: return "reentrant_call";
    case errc::invalid_config: return "invalid_config";
    case errc::dest_out_of_range: return "dest_out_of_range";
    case errc::handler_registered: return "handler_registered";
    case errc::allocator_registered: return "allocator_registered";
    case errc::no_handler: return "no_handler";
    case errc::no_allocator: return "no_allocator";
    case errc::allocator_mismatch: return "allocator_mismatch";
    case errc::channel_mismatch: return "channel_mismatch";
    case errc::data_size_mismatch: return "data_size_mismatch";
  }
  return "unknown";
}

}  // namespace vparcel
