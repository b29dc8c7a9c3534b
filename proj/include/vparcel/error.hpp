// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vparcel {

enum class errc {
  // wire
  truncated,
  unknown_version,
  invalid_flags,
  payload_mismatch,
  invalid_tag,
  too_many_chunks,
  zero_chunk_size,
  trailing_bytes,
  // transport
  frame_too_large,
  disconnected,
  connect_failed,
  bad_address,
  // channel
  peer_out_of_range,
  tag_class_mismatch,
  wildcard_requires_header_tag,
  // completion
  already_attached,
  not_pending,
  cont_request_inactive,
  cont_request_active,
  cont_request_pending,
  reentrant_call,
  // parcelport
  invalid_config,
  dest_out_of_range,
  handler_registered,
  allocator_registered,
  no_handler,
  no_allocator,
  allocator_mismatch,
  channel_mismatch,
  data_size_mismatch,
};

std::string_view to_string(errc code) noexcept;

/// Every failure raised by the runtime carries one of the codes above.
class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}
  explicit error(errc code) : error(code, "") {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

}  // namespace vparcel
