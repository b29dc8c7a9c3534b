# Copyright 2026 The vparcel Authors
# SPDX-License-Identifier: Apache-2.0

from ._core import (
    TAG_LIMIT,
    WIRE_VERSION,
    Benchmark,
    BenchConfig,
    BenchResult,
    CompletionMode,
    Header,
    LockMode,
    Parcelport,
    PortConfig,
    Strategy,
    TransportKind,
    VparcelError,
    allocate_tag,
    connect,
    csv_header,
    decode_header,
    emit_csv,
    encode_header,
    map_thread_to_channel,
    run,
)

__all__ = [
    "TAG_LIMIT",
    "WIRE_VERSION",
    "Benchmark",
    "BenchConfig",
    "BenchResult",
    "CompletionMode",
    "Header",
    "LockMode",
    "Parcelport",
    "PortConfig",
    "Strategy",
    "TransportKind",
    "VparcelError",
    "allocate_tag",
    "connect",
    "csv_header",
    "decode_header",
    "emit_csv",
    "encode_header",
    "map_thread_to_channel",
    "run",
]
