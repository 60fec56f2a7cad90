"""Residual traces and the MCTR binary format.

Layout (all integers unsigned 32-bit little-endian)::

    magic "MCTR" | version | T | N | C | dtype_code | len(model_id) | model_id (UTF-8)
    payload: T*N*C float32 little-endian, row-major [t][n][c]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import (
    BadMagic,
    NonFinite,
    TraceFormatError,
    TraceWriteError,
    TrailingData,
    Truncated,
    UnsupportedDtype,
    UnsupportedVersion,
)

MAGIC = b"MCTR"
VERSION = 1
DTYPE_FLOAT32 = 0

_FIXED = struct.Struct("<4s6I")
HEADER_FIXED_SIZE = _FIXED.size  # 28 bytes before the model_id bytes
_PAYLOAD_DTYPE = np.dtype("<f4")


def _first_nonfinite(data: np.ndarray) -> tuple[int, ...] | None:
    bad = np.argwhere(~np.isfinite(data))
    if bad.size == 0:
        return None
    return tuple(int(i) for i in bad[0])


@dataclass(frozen=True, eq=False)
class ResidualTrace:
    """Update residuals of one sampling run, shape ``(steps, tokens, channels)``.

    Step 0 is the first (noisiest) sampler iteration. Values are held as
    float32, which is exactly what the binary format stores.
    """

    data: np.ndarray
    model_id: str = ""

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim != 3:
            raise ValueError(f"trace data must be 3-D (steps, tokens, channels), got shape {arr.shape}")
        t, n, c = arr.shape
        if t < 2 or n < 1 or c < 1:
            raise ValueError(f"trace needs T>=2, N>=1, C>=1, got {arr.shape}")
        self._check_finite(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @staticmethod
    def _check_finite(arr: np.ndarray) -> None:
        idx = _first_nonfinite(arr)
        if idx is not None:
            raise NonFinite(f"non-finite residual at index {idx}", idx)

    @property
    def num_steps(self) -> int:
        return self.data.shape[0]

    @property
    def num_tokens(self) -> int:
        return self.data.shape[1]

    @property
    def num_channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def validate(self) -> None:
        self._check_finite(self.data)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ResidualTrace):
            return NotImplemented
        return (
            self.model_id == other.model_id
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]


def encoded_size(trace: ResidualTrace) -> int:
    t, n, c = trace.shape
    return HEADER_FIXED_SIZE + len(trace.model_id.encode("utf-8")) + 4 * t * n * c


def trace_to_bytes(trace: ResidualTrace) -> bytes:
    trace.validate()
    name = trace.model_id.encode("utf-8")
    t, n, c = trace.shape
    header = _FIXED.pack(MAGIC, VERSION, t, n, c, DTYPE_FLOAT32, len(name))
    payload = np.ascontiguousarray(trace.data, dtype=_PAYLOAD_DTYPE).tobytes(order="C")
    return header + name + payload


def write_trace(trace: ResidualTrace, destination: BinaryIO | str | Path) -> None:
    """Write ``trace`` to a binary sink or a file path.

    The trace is validated before any byte is written.
    """
    blob = trace_to_bytes(trace)
    if isinstance(destination, (str, Path)):
        with open(destination, "wb") as fh:
            _write_all(fh, blob)
    else:
        _write_all(destination, blob)


def _write_all(sink: BinaryIO, blob: bytes) -> None:
    pos = 0
    view = memoryview(blob)
    try:
        while pos < len(blob):
            written = sink.write(view[pos:])
            if written is None:
                # raw sinks without a count (e.g. some wrappers) write everything
                written = len(blob) - pos
            if written <= 0:
                raise TraceWriteError("sink accepted no bytes", pos)
            pos += written
    except OSError as exc:
        raise TraceWriteError(f"sink failure: {exc}", pos) from exc


def trace_from_bytes(blob: bytes) -> ResidualTrace:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagic(f"not an MCTR file (magic {blob[:4]!r})")
    if len(blob) < HEADER_FIXED_SIZE:
        raise Truncated(f"header needs {HEADER_FIXED_SIZE} bytes, file has {len(blob)}")
    _, version, t, n, c, dtype_code, name_len = _FIXED.unpack_from(blob, 0)
    if version != VERSION:
        raise UnsupportedVersion(f"MCTR version {version} is not supported (expected {VERSION})")
    if dtype_code != DTYPE_FLOAT32:
        raise UnsupportedDtype(f"dtype code {dtype_code} is not supported")
    offset = HEADER_FIXED_SIZE
    if len(blob) < offset + name_len:
        raise Truncated("model_id field runs past end of file")
    try:
        name = blob[offset : offset + name_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TraceFormatError(f"model_id is not valid UTF-8: {exc}") from exc
    offset += name_len
    expected = 4 * t * n * c
    remaining = len(blob) - offset
    if remaining < expected:
        raise Truncated(f"payload has {remaining} bytes, header promises {expected}")
    if remaining > expected:
        raise TrailingData(f"payload has {remaining} bytes, header promises {expected}")
    if t < 2 or n < 1 or c < 1:
        raise TraceFormatError(f"header dims {(t, n, c)} violate T>=2, N>=1, C>=1")
    data = np.frombuffer(blob, dtype=_PAYLOAD_DTYPE, count=t * n * c, offset=offset).reshape(t, n, c)
    idx = _first_nonfinite(data)
    if idx is not None:
        raise NonFinite(f"non-finite residual at index {idx}", idx)
    return ResidualTrace(data, name)


def read_trace(source: BinaryIO | str | Path) -> ResidualTrace:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            blob = fh.read()
    else:
        blob = source.read()
    return trace_from_bytes(blob)
