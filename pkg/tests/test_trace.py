import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from magcache.errors import (
    BadMagic,
    NonFinite,
    TraceWriteError,
    TrailingData,
    Truncated,
    UnsupportedDtype,
    UnsupportedVersion,
)
from magcache.trace import (
    HEADER_FIXED_SIZE,
    ResidualTrace,
    encoded_size,
    read_trace,
    trace_from_bytes,
    trace_to_bytes,
    write_trace,
)


def _roundtrip(trace):
    buf = io.BytesIO()
    write_trace(trace, buf)
    buf.seek(0)
    return read_trace(buf), buf.getvalue()


def test_roundtrip_small_random(rng):
    trace = ResidualTrace(rng.standard_normal((3, 2, 2)), "toy")
    back, blob = _roundtrip(trace)
    assert back == trace
    assert back.data.tobytes() == trace.data.tobytes()
    assert back.model_id == "toy"


def test_header_layout(rng):
    trace = ResidualTrace(rng.standard_normal((4, 3, 2)), "ab")
    blob = trace_to_bytes(trace)
    assert blob[:4] == b"\x4d\x43\x54\x52"
    version, t, n, c, dtype, name_len = struct.unpack_from("<6I", blob, 4)
    assert (version, t, n, c, dtype, name_len) == (1, 4, 3, 2, 0, 2)
    assert blob[HEADER_FIXED_SIZE : HEADER_FIXED_SIZE + 2] == b"ab"
    payload = np.frombuffer(blob[HEADER_FIXED_SIZE + 2 :], dtype="<f4").reshape(4, 3, 2)
    assert np.array_equal(payload, trace.data)
    assert len(blob) == encoded_size(trace) == HEADER_FIXED_SIZE + 2 + 4 * 24


def test_empty_model_id(rng):
    trace = ResidualTrace(rng.standard_normal((2, 1, 1)), "")
    back, blob = _roundtrip(trace)
    assert struct.unpack_from("<I", blob, 24)[0] == 0
    assert back.model_id == ""
    assert len(blob) == HEADER_FIXED_SIZE + 4 * 2


def test_nan_rejected_before_writing(rng):
    trace = ResidualTrace(rng.standard_normal((3, 2, 2)))
    poisoned = trace.data.copy()
    poisoned[1, 0, 1] = np.nan
    object.__setattr__(trace, "data", poisoned)
    buf = io.BytesIO()
    with pytest.raises(NonFinite) as exc:
        write_trace(trace, buf)
    assert exc.value.index == (1, 0, 1)
    assert buf.getvalue() == b""


def test_construction_rejects_bad_shapes_and_nonfinite():
    with pytest.raises(ValueError):
        ResidualTrace(np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        ResidualTrace(np.zeros((2, 2)))
    with pytest.raises(NonFinite):
        ResidualTrace(np.array([[[1.0]], [[np.inf]]]))


def test_bad_magic(rng):
    blob = bytearray(trace_to_bytes(ResidualTrace(rng.standard_normal((2, 2, 2)))))
    blob[3] = 0x53
    with pytest.raises(BadMagic):
        trace_from_bytes(bytes(blob))


def test_truncated_payload(rng):
    ten = trace_to_bytes(ResidualTrace(rng.standard_normal((10, 2, 3))))
    nine_steps = ten[: len(ten) - 4 * 2 * 3]
    with pytest.raises(Truncated):
        trace_from_bytes(nine_steps)
    with pytest.raises(Truncated):
        trace_from_bytes(ten[:10])


def test_trailing_bytes_rejected(rng):
    blob = trace_to_bytes(ResidualTrace(rng.standard_normal((2, 2, 2))))
    with pytest.raises(TrailingData):
        trace_from_bytes(blob + b"\0\0\0\0")


def test_unsupported_version_and_dtype(rng):
    blob = bytearray(trace_to_bytes(ResidualTrace(rng.standard_normal((2, 2, 2)))))
    v2 = blob.copy()
    struct.pack_into("<I", v2, 4, 2)
    with pytest.raises(UnsupportedVersion):
        trace_from_bytes(bytes(v2))
    d1 = blob.copy()
    struct.pack_into("<I", d1, 20, 1)
    with pytest.raises(UnsupportedDtype):
        trace_from_bytes(bytes(d1))


def test_nonfinite_payload_reports_index(rng):
    blob = bytearray(trace_to_bytes(ResidualTrace(rng.standard_normal((3, 2, 2)))))
    # element [2][1][0] -> flat index 10
    struct.pack_into("<f", blob, HEADER_FIXED_SIZE + 4 * 10, float("inf"))
    with pytest.raises(NonFinite) as exc:
        trace_from_bytes(bytes(blob))
    assert exc.value.index == (2, 1, 0)


def test_sink_failure_reports_position(rng):
    class Flaky(io.RawIOBase):
        def __init__(self):
            self.count = 0

        def writable(self):
            return True

        def write(self, b):
            if self.count >= 16:
                raise OSError("disk full")
            n = min(len(b), 8)
            self.count += n
            return n

    with pytest.raises(TraceWriteError) as exc:
        write_trace(ResidualTrace(rng.standard_normal((2, 2, 2))), Flaky())
    assert exc.value.position == 16


def test_path_roundtrip(tmp_path, rng):
    trace = ResidualTrace(rng.standard_normal((5, 3, 4)), "file")
    write_trace(trace, tmp_path / "t.mctr")
    assert read_trace(tmp_path / "t.mctr") == trace
    assert (tmp_path / "t.mctr").stat().st_size == encoded_size(trace)


def test_trace_is_immutable(rng):
    trace = ResidualTrace(rng.standard_normal((2, 2, 2)))
    with pytest.raises(ValueError):
        trace.data[0, 0, 0] = 1.0


@settings(max_examples=60, deadline=None)
@given(
    data=hnp.arrays(
        np.float32,
        hnp.array_shapes(min_dims=3, max_dims=3, min_side=1, max_side=5).filter(lambda s: s[0] >= 2),
        elements=st.floats(width=32, allow_nan=False, allow_infinity=False),
    ),
    name=st.text(max_size=12),
)
def test_bitwise_roundtrip_property(data, name):
    trace = ResidualTrace(data, name)
    blob = trace_to_bytes(trace)
    back = trace_from_bytes(blob)
    assert back.data.tobytes() == data.tobytes()
    assert back.model_id == name
    assert trace_to_bytes(back) == blob
    assert len(blob) == HEADER_FIXED_SIZE + len(name.encode()) + 4 * data.size
