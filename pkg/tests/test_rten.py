import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rcdpt import rten
from rcdpt.rten import RtenFormatError


def test_header_layout():
    buf = rten.dumps(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert buf[:4] == b"RTEN"
    assert buf[4] == 0x01 and buf[5] == 0x01 and buf[6] == 2
    assert struct.unpack("<2Q", buf[7:23]) == (2, 3)
    assert np.frombuffer(buf[23:], dtype="<f4").tolist() == [0, 1, 2, 3, 4, 5]


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(dtype=st.sampled_from([np.float32, np.float64]),
                  shape=hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5),
                  elements=st.floats(allow_nan=True, allow_infinity=True, width=32)))
def test_round_trip_is_bit_exact(arr):
    back = rten.loads(rten.dumps(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_file_round_trip(tmp_path):
    a = np.random.default_rng(0).standard_normal((3, 4, 5)).astype(np.float32)
    rten.save(tmp_path / "a.rten", a)
    assert np.array_equal(rten.load(tmp_path / "a.rten"), a)


@pytest.mark.parametrize("mutate,msg", [
    (lambda b: b"XTEN" + b[4:], "magic"),
    (lambda b: b[:4] + b"\x02" + b[5:], "version"),
    (lambda b: b[:5] + b"\x07" + b[6:], "dtype"),
    (lambda b: b[:-3], "payload"),
    (lambda b: b[:10], "header"),
])
def test_corrupt_input_raises_format_error(mutate, msg):
    buf = rten.dumps(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(RtenFormatError, match=msg):
        rten.loads(mutate(buf))


def test_error_names_the_file(tmp_path):
    p = tmp_path / "bad.rten"
    p.write_bytes(b"nope")
    with pytest.raises(RtenFormatError, match="bad.rten"):
        rten.load(p)
