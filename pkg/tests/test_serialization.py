"""Binary framing shared by checkpoints, datasets, and pseudo-label files."""

import io

import numpy as np
import pytest

from prsfda.errors import FormatError, TruncatedPayloadError
from prsfda.serialization import read_header, read_tensor, write_header, write_tensor


class TestHeader:
    def test_round_trip(self):
        buf = io.BytesIO()
        write_header(buf, "MAGIC1", {"count": 3, "role": "source"})
        buf.seek(0)
        meta = read_header(buf, "MAGIC1")
        assert meta == {"count": 3, "role": "source"}

    def test_bad_magic_names_found(self):
        buf = io.BytesIO(b"WRONG\n{}\n")
        with pytest.raises(FormatError, match="WRONG"):
            read_header(buf, "MAGIC1")

    def test_missing_metadata(self):
        buf = io.BytesIO(b"MAGIC1\n")
        with pytest.raises(TruncatedPayloadError):
            read_header(buf, "MAGIC1")

    def test_corrupt_metadata(self):
        buf = io.BytesIO(b"MAGIC1\nnot json\n")
        with pytest.raises(FormatError):
            read_header(buf, "MAGIC1")


class TestTensors:
    @pytest.mark.parametrize("shape", [(3,), (2, 4), (2, 3, 4), ()])
    def test_round_trip(self, shape):
        rng = np.random.default_rng(0)
        arr = rng.normal(size=shape)
        buf = io.BytesIO()
        write_tensor(buf, arr)
        buf.seek(0)
        out = read_tensor(buf)
        assert out.shape == arr.shape
        assert np.array_equal(out, arr)

    def test_multiple_tensors_in_sequence(self):
        buf = io.BytesIO()
        a, b = np.arange(4.0), np.eye(3)
        write_tensor(buf, a)
        write_tensor(buf, b)
        buf.seek(0)
        assert np.array_equal(read_tensor(buf), a)
        assert np.array_equal(read_tensor(buf), b)

    def test_truncated_payload(self):
        buf = io.BytesIO()
        write_tensor(buf, np.arange(10.0))
        data = buf.getvalue()[:-8]
        with pytest.raises(TruncatedPayloadError):
            read_tensor(io.BytesIO(data))

    def test_truncated_extents(self):
        buf = io.BytesIO(b"\x02\x00\x00\x00\x03\x00\x00\x00")
        with pytest.raises(TruncatedPayloadError):
            read_tensor(buf)

    def test_implausible_rank(self):
        buf = io.BytesIO(b"\xff\x00\x00\x00")
        with pytest.raises(FormatError):
            read_tensor(buf)
