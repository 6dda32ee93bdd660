"""Binary tensor framing shared by checkpoints, datasets, and pseudo-label files.

Layout of one file:
    magic string + newline
    one UTF-8 JSON metadata line
    zero or more framed tensors

Frame: uint32 LE extent count, uint32 LE per extent, then the payload as
little-endian float64 in row-major order.
"""

import json
import struct

import numpy as np

from .errors import FormatError, TruncatedPayloadError


def write_header(fh, magic, metadata):
    fh.write(magic.encode("ascii") + b"\n")
    fh.write(json.dumps(metadata, sort_keys=True).encode("utf-8") + b"\n")


def read_header(fh, magic):
    line = fh.readline()
    found = line.rstrip(b"\n").decode("ascii", errors="replace")
    if found != magic:
        raise FormatError(f"bad magic: expected {magic!r}, found {found!r}")
    meta_line = fh.readline()
    if not meta_line:
        raise TruncatedPayloadError("file ended before metadata line")
    try:
        return json.loads(meta_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt metadata line: {exc}") from exc


def write_tensor(fh, arr):
    arr = np.asarray(arr, dtype="<f8", order="C")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedPayloadError(f"file ended while reading {what}")
    return buf


def read_tensor(fh):
    ndim = struct.unpack("<I", _read_exact(fh, 4, "extent count"))[0]
    if ndim > 8:
        raise FormatError(f"implausible extent count {ndim}")
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "extents"))
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    buf = _read_exact(fh, 8 * count, "tensor payload")
    return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
