"""Binary checkpoint persistence for named parameter tensors.

Layout (all integers little-endian): magic b"VFZ1", version u32, tensor
count u32, then per tensor: name length u32, UTF-8 name, rank u32, extents
as u64, payload as little-endian float64. Round-trips are bitwise exact.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError, UsageError

MAGIC = b"VFZ1"
VERSION = 1


def save_checkpoint(tensors, path):
    """Write an ordered mapping of name -> array-like to `path`."""
    names = list(tensors)
    if len(set(names)) != len(names):
        raise UsageError("checkpoint tensor names must be unique")
    if any(not n for n in names):
        raise UsageError("checkpoint tensor names must be non-empty")
    parts = [MAGIC, struct.pack("<II", VERSION, len(names))]
    for name in names:
        arr = np.ascontiguousarray(np.asarray(getattr(tensors[name], "data", tensors[name]),
                                              dtype=np.float64))
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, field):
        if self.pos + n > len(self.blob):
            raise ParseError(f"checkpoint truncated while reading {field}", offset=self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, field):
        return struct.unpack("<I", self.take(4, field))[0]


def load_checkpoint(path):
    """Read a checkpoint back as an ordered dict of name -> float64 ndarray."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4, "magic") != MAGIC:
        raise ParseError(f"bad checkpoint magic (expected {MAGIC!r})", offset=0)
    version = r.u32("version")
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", offset=4)
    count = r.u32("tensor count")
    out = {}
    for i in range(count):
        name_len = r.u32(f"name length of tensor {i}")
        name = r.take(name_len, f"name of tensor {i}").decode("utf-8")
        rank = r.u32(f"rank of {name!r}")
        shape = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"extents of {name!r}"))
        n = 1
        for e in shape:
            n *= e
        payload = r.take(8 * n, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.blob):
        raise ParseError("trailing bytes after final tensor", offset=r.pos)
    return out
