"""Versioned binary checkpoint format for named float64 arrays.

Layout (all integers little-endian):
  magic     8 bytes  b"HLNC0001"
  count     u32
  per array:
    name_len u16, name utf-8 bytes
    ndim     u8, dims u64 each
    payload  float64 little-endian, C order

Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"HLNC0001"


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        # sorted so the byte layout is independent of dict insertion order
        for name in sorted(arrays):
            arr = arrays[name]
            a = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", a.ndim))
            for d in a.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(a.tobytes(order="C"))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:8]!r}")
    off = 8
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = []
        for _ in range(ndim):
            (d,) = struct.unpack_from("<Q", data, off)
            off += 8
            shape.append(d)
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape)
        off += size * 8
        out[name] = arr.astype(np.float64).copy()
    return out
