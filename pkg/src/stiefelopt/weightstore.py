"""Portable binary container for named weight arrays.

Layout (all integers little endian):
    magic   4 bytes  b"SOW1"
    u32     number of entries
per entry:
    u16     name length, then that many UTF-8 bytes
    u8      dtype code (0 = float32, 1 = float64)
    u8      number of dimensions
    u32[d]  dimension sizes
    raw     entries, little endian, C (row-major) order
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["save_weights", "load_weights", "MAGIC"]

MAGIC = b"SOW1"

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


def save_weights(path: str, named_arrays: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(named_arrays)))
        for name, array in named_arrays:
            code = _DTYPE_CODES.get(array.dtype)
            if code is None:
                raise ValueError(f"{name}: unsupported dtype {array.dtype}")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", code, array.ndim))
            f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(np.ascontiguousarray(array).astype(array.dtype.newbyteorder("<")).tobytes())


def load_weights(path: str) -> list[tuple[str, np.ndarray]]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a weight container")
        (count,) = struct.unpack("<I", f.read(4))
        out = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", f.read(2))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            dtype = _CODE_DTYPES[code].newbyteorder("<")
            raw = f.read(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize)
            array = np.frombuffer(raw, dtype=dtype).reshape(shape)
            out.append((name, array.astype(_CODE_DTYPES[code])))
    return out
