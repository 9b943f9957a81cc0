"""Writer for the engine's tensor container format.

Implemented independently of the engine package: the on-disk format is the
interface between the two tools, and the test suite checks byte-level
compatibility by parsing these files with the engine's reader.

Layout (little-endian): magic ``LPT1``, version u32, dtype u32 (0 f32,
1 u8, 2 i32), ndim u32, dims u64 each, row-major payload, CRC32 of payload.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"LPT1"
VERSION = 1
_CODES = {"f": (0, "<f4"), "u": (1, "|u1"), "i": (2, "<i4")}


def write_tensor(arr: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(arr)
    if arr.dtype == np.float64:
        arr = arr.astype(np.float32)
    elif arr.dtype == np.int64:
        arr = arr.astype(np.int32)
    if arr.dtype.kind not in _CODES:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    code, wire = _CODES[arr.dtype.kind]
    payload = np.ascontiguousarray(arr, dtype=wire).tobytes()
    blob = (
        MAGIC
        + struct.pack("<III", VERSION, code, arr.ndim)
        + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        + payload
        + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    )
    Path(path).write_bytes(blob)
