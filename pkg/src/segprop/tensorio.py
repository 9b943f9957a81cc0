"""Binary tensor container: a bit-exact, endian-fixed on-disk array format.

Layout (all integers little-endian):

    magic   4 bytes  b"LPT1"
    version u32      currently 1
    dtype   u32      0 = float32, 1 = uint8, 2 = int32
    ndim    u32
    dims    ndim x u64
    payload row-major array data, little-endian
    crc     u32      CRC32 of the payload bytes

Write-then-read is a bitwise identity; files parse identically on any
platform.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"LPT1"
VERSION = 1

_DTYPE_CODES: dict[int, np.dtype] = {
    0: np.dtype("<f4"),
    1: np.dtype("|u1"),
    2: np.dtype("<i4"),
}
_CODE_FOR_KIND = {"f": 0, "u": 1, "i": 2}


class TensorIOError(ValueError):
    """Base class for container format violations."""


class TensorMagicError(TensorIOError):
    """File does not start with the container magic."""


class TensorVersionError(TensorIOError):
    """Container version is not supported."""


class TensorHeaderError(TensorIOError):
    """Header is truncated or carries invalid fields."""


class TensorChecksumError(TensorIOError):
    """Payload is truncated or fails the CRC32 check."""


def _dtype_code(arr: np.ndarray) -> int:
    code = _CODE_FOR_KIND.get(arr.dtype.kind)
    if code is None or arr.dtype.itemsize != _DTYPE_CODES[code].itemsize:
        raise TensorIOError(f"unsupported dtype {arr.dtype}; use float32, uint8 or int32")
    return code


def write_tensor(arr: np.ndarray, path: str | Path) -> None:
    """Write ``arr`` to ``path`` in the container format.

    Accepts float32, uint8 or int32 arrays (float64/int64 inputs are cast
    down only when the cast is exact in kind: pass the intended dtype).
    """
    arr = np.asarray(arr)
    if arr.dtype == np.float64:
        arr = arr.astype(np.float32)
    elif arr.dtype == np.int64:
        arr = arr.astype(np.int32)
    code = _dtype_code(arr)
    payload = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes()
    header = MAGIC + struct.pack("<III", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    crc = struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    Path(path).write_bytes(header + payload + crc)


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a container file, verifying magic, version, length and CRC32."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise TensorMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 16:
        raise TensorHeaderError(f"{path}: truncated header")
    version, code, ndim = struct.unpack_from("<III", raw, 4)
    if version != VERSION:
        raise TensorVersionError(f"{path}: unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise TensorHeaderError(f"{path}: unknown dtype code {code}")
    offset = 16
    if len(raw) < offset + 8 * ndim:
        raise TensorHeaderError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}Q", raw, offset)
    offset += 8 * ndim
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    nbytes = count * dtype.itemsize
    if len(raw) != offset + nbytes + 4:
        raise TensorChecksumError(
            f"{path}: payload length mismatch (have {len(raw) - offset - 4}, want {nbytes})"
        )
    payload = raw[offset : offset + nbytes]
    (crc,) = struct.unpack_from("<I", raw, offset + nbytes)
    if crc != (zlib.crc32(payload) & 0xFFFFFFFF):
        raise TensorChecksumError(f"{path}: CRC32 mismatch")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
