"""Little-endian binary container for named arrays.

Layout::

    magic      4 bytes ("ZEGM" dataset cache, "ZEGC" checkpoint)
    version    u32
    prefix     format-specific fixed fields (ZEGM: j u32, fps f64)
    meta_len   u32, followed by a UTF-8 JSON document
    n_entries  u32
    table      per entry: name_len u16, name (UTF-8), dtype u8, ndim u8, dims u32 * ndim
    blobs      array data in table order, row-major (frame-major for sequences)

dtype codes: 0 = float32, 1 = float64, 2 = int64.
"""

from __future__ import annotations

import io
import json
import struct
from typing import BinaryIO

import numpy as np

VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class ContainerError(ValueError):
    pass


def _write(f: BinaryIO, magic: bytes, prefix: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    f.write(magic)
    f.write(struct.pack("<I", VERSION))
    f.write(prefix)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    f.write(struct.pack("<I", len(blob)))
    f.write(blob)
    f.write(struct.pack("<I", len(arrays)))
    prepared = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            arr = arr.astype("<f8") if np.issubdtype(arr.dtype, np.floating) else arr.astype("<i8")
            dt = arr.dtype
        raw = name.encode("utf-8")
        f.write(struct.pack("<H", len(raw)))
        f.write(raw)
        f.write(struct.pack("<BB", _CODES[dt], arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        prepared.append(np.ascontiguousarray(arr, dtype=dt))
    for arr in prepared:
        f.write(arr.tobytes(order="C"))


def _read_exact(f: BinaryIO, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise ContainerError("truncated container")
    return b


def _read(f: BinaryIO, magic: bytes, prefix_fmt: str) -> tuple[tuple, dict, dict[str, np.ndarray]]:
    got = f.read(4)
    if got != magic:
        raise ContainerError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4))
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version} (expected {VERSION})")
    prefix = struct.unpack(prefix_fmt, _read_exact(f, struct.calcsize(prefix_fmt))) if prefix_fmt != "<" else ()
    (meta_len,) = struct.unpack("<I", _read_exact(f, 4))
    meta = json.loads(_read_exact(f, meta_len).decode("utf-8"))
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    table = []
    for _ in range(n):
        (name_len,) = struct.unpack("<H", _read_exact(f, 2))
        name = _read_exact(f, name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", _read_exact(f, 2))
        if code not in _DTYPES:
            raise ContainerError(f"unknown dtype code {code} for {name!r}")
        dims = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
        table.append((name, _DTYPES[code], dims))
    arrays = {}
    for name, dt, dims in table:
        count = int(np.prod(dims)) if dims else 1
        arrays[name] = np.frombuffer(_read_exact(f, count * dt.itemsize), dtype=dt).reshape(dims).copy()
    return prefix, meta, arrays


# -- dataset cache ------------------------------------------------------------------
def write_dataset_cache(path, num_joints: int, fps: float, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        _write(f, b"ZEGM", struct.pack("<Id", num_joints, fps), meta, arrays)


def read_dataset_cache(path) -> tuple[int, float, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        (j, fps), meta, arrays = _read(f, b"ZEGM", "<Id")
    return j, fps, meta, arrays


# -- checkpoints --------------------------------------------------------------------
def dumps_checkpoint(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    _write(buf, b"ZEGC", b"", meta, arrays)
    return buf.getvalue()


def loads_checkpoint(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    _, meta, arrays = _read(io.BytesIO(data), b"ZEGC", "<")
    return meta, arrays
