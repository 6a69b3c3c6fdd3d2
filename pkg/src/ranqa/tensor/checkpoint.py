"""Binary checkpoint format.

Little-endian layout::

    b"RANCKPT1" | u32 version | u32 count |
    count x ( u32 name_len | name utf-8 | u32 rank | rank x u64 dim |
              u32 dtype_code | raw data )

dtype codes: 0 = float32, 1 = float64.  Whether an entry is trainable is not
stored; entries whose last path component names a batch-norm buffer load as
non-trainable.
"""
from __future__ import annotations

import io
import os
import struct

import numpy as np

from .core import ParamStore

MAGIC = b"RANCKPT1"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
BUFFER_NAMES = ("running_mean", "running_var", "count")


def is_buffer_name(name: str) -> bool:
    return name.rsplit("/", 1)[-1] in BUFFER_NAMES


class CheckpointFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def dumps(params: ParamStore) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(params)))
    for name, entry in params.entries.items():
        arr = entry.tensor.data
        if arr.dtype not in CODES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(struct.pack("<I", CODES[arr.dtype]))
        buf.write(np.ascontiguousarray(arr, dtype=DTYPES[CODES[arr.dtype]]).tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> ParamStore:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointFormatError(f"truncated while reading {what}", pos)
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointFormatError("bad magic", 0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}", len(MAGIC))
    store = ParamStore()
    for _ in range(count):
        start = pos
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError("name is not valid utf-8", start + 4) from None
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims"))
        code_at = pos
        (code,) = struct.unpack("<I", take(4, "dtype"))
        if code not in DTYPES:
            raise CheckpointFormatError(f"unknown dtype code {code}", code_at)
        dt = DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(n * dt.itemsize, f"data of {name!r}"), dtype=dt).reshape(dims)
        try:
            store.add(name, data.astype(dt.newbyteorder("="), copy=True), trainable=not is_buffer_name(name))
        except ValueError as exc:
            raise CheckpointFormatError(str(exc), start) from None
    if pos != len(blob):
        raise CheckpointFormatError("trailing bytes after last entry", pos)
    return store


def save_checkpoint(params: ParamStore, path: str | os.PathLike) -> None:
    blob = dumps(params)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> ParamStore:
    with open(path, "rb") as fh:
        return loads(fh.read())
