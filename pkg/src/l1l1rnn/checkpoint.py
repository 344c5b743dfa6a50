"""Binary checkpoint container.

Layout, all little-endian: magic ``L1L1CKPT``, format version (u32), the
five dimensions (m, n, d, K, T) as u32, then one record per tensor:
name length (u16), name bytes (utf-8), rank (u8), shape (u32 per axis),
float64 payload in C order. Values round-trip bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

__all__ = ["MAGIC", "VERSION", "write_checkpoint", "read_checkpoint"]

MAGIC = b"L1L1CKPT"
VERSION = 1
_MAX_RANK = 8


def write_checkpoint(path, dims, tensors):
    """Write named float64 tensors with a (m, n, d, K, T) dims header.

    ``tensors`` maps names to arrays; scalars are stored as rank-0 records.
    Insertion order is preserved, so identical inputs produce identical
    bytes.
    """
    m, n, d, K, T = (int(v) for v in dims)
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<5I", m, n, d, K, T)]
    for name, arr in tensors.items():
        # np.ascontiguousarray would promote rank 0 to rank 1
        arr = np.asarray(arr, dtype=np.float64, order="C")
        if arr.ndim > _MAX_RANK:
            raise FormatError(f"tensor {name!r} has rank {arr.ndim} > {_MAX_RANK}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8", copy=False).tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_checkpoint(path):
    """Read a checkpoint; returns ((m, n, d, K, T), dict of tensors).

    Raises FormatError (with the byte offset) on any structural defect:
    bad magic, unknown version, truncated records, trailing bytes.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise FormatError(f"bad magic at offset 0: {blob[:8]!r}")
    offset = 8

    def take(count, what):
        nonlocal offset
        if offset + count > len(blob):
            raise FormatError(f"truncated {what} at offset {offset}")
        piece = blob[offset:offset + count]
        offset += count
        return piece

    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    dims = struct.unpack("<5I", take(20, "dims header"))
    tensors = {}
    while offset < len(blob):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        if rank > _MAX_RANK:
            raise FormatError(f"tensor {name!r} has rank {rank} > {_MAX_RANK}")
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "shape"))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = take(8 * count, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return dims, tensors
