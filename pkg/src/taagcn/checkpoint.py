"""Binary checkpoint container for named tensors.

Layout (little-endian throughout):

    magic  4 bytes   b"TAAG"
    u32    version   = 1
    u32    entry count
    per entry:
        u32   name length, then UTF-8 name bytes
        u8    dtype (0 = f32, 1 = f64)
        u8    rank
        u64   per dimension
        raw   little-endian payload, row-major

Round-trips are bit-exact; this is load-bearing for resume-from-checkpoint
and for the determinism guarantees of the training harness.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"TAAG"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(path: str, entries: dict[str, np.ndarray]) -> None:
    """Write named arrays atomically (temp file + rename)."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        if arr.ndim:  # ascontiguousarray would promote 0-d arrays to 1-d
            arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        if dtype not in _DTYPE_CODES:
            raise CheckpointFormatError(f"entry {name!r}: unsupported dtype {arr.dtype}")
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.astype(dtype, copy=False).tobytes())
    blob = b"".join(chunks)

    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    offset = 12
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        code, rank = struct.unpack_from("<BB", blob, offset)
        offset += 2
        if code not in _CODE_DTYPES:
            raise CheckpointFormatError(f"{path}: entry {name!r} has unknown dtype code {code}")
        dims = struct.unpack_from(f"<{rank}Q", blob, offset) if rank else ()
        offset += 8 * rank
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        payload = blob[offset:offset + nbytes]
        if len(payload) != nbytes:
            raise CheckpointFormatError(f"{path}: entry {name!r} truncated")
        offset += nbytes
        entries[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if offset != len(blob):
        raise CheckpointFormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return entries
