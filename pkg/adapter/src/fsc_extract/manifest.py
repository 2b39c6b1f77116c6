"""Writer for the fsc-manifest on-disk format.

A dataset is a `manifest.jsonl` (one JSON header line, then one JSON record
per sample) next to `patches.bin`, the raw concatenation of per-sample patch
blocks: 88 slots (68 facial + 20 skeletal-cosmetic) of (P, P, 3) uint8
pixels, addressed by (patch_offset, patch_len) per record.

This is an independent implementation of the format; the training harness
has its own reader and validates everything written here.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

SCHEMA_NAME = "fsc-manifest"
SCHEMA_VERSION = 1
NUM_FACIAL = 68
NUM_JOINTS = 18
NUM_SC_SLOTS = 20
NUM_PATCH_SLOTS = NUM_FACIAL + NUM_SC_SLOTS


@dataclass
class Record:
    id: str
    age: int
    image_size: tuple[int, int]
    facial_keypoints: list   # 68 entries of [x, y] or None
    skeleton_joints: list    # 18 entries of [x, y] or None
    patch_offset: int
    patch_len: int

    def to_json(self) -> str:
        return json.dumps({
            "id": self.id, "age": self.age, "image_size": list(self.image_size),
            "facial_keypoints": self.facial_keypoints,
            "skeleton_joints": self.skeleton_joints,
            "patch_offset": self.patch_offset, "patch_len": self.patch_len,
        }, sort_keys=True)


def _atomic_write(path: str, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)),
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset(path: str, patches_path: str, patch_size: int,
                  records: list[Record], patch_blocks: list[np.ndarray]) -> None:
    """Write manifest + sidecar atomically; blocks must be (88, P, P, 3) u8
    in record order with contiguous offsets."""
    if len(records) != len(patch_blocks):
        raise ValueError(f"{len(records)} records vs {len(patch_blocks)} blocks")
    header = json.dumps({
        "schema": SCHEMA_NAME, "version": SCHEMA_VERSION,
        "patch_size": patch_size, "num_facial": NUM_FACIAL,
        "num_joints": NUM_JOINTS,
        "patches_path": os.path.basename(patches_path),
    }, sort_keys=True)
    lines = [header] + [r.to_json() for r in records]
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))
    _atomic_write(patches_path,
                  b"".join(b.astype(np.uint8).tobytes() for b in patch_blocks))
