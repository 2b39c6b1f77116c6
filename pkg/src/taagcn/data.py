"""Dataset I/O and synthetic data generation.

On disk a dataset is `manifest.jsonl` (header line + one JSON record per
sample) next to `patches.bin`, a raw little-endian concatenation of the
per-sample patch blocks: (68 facial + 20 SC) slots of (P, P, 3) u8 pixels.

The synthetic generator builds a desk-scale population where the age signal
provably exists: a tight "drift" landmark cluster translates rigidly with
age (high age variance, zero expression variance), a "jitter" cluster gets
i.i.d. per-sample noise (the opposite), and patch textures brighten with age.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .keypoints import (KeypointSample, NUM_FACIAL, NUM_JOINTS, ScKeypointSet,
                        default_hierarchy, generate_sc)

logger = logging.getLogger(__name__)

SCHEMA_NAME = "fsc-manifest"
SCHEMA_VERSION = 1
NUM_PATCH_SLOTS = NUM_FACIAL + ScKeypointSet.NUM_SLOTS  # 88

# landmark index groups used by the synthetic population
DRIFT_INDICES = tuple(range(0, 17))    # jaw arc: translates with age
JITTER_INDICES = tuple(range(48, 68))  # mouth: per-sample expression noise


class ManifestFormatError(ValueError):
    pass


class ManifestVersionError(ManifestFormatError):
    pass


@dataclass
class ManifestRecord:
    id: str
    age: int
    image_size: tuple[int, int]
    facial_keypoints: list  # 68 entries of [x, y] or None
    skeleton_joints: list   # 18 entries of [x, y] or None
    patch_offset: int
    patch_len: int

    def to_json(self) -> str:
        return json.dumps({
            "id": self.id, "age": self.age, "image_size": list(self.image_size),
            "facial_keypoints": self.facial_keypoints,
            "skeleton_joints": self.skeleton_joints,
            "patch_offset": self.patch_offset, "patch_len": self.patch_len,
        }, sort_keys=True)


@dataclass
class Manifest:
    path: str
    patches_path: str
    patch_size: int
    records: list[ManifestRecord] = field(default_factory=list)
    _patches: np.ndarray | None = None

    @property
    def patch_block_len(self) -> int:
        return NUM_PATCH_SLOTS * self.patch_size * self.patch_size * 3

    def _sidecar(self) -> np.ndarray:
        if self._patches is None:
            self._patches = np.fromfile(self.patches_path, dtype=np.uint8)
        return self._patches

    def load_sample(self, index: int) -> KeypointSample:
        rec = self.records[index]
        p = self.patch_size
        raw = self._sidecar()[rec.patch_offset:rec.patch_offset + rec.patch_len]
        patches = raw.reshape(NUM_PATCH_SLOTS, p, p, 3)

        def points(entries, n):
            arr = np.full((n, 2), np.nan)
            for i, e in enumerate(entries):
                if e is not None:
                    arr[i] = e
            return arr

        return KeypointSample(
            id=rec.id, age=rec.age, image_size=tuple(rec.image_size),
            facial_keypoints=points(rec.facial_keypoints, NUM_FACIAL),
            skeleton_joints=points(rec.skeleton_joints, NUM_JOINTS),
            patches=patches,
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        with open(self.path, "rb") as fh:
            h.update(fh.read())
        return h.hexdigest()

    def __len__(self) -> int:
        return len(self.records)


def _atomic_write(path: str, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(path: str, patches_path: str, patch_size: int,
                   records: list[ManifestRecord], patch_blocks: list[np.ndarray]) -> Manifest:
    """Write manifest + sidecar atomically; blocks must be (88, P, P, 3) u8
    in record order."""
    header = json.dumps({
        "schema": SCHEMA_NAME, "version": SCHEMA_VERSION, "patch_size": patch_size,
        "num_facial": NUM_FACIAL, "num_joints": NUM_JOINTS,
        "patches_path": os.path.basename(patches_path),
    }, sort_keys=True)
    lines = [header] + [r.to_json() for r in records]
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))
    _atomic_write(patches_path, b"".join(b.astype(np.uint8).tobytes() for b in patch_blocks))
    return Manifest(path=path, patches_path=patches_path, patch_size=patch_size,
                    records=records)


def load_manifest(path: str) -> Manifest:
    """Parse and validate a manifest; malformed lines are reported with their
    line numbers, bad offsets with the offending record id."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        logger.warning("%s: empty manifest", path)
        return Manifest(path=path, patches_path="", patch_size=0, records=[])
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ManifestFormatError(f"{path}:1: bad header: {e}") from e
    if header.get("schema") != SCHEMA_NAME:
        raise ManifestFormatError(f"{path}:1: unknown schema {header.get('schema')!r}")
    if header.get("version") != SCHEMA_VERSION:
        raise ManifestVersionError(
            f"{path}:1: unsupported schema version {header.get('version')!r}")
    patch_size = int(header["patch_size"])
    patches_path = os.path.join(os.path.dirname(os.path.abspath(path)),
                                header["patches_path"])

    records: list[ManifestRecord] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            rec = ManifestRecord(
                id=str(obj["id"]), age=int(obj["age"]),
                image_size=tuple(obj["image_size"]),
                facial_keypoints=obj["facial_keypoints"],
                skeleton_joints=obj["skeleton_joints"],
                patch_offset=int(obj["patch_offset"]),
                patch_len=int(obj["patch_len"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ManifestFormatError(f"{path}:{lineno}: malformed record: {e}") from e
        if len(rec.facial_keypoints) != NUM_FACIAL:
            raise ManifestFormatError(
                f"{path}:{lineno}: record {rec.id!r} has "
                f"{len(rec.facial_keypoints)} facial keypoints, want {NUM_FACIAL}")
        if len(rec.skeleton_joints) != NUM_JOINTS:
            raise ManifestFormatError(
                f"{path}:{lineno}: record {rec.id!r} has "
                f"{len(rec.skeleton_joints)} skeleton joints, want {NUM_JOINTS}")
        records.append(rec)

    manifest = Manifest(path=path, patches_path=patches_path, patch_size=patch_size,
                        records=records)
    expected_len = manifest.patch_block_len
    sidecar_len = os.path.getsize(patches_path) if records else 0
    prev_end = 0
    for rec in records:
        if rec.patch_len != expected_len:
            raise ManifestFormatError(
                f"record {rec.id!r}: patch_len {rec.patch_len}, want {expected_len}")
        if rec.patch_offset < prev_end or rec.patch_offset + rec.patch_len > sidecar_len:
            raise ManifestFormatError(
                f"record {rec.id!r}: patch range [{rec.patch_offset}, "
                f"{rec.patch_offset + rec.patch_len}) invalid for sidecar of {sidecar_len} bytes")
        prev_end = rec.patch_offset + rec.patch_len
    return manifest


# -- synthetic population ----------------------------------------------------

@dataclass
class SynthSpec:
    """Population parameters for the synthetic desk-scale dataset."""

    q_toy: int = 10                 # labels are 0 .. q_toy-1
    samples_per_age: int = 20
    jitter_px: float = 0.5          # expression noise sigma on the jitter cluster
    drift_px: float = 6.0           # per-age rigid translation of the drift cluster
    texture_rate: float = 12.0      # patch brightness gain per age step
    patch_size: int = 16
    image_size: tuple[int, int] = (256, 256)
    joint_dropout: float = 0.0

    def __post_init__(self):
        if self.q_toy < 1 or self.samples_per_age < 1:
            raise ValueError("q_toy and samples_per_age must be >= 1")


def _facial_template(width: int, height: int) -> np.ndarray:
    """Deterministic 68-point layout: drift cluster upper-left, jitter cluster
    lower-right, the rest (incl. the root/nose at centre) on a mid grid."""
    pts = np.zeros((NUM_FACIAL, 2))
    cx, cy = width / 2.0, height / 2.0
    # drift cluster: ring of radius 8 around (0.2 w, 0.2 h)
    ang = np.linspace(0, 2 * np.pi, len(DRIFT_INDICES), endpoint=False)
    pts[list(DRIFT_INDICES), 0] = 0.2 * width + 8.0 * np.cos(ang)
    pts[list(DRIFT_INDICES), 1] = 0.2 * height + 8.0 * np.sin(ang)
    # jitter cluster: ring of radius 8 around (0.8 w, 0.8 h)
    ang = np.linspace(0, 2 * np.pi, len(JITTER_INDICES), endpoint=False)
    pts[list(JITTER_INDICES), 0] = 0.8 * width + 8.0 * np.cos(ang)
    pts[list(JITTER_INDICES), 1] = 0.8 * height + 8.0 * np.sin(ang)
    # remaining static points: grid around the centre, root exactly central
    static = [k for k in range(NUM_FACIAL)
              if k not in DRIFT_INDICES and k not in JITTER_INDICES]
    cols = 6
    for i, k in enumerate(static):
        r, c = divmod(i, cols)
        pts[k] = (cx - 30 + 12 * c, cy - 30 + 12 * r)
    pts[30] = (cx, cy)  # root keypoint
    return pts


def _skeleton_template(width: int, height: int) -> np.ndarray:
    """Upper-body COCO-18 layout; legs/eyes/ears placed but unused by the
    default hierarchy."""
    w, h = width, height
    t = np.array([
        [0.50, 0.18], [0.50, 0.30],                   # nose, neck
        [0.38, 0.32], [0.34, 0.48], [0.32, 0.62],     # R shoulder/elbow/wrist
        [0.62, 0.32], [0.66, 0.48], [0.68, 0.62],     # L shoulder/elbow/wrist
        [0.42, 0.62], [0.42, 0.80], [0.42, 0.95],     # R hip/knee/ankle
        [0.58, 0.62], [0.58, 0.80], [0.58, 0.95],     # L hip/knee/ankle
        [0.47, 0.15], [0.53, 0.15], [0.44, 0.17], [0.56, 0.17],  # eyes, ears
    ])
    return t * np.array([w, h])


def synth_generate(spec: SynthSpec, seed: int, out_dir: str) -> Manifest:
    """Deterministically generate manifest.jsonl + patches.bin in out_dir."""
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    w, h = spec.image_size
    p = spec.patch_size
    facial_base = _facial_template(w, h)
    skel_base = _skeleton_template(w, h)

    records: list[ManifestRecord] = []
    blocks: list[np.ndarray] = []
    offset = 0
    block_len = NUM_PATCH_SLOTS * p * p * 3
    hierarchy = default_hierarchy()
    for age in range(spec.q_toy):
        for s in range(spec.samples_per_age):
            facial = facial_base.copy()
            facial[list(DRIFT_INDICES)] += spec.drift_px * age
            facial[list(JITTER_INDICES)] += rng.normal(0.0, spec.jitter_px,
                                                       (len(JITTER_INDICES), 2))
            # shoulders widen slightly with age: a mild skeletal signal
            skel = skel_base.copy()
            skel[[2, 3, 4], 0] -= 0.4 * age
            skel[[5, 6, 7], 0] += 0.4 * age
            skel += rng.normal(0.0, spec.jitter_px * 0.2, skel.shape)
            if spec.joint_dropout > 0.0:
                drop = rng.random(NUM_JOINTS) < spec.joint_dropout
                skel[drop] = np.nan
            facial = np.clip(facial, 0, [w - 1, h - 1])
            skel = np.where(np.isnan(skel), np.nan, np.clip(skel, 0, [w - 1, h - 1]))

            sc = generate_sc(skel, hierarchy)
            block = np.zeros((NUM_PATCH_SLOTS, p, p, 3), dtype=np.uint8)
            base = 40.0 + spec.texture_rate * age
            for slot in range(NUM_FACIAL):
                shade = base + (slot % 7) * 3 + rng.normal(0.0, 2.0)
                block[slot] = np.clip(shade, 0, 255)
            for slot in range(ScKeypointSet.NUM_SLOTS):
                if sc.provenance[slot] == "zero":
                    continue
                shade = base + ((NUM_FACIAL + slot) % 7) * 3 + rng.normal(0.0, 2.0)
                block[NUM_FACIAL + slot] = np.clip(shade, 0, 255)

            records.append(ManifestRecord(
                id=f"synth-{age:03d}-{s:03d}", age=age, image_size=(w, h),
                facial_keypoints=[[float(x), float(y)] for x, y in facial],
                skeleton_joints=[None if np.isnan(x) else [float(x), float(y)]
                                 for x, y in skel],
                patch_offset=offset, patch_len=block_len,
            ))
            blocks.append(block)
            offset += block_len

    return write_manifest(os.path.join(out_dir, "manifest.jsonl"),
                          os.path.join(out_dir, "patches.bin"),
                          p, records, blocks)
