"""Skeletal-cosmetic (SC) patch centres from detected COCO-18 joints.

The fsc-manifest sidecar reserves 20 SC patch slots per sample with a fixed
layout: ten source joints, three intra-level midpoints, six inter-level
midpoints, and the torso midpoint.  A missing joint whose left/right mirror
partner was detected is reflected about the vertical body axis; midpoints
resolve when both endpoints are available; everything else stays
unresolved and its patch slot is zero-filled.

This mirrors the slot layout the training harness derives from the same
joints, so patch crops land on the points the harness will use.
"""

from __future__ import annotations

import numpy as np

from .manifest import NUM_JOINTS, NUM_SC_SLOTS

MIRROR_PAIRS = [(2, 5), (3, 6), (4, 7), (8, 11)]

# Each slot is a source joint or a midpoint of resolved joints.
SC_SLOT_LAYOUT: list[tuple[str, tuple]] = [
    ("joint", (0,)),            # 0  nose
    ("joint", (1,)),            # 1  neck
    ("joint", (2,)),            # 2  R shoulder
    ("joint", (5,)),            # 3  L shoulder
    ("joint", (3,)),            # 4  R elbow
    ("joint", (6,)),            # 5  L elbow
    ("joint", (4,)),            # 6  R wrist
    ("joint", (7,)),            # 7  L wrist
    ("joint", (8,)),            # 8  R hip
    ("joint", (11,)),           # 9  L hip
    ("intra", (0, 1)),          # 10 nose-neck midpoint
    ("intra", (2, 5)),          # 11 shoulder midpoint
    ("intra", (8, 11)),         # 12 hip midpoint
    ("inter", (1, 2)),          # 13 neck - R shoulder
    ("inter", (1, 5)),          # 14 neck - L shoulder
    ("inter", (2, 3)),          # 15 R shoulder - R elbow
    ("inter", (5, 6)),          # 16 L shoulder - L elbow
    ("inter", (3, 4)),          # 17 R elbow - R wrist
    ("inter", (6, 7)),          # 18 L elbow - L wrist
    ("torso", (1, 8, 11)),      # 19 neck - hip-centre midpoint
]


def _mirror_axis(joints: np.ndarray) -> float | None:
    """Vertical body axis: neck x, else shoulder-midpoint x, else hip-midpoint x."""
    if not np.isnan(joints[1]).any():
        return float(joints[1, 0])
    if not np.isnan(joints[[2, 5]]).any():
        return float((joints[2, 0] + joints[5, 0]) / 2.0)
    if not np.isnan(joints[[8, 11]]).any():
        return float((joints[8, 0] + joints[11, 0]) / 2.0)
    return None


def sc_patch_centres(joints: np.ndarray) -> np.ndarray:
    """(20, 2) SC patch centres; NaN rows mark unresolved slots."""
    if joints.shape != (NUM_JOINTS, 2):
        raise ValueError(f"joints shape {joints.shape}, want ({NUM_JOINTS}, 2)")
    resolved = joints.copy()
    detected = {j for j in range(NUM_JOINTS) if not np.isnan(joints[j]).any()}
    have = set(detected)

    axis = _mirror_axis(joints)
    if axis is not None:
        for a, b in MIRROR_PAIRS:
            for missing, partner in ((a, b), (b, a)):
                if missing in have or partner not in detected:
                    continue
                x, y = resolved[partner]
                resolved[missing] = (2.0 * axis - x, y)
                have.add(missing)

    centres = np.full((NUM_SC_SLOTS, 2), np.nan)
    for slot, (kind, args) in enumerate(SC_SLOT_LAYOUT):
        if kind == "joint":
            (j,) = args
            if j in have:
                centres[slot] = resolved[j]
        elif kind in ("intra", "inter"):
            a, b = args
            if a in have and b in have:
                centres[slot] = (resolved[a] + resolved[b]) / 2.0
        else:  # torso
            neck, hip_r, hip_l = args
            if neck in have and hip_r in have and hip_l in have:
                hip_mid = (resolved[hip_r] + resolved[hip_l]) / 2.0
                centres[slot] = (resolved[neck] + hip_mid) / 2.0
    return centres
