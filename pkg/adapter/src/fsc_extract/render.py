"""Rendered test fixtures with pixel-exact ground truth.

Draws colour-coded markers (see `backends`) for a synthetic face-and-body
layout onto a plain background, so the marker backend can recover every
point exactly and the extraction pipeline can be validated end to end
without trained detectors.
"""

from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image

from .backends import FACE_MARKER_RG, SKELETON_MARKER_RG
from .manifest import NUM_FACIAL, NUM_JOINTS


def face_layout(width: int, height: int, offset=(0.0, 0.0)) -> np.ndarray:
    """68 landmark positions: jaw arc, brows, nose, eyes, mouth ellipse."""
    pts = np.zeros((NUM_FACIAL, 2))
    # face centre sits above the skeleton neck row so no face marker can
    # collide with (and be overdrawn by) a skeleton marker
    cx, cy = width * 0.5 + offset[0], height * 0.28 + offset[1]
    r = min(width, height) * 0.16
    ang = np.linspace(np.pi * 0.15, np.pi * 0.85, 17)
    pts[0:17] = np.stack([cx + 1.4 * r * np.cos(ang + np.pi),
                          cy - 1.4 * r * np.sin(ang + np.pi)], axis=1)
    for i in range(10):  # brows
        side = -1 if i < 5 else 1
        pts[17 + i] = (cx + side * (0.3 + 0.12 * (i % 5)) * r, cy - 0.8 * r)
    for i in range(9):   # nose bridge + base
        pts[27 + i] = (cx + 0.08 * r * (i - 4), cy - 0.3 * r + 0.12 * r * i)
    for i in range(12):  # eyes
        side = -1 if i < 6 else 1
        a = 2 * np.pi * (i % 6) / 6
        pts[36 + i] = (cx + side * 0.55 * r + 0.18 * r * np.cos(a),
                       cy - 0.25 * r + 0.1 * r * np.sin(a))
    a = np.linspace(0, 2 * np.pi, 20, endpoint=False)  # mouth
    pts[48:68] = np.stack([cx + 0.5 * r * np.cos(a),
                           cy + 0.75 * r + 0.25 * r * np.sin(a)], axis=1)
    return np.round(pts)


def skeleton_layout(width: int, height: int, offset=(0.0, 0.0)) -> np.ndarray:
    """COCO-18 joints for an upright figure."""
    t = np.array([
        [0.50, 0.18], [0.50, 0.34],                   # nose, neck
        [0.38, 0.36], [0.34, 0.52], [0.32, 0.66],     # R shoulder/elbow/wrist
        [0.62, 0.36], [0.66, 0.52], [0.68, 0.66],     # L shoulder/elbow/wrist
        [0.42, 0.64], [0.42, 0.80], [0.42, 0.94],     # R hip/knee/ankle
        [0.58, 0.64], [0.58, 0.80], [0.58, 0.94],     # L hip/knee/ankle
        [0.47, 0.15], [0.53, 0.15], [0.44, 0.17], [0.56, 0.17],  # eyes, ears
    ])
    return np.round(t * np.array([width, height]) + np.asarray(offset))


def _draw_markers(canvas: np.ndarray, points: np.ndarray, rg: tuple[int, int],
                  present: np.ndarray | None = None) -> None:
    """3x3 blocks of (r, g, index); the centroid is exactly the point."""
    h, w = canvas.shape[:2]
    for k, (x, y) in enumerate(points):
        if present is not None and not present[k]:
            continue
        xi, yi = int(x), int(y)
        if not (1 <= xi < w - 1 and 1 <= yi < h - 1):
            continue
        canvas[yi - 1:yi + 2, xi - 1:xi + 2] = (rg[0], rg[1], k)


def render_fixture(path: str, width: int = 320, height: int = 480,
                   face: np.ndarray | None = None,
                   joints: np.ndarray | None = None,
                   joint_present: np.ndarray | None = None,
                   background: int = 110, seed: int = 0) -> None:
    """Write a PNG with the given marker layouts over a textured background."""
    rng = np.random.default_rng(seed)
    canvas = np.clip(background + rng.integers(-20, 20, (height, width, 1)),
                     0, 255).astype(np.uint8).repeat(3, axis=2)
    # keep background away from the exact marker colours
    canvas[:, :, 0][canvas[:, :, 0] == FACE_MARKER_RG[0]] += 1
    canvas[:, :, 0][canvas[:, :, 0] == SKELETON_MARKER_RG[0]] += 1
    if face is not None:
        _draw_markers(canvas, face, FACE_MARKER_RG)
    if joints is not None:
        _draw_markers(canvas, joints, SKELETON_MARKER_RG, joint_present)
    Image.fromarray(canvas).save(path)


def build_fixture_dir(out_dir: str) -> dict:
    """The committed 5-image fixture: full records, a face-only image, and a
    partially detected skeleton.  Returns the ground-truth point table."""
    os.makedirs(out_dir, exist_ok=True)
    w, h = 320, 480
    truth = {}

    def add(name, face, joints, present=None, seed=0):
        render_fixture(os.path.join(out_dir, name), w, h, face, joints,
                       joint_present=present, seed=seed)
        truth[name] = {
            "facial": None if face is None else face.tolist(),
            "joints": None if joints is None else [
                None if (present is not None and not present[j]) else
                joints[j].tolist() for j in range(NUM_JOINTS)],
        }

    add("subject-a-age007.png", face_layout(w, h), skeleton_layout(w, h), seed=1)
    add("subject-b-age023.png", face_layout(w, h, offset=(14, 6)),
        skeleton_layout(w, h, offset=(10, 4)), seed=2)
    add("subject-c-age041.png", face_layout(w, h, offset=(-12, 10)),
        skeleton_layout(w, h, offset=(-8, 2)), seed=3)
    # face only: frontal portrait, no body in frame
    add("subject-d-age035.png", face_layout(w, h, offset=(4, -8)), None, seed=4)
    # partial skeleton: right arm occluded (shoulder, elbow, wrist missing)
    present = np.ones(NUM_JOINTS, dtype=bool)
    present[[2, 3, 4]] = False
    add("subject-e-age060.png", face_layout(w, h, offset=(0, 12)),
        skeleton_layout(w, h, offset=(6, 0)), present=present, seed=5)

    with open(os.path.join(out_dir, "ground_truth.json"), "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
    return truth
