"""Pluggable detector backends.

A face backend maps an (H, W, 3) uint8 image to a (68, 2) float array of
landmark positions (NaN rows where undetected) or None when no face is
found; a skeleton backend does the same for (18, 2) COCO-18 joints.  Both
sides of the interface are plain callables registered by name, so swapping
in a learned detector is a one-line registration.

The built-in "marker" backend reads colour-coded calibration markers:
facial landmark k is a block of pixels with exact colour (40, 200, k) and
skeleton joint j one with (200, 40, j).  Rendered fixtures carry these
markers at known positions, which gives the extraction pipeline a
pixel-accurate ground-truth oracle without a trained model.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .manifest import NUM_FACIAL, NUM_JOINTS

Detector = Callable[[np.ndarray], Optional[np.ndarray]]

FACE_MARKER_RG = (40, 200)
SKELETON_MARKER_RG = (200, 40)


class DetectorError(RuntimeError):
    pass


_FACE_BACKENDS: dict[str, Detector] = {}
_SKELETON_BACKENDS: dict[str, Detector] = {}


def register_face_backend(name: str, fn: Detector) -> None:
    _FACE_BACKENDS[name] = fn


def register_skeleton_backend(name: str, fn: Detector) -> None:
    _SKELETON_BACKENDS[name] = fn


def _lookup(table: dict[str, Detector], name: str, kind: str) -> Detector:
    if name not in table:
        raise DetectorError(
            f"unknown {kind} backend {name!r}; registered: {sorted(table)}")
    return table[name]


def detect_face_landmarks(image: np.ndarray, backend: str = "marker"
                          ) -> np.ndarray | None:
    return _lookup(_FACE_BACKENDS, backend, "face")(image)


def detect_skeleton(image: np.ndarray, backend: str = "marker"
                    ) -> np.ndarray | None:
    return _lookup(_SKELETON_BACKENDS, backend, "skeleton")(image)


def _marker_points(image: np.ndarray, rg: tuple[int, int],
                   count: int) -> np.ndarray | None:
    """Centroids of exact-colour marker blocks, indexed by the blue channel."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise DetectorError(f"expected (H, W, 3) image, got {image.shape}")
    mask = (image[:, :, 0] == rg[0]) & (image[:, :, 1] == rg[1])
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return None
    idx = image[ys, xs, 2].astype(np.int64)
    points = np.full((count, 2), np.nan)
    for k in range(count):
        sel = idx == k
        if sel.any():
            points[k] = (xs[sel].mean(), ys[sel].mean())
    return points


def _marker_face(image: np.ndarray) -> np.ndarray | None:
    return _marker_points(image, FACE_MARKER_RG, NUM_FACIAL)


def _marker_skeleton(image: np.ndarray) -> np.ndarray | None:
    return _marker_points(image, SKELETON_MARKER_RG, NUM_JOINTS)


register_face_backend("marker", _marker_face)
register_skeleton_backend("marker", _marker_skeleton)
