"""Image-to-manifest extraction for fsc-manifest datasets.

Walks a directory of images, runs pluggable face-landmark and skeleton
detectors, crops patches around every detected point, and writes the
`manifest.jsonl` + `patches.bin` pair consumed by the training harness.
This package speaks only that on-disk interface; it shares no code with
the harness.
"""

from .backends import (DetectorError, detect_face_landmarks, detect_skeleton,
                       register_face_backend, register_skeleton_backend)
from .extract import ExtractionJob, ExtractionError, extract
from .manifest import NUM_FACIAL, NUM_JOINTS, NUM_PATCH_SLOTS

__all__ = [
    "DetectorError", "ExtractionError", "ExtractionJob", "NUM_FACIAL",
    "NUM_JOINTS", "NUM_PATCH_SLOTS", "detect_face_landmarks",
    "detect_skeleton", "extract", "register_face_backend",
    "register_skeleton_backend",
]
