"""Directory-of-images to fsc-manifest extraction."""

from __future__ import annotations

import csv
import logging
import os
import re
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .backends import DetectorError, detect_face_landmarks, detect_skeleton
from .manifest import (NUM_FACIAL, NUM_PATCH_SLOTS, Record, write_dataset)
from .sc_points import sc_patch_centres

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".ppm")
DEFAULT_LABEL_PATTERN = r"age(\d+)"


class ExtractionError(RuntimeError):
    pass


@dataclass
class ExtractionJob:
    image_dir: str
    out_manifest: str
    # either a regex with one capture group matched against the filename, or
    # a path to a CSV with `filename,age` rows
    label_source: str = DEFAULT_LABEL_PATTERN
    face_backend: str = "marker"
    skeleton_backend: str = "marker"
    patch_size: int = 32
    out_patches: str = ""

    def __post_init__(self):
        if not self.out_patches:
            self.out_patches = os.path.join(
                os.path.dirname(os.path.abspath(self.out_manifest)), "patches.bin")


def _label_lookup(job: ExtractionJob) -> callable:
    if os.path.isfile(job.label_source):
        with open(job.label_source, newline="") as fh:
            table = {row["filename"]: int(row["age"])
                     for row in csv.DictReader(fh)}

        def from_csv(name: str) -> int | None:
            return table.get(name)
        return from_csv

    pattern = re.compile(job.label_source)

    def from_name(name: str) -> int | None:
        m = pattern.search(name)
        return int(m.group(1)) if m else None
    return from_name


def _crop(image: np.ndarray, centre: np.ndarray, p: int) -> np.ndarray:
    """(P, P, 3) crop centred on `centre` with clamp-to-edge replication."""
    h, w = image.shape[:2]
    cx, cy = int(round(float(centre[0]))), int(round(float(centre[1])))
    xs = np.clip(np.arange(cx - p // 2, cx - p // 2 + p), 0, w - 1)
    ys = np.clip(np.arange(cy - p // 2, cy - p // 2 + p), 0, h - 1)
    return image[np.ix_(ys, xs)]


def _patch_block(image: np.ndarray, facial: np.ndarray | None,
                 joints: np.ndarray | None, p: int) -> np.ndarray:
    block = np.zeros((NUM_PATCH_SLOTS, p, p, 3), dtype=np.uint8)
    if facial is not None:
        for k in range(NUM_FACIAL):
            if not np.isnan(facial[k]).any():
                block[k] = _crop(image, facial[k], p)
    if joints is not None:
        centres = sc_patch_centres(joints)
        for slot in range(centres.shape[0]):
            if not np.isnan(centres[slot]).any():
                block[NUM_FACIAL + slot] = _crop(image, centres[slot], p)
    return block


def _points_json(points: np.ndarray | None, count: int) -> list:
    if points is None:
        return [None] * count
    return [None if np.isnan(xy).any() else [float(xy[0]), float(xy[1])]
            for xy in points]


def extract(job: ExtractionJob) -> list[Record]:
    """Run detection over every image in the job and write the dataset.

    Per-image detector failures and images with neither a face nor a body
    are skipped and logged; zero successful records is a job error.
    """
    names = sorted(n for n in os.listdir(job.image_dir)
                   if n.lower().endswith(IMAGE_EXTENSIONS))
    if not names:
        raise ExtractionError(f"no images found in {job.image_dir}")
    label_for = _label_lookup(job)
    p = job.patch_size
    block_len = NUM_PATCH_SLOTS * p * p * 3

    records: list[Record] = []
    blocks: list[np.ndarray] = []
    offset = 0
    for name in names:
        path = os.path.join(job.image_dir, name)
        age = label_for(name)
        if age is None:
            logger.warning("skipping %s: no age label", name)
            continue
        image = np.asarray(Image.open(path).convert("RGB"))
        try:
            facial = detect_face_landmarks(image, job.face_backend)
            joints = detect_skeleton(image, job.skeleton_backend)
        except DetectorError as e:
            logger.warning("skipping %s: detector failure: %s", name, e)
            continue
        if facial is None and joints is None:
            logger.warning("skipping %s: neither face nor body detected", name)
            continue
        h, w = image.shape[:2]
        records.append(Record(
            id=os.path.splitext(name)[0], age=age, image_size=(w, h),
            facial_keypoints=_points_json(facial, NUM_FACIAL),
            skeleton_joints=_points_json(joints, 18),
            patch_offset=offset, patch_len=block_len,
        ))
        blocks.append(_patch_block(image, facial, joints, p))
        offset += block_len

    if not records:
        raise ExtractionError(
            f"no image in {job.image_dir} produced a usable record")
    write_dataset(job.out_manifest, job.out_patches, p, records, blocks)
    logger.info("wrote %d records to %s", len(records), job.out_manifest)
    return records
