"""Facial keypoint selection and skeletal-cosmetic (SC) keypoint generation.

Selection scores every facial landmark by two dataset-wide statistics: how
much its neighbour distances vary (expression sensitivity, to be avoided)
and how much its distance to a root landmark varies (age sensitivity, to be
kept).  The top-N' mix of the two is frozen and reused at train/eval time.

SC generation turns a partially detected 18-joint skeleton into a fixed
20-slot point set by midpoint interpolation within and across hierarchical
levels, with left/right mirroring used to recover one missing side.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

# COCO-18 joint ids used throughout (OpenPose ordering):
# 0 nose, 1 neck, 2/5 shoulders (R/L), 3/6 elbows, 4/7 wrists,
# 8/11 hips, 9/12 knees, 10/13 ankles, 14/15 eyes, 16/17 ears.
NUM_FACIAL = 68
NUM_JOINTS = 18
ROOT_KEYPOINT = 30  # nose tip in the standard 68-landmark layout


class SelectionError(ValueError):
    pass


@dataclass
class KeypointSample:
    """One person: landmark/joint coordinates plus per-slot pixel patches.

    Missing points are NaN rows.  `patches` holds one (P, P, 3) u8 block per
    feature slot (68 facial + 20 SC), zeros where the point is missing.
    """

    id: str
    age: int
    image_size: tuple[int, int]  # (width, height) px
    facial_keypoints: np.ndarray  # (68, 2), NaN rows where undetected
    skeleton_joints: np.ndarray   # (18, 2), NaN rows where undetected
    patches: np.ndarray | None = None

    def __post_init__(self):
        if self.facial_keypoints.shape != (NUM_FACIAL, 2):
            raise ValueError(f"facial_keypoints shape {self.facial_keypoints.shape}, want (68, 2)")
        if self.skeleton_joints.shape != (NUM_JOINTS, 2):
            raise ValueError(f"skeleton_joints shape {self.skeleton_joints.shape}, want (18, 2)")

    @property
    def diagonal(self) -> float:
        w, h = self.image_size
        return float(np.hypot(w, h))


@dataclass
class SelectionStats:
    zeta: np.ndarray   # (num_samples, 68) normalized neighbour-distance scores
    v_e: np.ndarray    # (68,) expression variance, NaN where unscored
    v_a: np.ndarray    # (68,) age variance, NaN where unscored
    v_t: np.ndarray    # (68,) combined score
    R: list[int]       # selected indices, strictly increasing


@dataclass
class SkeletonHierarchy:
    """Joint levels ordered parent-first, plus left/right symmetry info."""

    levels: list[list[int]]
    mirror_pairs: list[tuple[int, int]]
    end_effectors: set[int]

    def all_joints(self) -> set[int]:
        return {j for level in self.levels for j in level}

    def to_json(self) -> str:
        return json.dumps({
            "levels": self.levels,
            "mirror_pairs": [list(p) for p in self.mirror_pairs],
            "end_effectors": sorted(self.end_effectors),
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SkeletonHierarchy":
        obj = json.loads(text)
        return cls(
            levels=[list(l) for l in obj["levels"]],
            mirror_pairs=[tuple(p) for p in obj["mirror_pairs"]],
            end_effectors=set(obj["end_effectors"]),
        )


def default_hierarchy() -> SkeletonHierarchy:
    """Upper-body hierarchy with 4 levels; legs/eyes/ears are not used for
    SC generation (the face is covered by the facial graph)."""
    return SkeletonHierarchy(
        levels=[
            [0, 1],        # nose, neck
            [2, 5],        # shoulders
            [3, 6],        # elbows
            [4, 7, 8, 11]  # wrists + hips (hips are non-end-effectors)
        ],
        mirror_pairs=[(2, 5), (3, 6), (4, 7), (8, 11)],
        end_effectors={4, 7},
    )


@dataclass
class ScKeypointSet:
    points: np.ndarray           # (20, 2), zero-filled where unavailable
    provenance: list[str] = field(default_factory=list)

    NUM_SLOTS = 20


# Fixed slot layout for the 20 SC keypoints.  Each slot is either a source
# joint or a midpoint of two previously resolved entries; indices refer to
# COCO-18 joints, "slot:i" refers to an earlier SC slot.
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
    ("intra", (0, 1)),          # 10 nose-neck midpoint          (level 0)
    ("intra", (2, 5)),          # 11 shoulder midpoint           (level 1)
    ("intra", (8, 11)),         # 12 hip midpoint                (level 3)
    ("inter", (1, 2)),          # 13 neck - R shoulder
    ("inter", (1, 5)),          # 14 neck - L shoulder
    ("inter", (2, 3)),          # 15 R shoulder - R elbow
    ("inter", (5, 6)),          # 16 L shoulder - L elbow
    ("inter", (3, 4)),          # 17 R elbow - R wrist
    ("inter", (6, 7)),          # 18 L elbow - L wrist
    ("torso", (1, 8, 11)),      # 19 neck - hip-centre midpoint
]


# -- facial keypoint selection ----------------------------------------------

def _present(points: np.ndarray) -> np.ndarray:
    return ~np.isnan(points).any(axis=1)


def neighbor_sets(samples: list[KeypointSample], K: int) -> list[list[int]]:
    """K nearest neighbours per keypoint by mean distance over the dataset.

    Distances are averaged over samples where both endpoints are present;
    ties break to the lower index.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if not samples:
        raise ValueError("neighbor_sets: empty dataset")
    n = NUM_FACIAL
    dist_sum = np.zeros((n, n))
    dist_cnt = np.zeros((n, n))
    for s in samples:
        pts = s.facial_keypoints
        ok = _present(pts)
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        pair_ok = np.outer(ok, ok)
        dist_sum += np.where(pair_ok, np.nan_to_num(d), 0.0)
        dist_cnt += pair_ok
    ever = dist_cnt.diagonal() > 0
    for k in np.flatnonzero(~ever):
        raise SelectionError(f"keypoint {k} is absent in every sample")
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_d = np.where(dist_cnt > 0, dist_sum / np.maximum(dist_cnt, 1), np.inf)
    np.fill_diagonal(mean_d, np.inf)
    beta = []
    for k in range(n):
        # stable sort => equal distances resolve to the lower index
        order = np.argsort(mean_d[k], kind="stable")
        beta.append([int(i) for i in order[:K]])
    return beta


def _zeta_matrix(samples: list[KeypointSample], beta: list[list[int]]) -> np.ndarray:
    """Unnormalized neighbour-distance sums, (num_samples, 68); NaN where the
    keypoint or any neighbour is missing in that sample."""
    rows = []
    for s in samples:
        pts = s.facial_keypoints
        row = np.full(NUM_FACIAL, np.nan)
        for k in range(NUM_FACIAL):
            nbrs = pts[beta[k]]
            if np.isnan(pts[k]).any() or np.isnan(nbrs).any():
                continue
            row[k] = np.linalg.norm(nbrs - pts[k], axis=1).sum()
        rows.append(row)
    return np.asarray(rows)


def expression_variance(samples: list[KeypointSample],
                        beta: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Per-keypoint variance of the normalized neighbour-distance score.

    Returns (v_e, zeta) where zeta is the (num_samples, 68) normalized score
    matrix.  The normalization term is the max unnormalized sum over the whole
    dataset pass, so scores stay comparable across samples.
    """
    raw = _zeta_matrix(samples, beta)
    H = np.nanmax(raw)
    if not np.isfinite(H) or H <= 0:
        raise SelectionError("all neighbour-distance sums are missing or zero")
    zeta = raw / H
    v_e = np.full(NUM_FACIAL, np.nan)
    for k in range(NUM_FACIAL):
        col = zeta[:, k]
        col = col[~np.isnan(col)]
        if col.size < 2:
            warnings.warn(f"keypoint {k}: fewer than 2 usable samples, excluded from selection")
            continue
        v_e[k] = col.var()  # population variance
    return v_e, zeta


def age_variance(samples: list[KeypointSample], root: int = ROOT_KEYPOINT) -> np.ndarray:
    """Per-keypoint variance of the (diagonal-normalized) distance to the root."""
    if not 0 <= root < NUM_FACIAL:
        raise SelectionError(f"root keypoint {root} outside [0, {NUM_FACIAL})")
    gammas = np.full((len(samples), NUM_FACIAL), np.nan)
    for i, s in enumerate(samples):
        pts = s.facial_keypoints
        if np.isnan(pts[root]).any():
            continue  # root absent: sample skipped for this statistic
        ok = _present(pts)
        d = np.linalg.norm(pts - pts[root], axis=1) / s.diagonal
        gammas[i, ok] = d[ok]
    v_a = np.full(NUM_FACIAL, np.nan)
    for k in range(NUM_FACIAL):
        col = gammas[:, k]
        col = col[~np.isnan(col)]
        if col.size >= 2:
            v_a[k] = col.var()
    return v_a


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = np.nanmin(x), np.nanmax(x)
    if hi == lo:
        return np.where(np.isnan(x), np.nan, 0.0)
    return (x - lo) / (hi - lo)


def select_keypoints(v_e: np.ndarray, v_a: np.ndarray, eta: float,
                     n_select: int) -> tuple[list[int], np.ndarray]:
    """Top-N' keypoints by eta * v_a + (1 - eta) * (1 - v_e).

    Both variances are min-max rescaled to [0, 1] first so the linear mix is
    scale-free.  Ties break to the lower index; the result is sorted ascending.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must be in [0, 1], got {eta}")
    scored = ~(np.isnan(v_e) | np.isnan(v_a))
    if n_select > scored.sum():
        raise SelectionError(f"cannot select {n_select} keypoints, only {scored.sum()} scored")
    ve = _minmax(np.where(scored, v_e, np.nan))
    va = _minmax(np.where(scored, v_a, np.nan))
    v_t = eta * va + (1.0 - eta) * (1.0 - ve)
    key = np.where(scored, v_t, -np.inf)
    # stable sort on descending score => equal scores resolve to lower index
    order = np.argsort(-key, kind="stable")
    chosen = sorted(int(i) for i in order[:n_select])
    return chosen, v_t


def compute_selection(samples: list[KeypointSample], K: int = 5, eta: float = 0.4,
                      n_select: int = 19, root: int = ROOT_KEYPOINT) -> SelectionStats:
    beta = neighbor_sets(samples, K)
    v_e, zeta = expression_variance(samples, beta)
    v_a = age_variance(samples, root)
    R, v_t = select_keypoints(v_e, v_a, eta, n_select)
    return SelectionStats(zeta=zeta, v_e=v_e, v_a=v_a, v_t=v_t, R=R)


def save_selection(path_or_fp, R: list[int]) -> None:
    text = json.dumps(sorted(int(r) for r in R))
    if hasattr(path_or_fp, "write"):
        path_or_fp.write(text)
    else:
        with open(path_or_fp, "w") as fh:
            fh.write(text)


def load_selection(path: str) -> list[int]:
    with open(path) as fh:
        R = json.load(fh)
    if R != sorted(R) or len(set(R)) != len(R):
        raise SelectionError(f"{path}: selection indices must be strictly increasing")
    return [int(r) for r in R]


# -- SC keypoint generation --------------------------------------------------

def _mirror_axis(joints: np.ndarray) -> float | None:
    """Vertical body axis: neck x, else shoulder-midpoint x, else hip-midpoint x."""
    if not np.isnan(joints[1]).any():
        return float(joints[1, 0])
    if not np.isnan(joints[[2, 5]]).any():
        return float((joints[2, 0] + joints[5, 0]) / 2.0)
    if not np.isnan(joints[[8, 11]]).any():
        return float((joints[8, 0] + joints[11, 0]) / 2.0)
    return None


def generate_sc(joints: np.ndarray,
                hierarchy: SkeletonHierarchy | None = None) -> ScKeypointSet:
    """Fixed 20-slot SC keypoint set from a partially detected skeleton.

    Detected joints fill their slots directly.  A missing joint whose mirror
    partner is detected is reflected about the vertical body axis.  Midpoint
    slots resolve when both endpoints are available; everything else is
    zero-filled so the output length is always 20.
    """
    if hierarchy is None:
        hierarchy = default_hierarchy()
    if joints.shape != (NUM_JOINTS, 2):
        raise ValueError(f"joints shape {joints.shape}, want ({NUM_JOINTS}, 2)")
    used = hierarchy.all_joints()

    resolved = joints.copy()
    source = {j: "detected" for j in used if not np.isnan(joints[j]).any()}

    axis = _mirror_axis(joints)
    if axis is not None:
        for a, b in hierarchy.mirror_pairs:
            for missing, partner in ((a, b), (b, a)):
                if missing in source or partner not in source:
                    continue
                if source[partner] != "detected":
                    continue
                x, y = resolved[partner]
                resolved[missing] = (2.0 * axis - x, y)
                source[missing] = "mirrored"

    def have(j: int) -> bool:
        return j in source

    points = np.zeros((ScKeypointSet.NUM_SLOTS, 2))
    provenance: list[str] = []
    for slot, (kind, args) in enumerate(SC_SLOT_LAYOUT):
        if kind == "joint":
            (j,) = args
            if have(j):
                points[slot] = resolved[j]
                provenance.append(source[j])
            else:
                provenance.append("zero")
        elif kind in ("intra", "inter"):
            a, b = args
            if have(a) and have(b):
                points[slot] = (resolved[a] + resolved[b]) / 2.0
                provenance.append("intra-level-interp" if kind == "intra" else "inter-level-interp")
            else:
                provenance.append("zero")
        else:  # torso: neck vs hip centre
            neck, hip_r, hip_l = args
            if have(neck) and have(hip_r) and have(hip_l):
                hip_mid = (resolved[hip_r] + resolved[hip_l]) / 2.0
                points[slot] = (resolved[neck] + hip_mid) / 2.0
                provenance.append("inter-level-interp")
            else:
                provenance.append("zero")
    return ScKeypointSet(points=points, provenance=provenance)
