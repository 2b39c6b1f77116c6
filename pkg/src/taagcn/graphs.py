"""Per-sample F-SC graph construction: hybrid node features and the
correlation-based initial adjacency.

Each node carries a flattened [patch pixels | tiled x-plane | tiled y-plane]
vector; facial and SC nodes form two disjoint blocks whose adjacency is built
offline (training split only) from per-node top-n Pearson correlations.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np

from .keypoints import KeypointSample, NUM_FACIAL, ScKeypointSet

logger = logging.getLogger(__name__)


class GraphConfigError(ValueError):
    pass


@dataclass
class AdjacencySpec:
    """Binary block adjacencies; symmetric, zero diagonal, every row nonzero."""

    a_f: np.ndarray  # (N', N') u8
    a_z: np.ndarray  # (M', M') u8
    top_n: int

    def __post_init__(self):
        for name, a in (("a_f", self.a_f), ("a_z", self.a_z)):
            if not np.array_equal(a, a.T):
                raise GraphConfigError(f"{name} is not symmetric")
            if np.any(np.diagonal(a)):
                raise GraphConfigError(f"{name} has a nonzero diagonal")
            if np.any(a.sum(axis=1) == 0):
                raise GraphConfigError(f"{name} has an isolated node")

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.a_f.astype(np.uint8).tobytes())
        h.update(self.a_z.astype(np.uint8).tobytes())
        h.update(str(self.top_n).encode())
        return h.hexdigest()

    def to_json(self) -> str:
        def pairs(a):
            i, j = np.nonzero(np.triu(a, 1))
            return [[int(x), int(y)] for x, y in zip(i, j)]
        return json.dumps({"top_n": self.top_n, "a_f": pairs(self.a_f),
                           "a_z": pairs(self.a_z),
                           "n_f": int(self.a_f.shape[0]), "n_z": int(self.a_z.shape[0])},
                          indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AdjacencySpec":
        obj = json.loads(text)
        a_f = np.zeros((obj["n_f"], obj["n_f"]), dtype=np.uint8)
        a_z = np.zeros((obj["n_z"], obj["n_z"]), dtype=np.uint8)
        for i, j in obj["a_f"]:
            a_f[i, j] = a_f[j, i] = 1
        for i, j in obj["a_z"]:
            a_z[i, j] = a_z[j, i] = 1
        return cls(a_f=a_f, a_z=a_z, top_n=obj["top_n"])


@dataclass
class FscGraph:
    """J node feature vectors (facial block first) plus block edge weights."""

    features: np.ndarray   # (J, F) float
    edges_f: np.ndarray    # (N', N') float, 1.0 on adjacency support
    edges_z: np.ndarray    # (M', M') float
    age: int
    n_facial: int

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]


def node_feature(patch: np.ndarray, point: np.ndarray,
                 image_size: tuple[int, int], patch_size: int) -> np.ndarray:
    """Flatten one keypoint into [patch (channel-major) | x-plane | y-plane].

    A missing/zero-filled keypoint yields an all-zero vector.
    """
    p = patch_size
    if patch.shape != (p, p, 3):
        raise GraphConfigError(f"patch shape {patch.shape}, want ({p}, {p}, 3)")
    flat = np.empty(5 * p * p, dtype=np.float64)
    if np.isnan(point).any() or not point.any():
        flat[:] = 0.0
        return flat
    w, h = image_size
    flat[:3 * p * p] = (patch.astype(np.float64) / 255.0).transpose(2, 0, 1).reshape(-1)
    flat[3 * p * p:4 * p * p] = point[0] / w
    flat[4 * p * p:] = point[1] / h
    return flat


def assemble_features(sample: KeypointSample, R: list[int], sc: ScKeypointSet,
                      patch_size: int) -> np.ndarray:
    """(J, F) node feature matrix in the fixed slot order: selected facial
    keypoints (ascending R) then the 20 SC slots."""
    if sample.patches is None:
        raise GraphConfigError(f"sample {sample.id}: patches missing")
    expected = NUM_FACIAL + ScKeypointSet.NUM_SLOTS
    if sample.patches.shape[0] != expected:
        raise GraphConfigError(
            f"sample {sample.id}: {sample.patches.shape[0]} patch slots, want {expected}")
    rows = []
    for k in R:
        rows.append(node_feature(sample.patches[k], sample.facial_keypoints[k],
                                 sample.image_size, patch_size))
    for slot in range(ScKeypointSet.NUM_SLOTS):
        rows.append(node_feature(sample.patches[NUM_FACIAL + slot], sc.points[slot],
                                 sample.image_size, patch_size))
    return np.asarray(rows)


def node_summaries(features: np.ndarray) -> np.ndarray:
    """Scalar summary per node (mean of the flat vector) used for Eq.-style
    cross-sample correlation."""
    return features.mean(axis=1)


def correlation(x_i: np.ndarray, x_j: np.ndarray) -> float:
    """Pearson correlation of two per-sample series; 0 when either side has
    zero variance (logged rather than NaN)."""
    if x_i.shape != x_j.shape or x_i.size < 2:
        raise GraphConfigError(f"correlation: bad series shapes {x_i.shape}, {x_j.shape}")
    xi = x_i - x_i.mean()
    xj = x_j - x_j.mean()
    denom = np.sqrt((xi * xi).sum() * (xj * xj).sum())
    if denom == 0.0:
        logger.debug("correlation: zero-variance series, defining rho = 0")
        return 0.0
    return float((xi * xj).sum() / denom)


def _block_adjacency(series: np.ndarray, top_n: int) -> np.ndarray:
    """Per-node top-n correlated partners, OR-symmetrized, zero diagonal.
    `series` is (num_samples, block_size)."""
    size = series.shape[1]
    if top_n >= size:
        raise GraphConfigError(f"top_n={top_n} must be < block size {size}")
    rho = np.empty((size, size))
    for i in range(size):
        for j in range(size):
            rho[i, j] = 1.0 if i == j else correlation(series[:, i], series[:, j])
    adj = np.zeros((size, size), dtype=np.uint8)
    for i in range(size):
        scores = rho[i].copy()
        scores[i] = -np.inf
        order = np.argsort(-scores, kind="stable")  # ties to lower index
        adj[i, order[:top_n]] = 1
    return adj | adj.T


def build_adjacency(feature_list: list[np.ndarray], n_facial: int,
                    top_n: int = 5) -> AdjacencySpec:
    """Initial adjacency from training-split node summaries, per block."""
    if len(feature_list) < 2:
        raise GraphConfigError("build_adjacency needs at least 2 samples")
    summaries = np.asarray([node_summaries(f) for f in feature_list])
    a_f = _block_adjacency(summaries[:, :n_facial], top_n)
    a_z = _block_adjacency(summaries[:, n_facial:], top_n)
    return AdjacencySpec(a_f=a_f, a_z=a_z, top_n=top_n)


def build_graph(sample: KeypointSample, R: list[int], sc: ScKeypointSet,
                adjacency: AdjacencySpec, patch_size: int) -> FscGraph:
    """Assemble one sample into an F-SC graph with unit initial edge weights."""
    n_f = len(R)
    if adjacency.a_f.shape[0] != n_f or adjacency.a_z.shape[0] != ScKeypointSet.NUM_SLOTS:
        raise GraphConfigError(
            f"adjacency blocks {adjacency.a_f.shape[0]}/{adjacency.a_z.shape[0]} "
            f"do not match (N'={n_f}, M'={ScKeypointSet.NUM_SLOTS})")
    features = assemble_features(sample, R, sc, patch_size)
    return FscGraph(features=features,
                    edges_f=adjacency.a_f.astype(np.float64),
                    edges_z=adjacency.a_z.astype(np.float64),
                    age=sample.age, n_facial=n_f)
