"""Graph-based age estimation: keypoint selection, SC keypoint generation,
F-SC graph construction, and the temporally-aware adaptive GCN."""

from .config import TrainConfig
from .data import Manifest, SynthSpec, load_manifest, synth_generate, write_manifest
from .graphs import AdjacencySpec, FscGraph, build_adjacency, build_graph
from .keypoints import (KeypointSample, ScKeypointSet, SelectionStats,
                        SkeletonHierarchy, compute_selection, default_hierarchy,
                        generate_sc)
from .network import TaaGcn

__all__ = [
    "TrainConfig", "Manifest", "SynthSpec", "load_manifest", "synth_generate",
    "write_manifest", "AdjacencySpec", "FscGraph", "build_adjacency",
    "build_graph", "KeypointSample", "ScKeypointSet", "SelectionStats",
    "SkeletonHierarchy", "compute_selection", "default_hierarchy", "generate_sc",
    "TaaGcn",
]

__version__ = "0.1.0"
