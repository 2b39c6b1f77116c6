"""Run configuration: every pipeline hyperparameter in one serializable place.

A training run is reproducible from (config, seed, manifest hash); the config
is written as a JSON sidecar next to every checkpoint.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

MODALITIES = ("FK", "FPP", "FK+FPP", "SCK", "SCIP", "SCK+SCIP", "all")


@dataclass
class TrainConfig:
    # geometry / keypoint selection
    num_facial: int = 68
    num_joints: int = 18
    n_select: int = 19
    num_neighbors: int = 5          # K
    eta: float = 0.4
    num_sc: int = 20
    num_levels: int = 4
    patch_size: int = 32
    root_keypoint: int = 30
    top_n: int = 5

    # network
    agcl_channels: tuple[int, ...] = (64, 64, 128, 128, 256, 256)
    tmm_layers: int = 5
    tmm_hidden: int = 64
    alpha: float = 2.0
    dropout: float = 0.1
    q_max: int = 116
    omega: float = 0.65
    psi_max: float = 1e6

    # training
    learning_rate: float = 1e-5
    epochs: int = 300
    weight_decay: float = 1e-6
    batch_size: int = 32
    seed: int = 0
    dtype: str = "f32"              # f32 for training, f64 for grad checks
    val_fraction: float = 0.2
    # stop once train MAE drops to this value; 0 disables early stopping
    stop_at_train_mae: float = 0.0
    # evaluate and log split MAE every this many epochs (loss is logged every
    # epoch regardless)
    eval_every: int = 1

    # ablation variants
    temporal_aware: bool = True
    adaptive_f: bool = True
    adaptive_z: bool = True
    use_keypoint_selection: bool = True
    modality: str = "all"

    # top-1 age-group boundaries (upper-inclusive bin edges), dataset-specific
    age_group_bounds: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality {self.modality!r} not one of {MODALITIES}")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must be in [0, 1], got {self.omega}")
        if self.alpha <= 1.0:
            raise ValueError(f"alpha must be > 1, got {self.alpha}")
        if self.dtype not in ("f32", "f64"):
            raise ValueError(f"dtype must be f32 or f64, got {self.dtype}")
        self.agcl_channels = tuple(self.agcl_channels)

    @property
    def variant_name(self) -> str:
        adaptive = self.adaptive_f or self.adaptive_z
        if self.temporal_aware and adaptive:
            return "TAA-GCN"
        if self.temporal_aware:
            return "TA-GCN"
        if adaptive:
            return "AGCN"
        return "GCN"

    @property
    def feature_dim(self) -> int:
        return 5 * self.patch_size * self.patch_size

    @property
    def num_nodes(self) -> int:
        return self.n_select + self.num_sc

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        obj = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)

    def replace(self, **kwargs) -> "TrainConfig":
        return dataclasses.replace(self, **kwargs)
