"""Training loop, evaluation metrics, and the ablation harness.

A run is: select keypoints and build adjacency from the training split only,
assemble per-sample graph features, then per-sample forward/backward with
gradients accumulated in fixed sample order inside each minibatch, ADAM with
weight decay, per-epoch train/val MAE as JSONL rows, best-val checkpointing.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import Manifest
from .graphs import AdjacencySpec, assemble_features, build_adjacency
from .keypoints import compute_selection, default_hierarchy, generate_sc
from .network import TaaGcn

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


# -- metrics -----------------------------------------------------------------

def mean_absolute_error(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError(f"MAE: bad shapes {pred.shape} vs {truth.shape}")
    return float(np.abs(pred - truth).mean())


def top1_score(pred: np.ndarray, truth: np.ndarray, group_bounds: list[int]) -> float:
    """Fraction of samples whose predicted age group matches the labeled one.
    `group_bounds` are ascending inner bin edges (age < b0 is group 0, ...)."""
    if not group_bounds:
        raise ValueError("top1_score needs age-group boundaries")
    bins = np.asarray(group_bounds, dtype=np.float64)
    return float((np.digitize(pred, bins) == np.digitize(truth, bins)).mean())


# -- feature pipeline --------------------------------------------------------

def modality_mask(cfg: TrainConfig) -> np.ndarray:
    """(J, F) multiplicative mask implementing the ablation modality: which
    blocks (facial/SC) and which feature parts (patches/coords) are visible."""
    p2 = cfg.patch_size * cfg.patch_size
    m = cfg.modality
    fk = m in ("FK", "FK+FPP", "all")
    fpp = m in ("FPP", "FK+FPP", "all")
    sck = m in ("SCK", "SCK+SCIP", "all")
    scip = m in ("SCIP", "SCK+SCIP", "all")
    row_f = np.concatenate([np.full(3 * p2, float(fpp)), np.full(2 * p2, float(fk))])
    row_z = np.concatenate([np.full(3 * p2, float(scip)), np.full(2 * p2, float(sck))])
    return np.vstack([np.tile(row_f, (cfg.n_select, 1)),
                      np.tile(row_z, (cfg.num_sc, 1))])


def fallback_selection(cfg: TrainConfig) -> list[int]:
    """Evenly spaced landmark indices used when keypoint selection is ablated."""
    return sorted(int(i) for i in np.linspace(0, cfg.num_facial - 1, cfg.n_select))


@dataclass
class PreparedDataset:
    features: list[np.ndarray]     # per sample, (J, F) after modality masking
    ages: np.ndarray
    ids: list[str]
    R: list[int]
    adjacency: AdjacencySpec
    train_idx: np.ndarray
    val_idx: np.ndarray
    manifest_hash: str


def split_indices(ids: list[str], val_fraction: float, seed: int
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic, id-disjoint split."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_val = int(round(len(ids) * val_fraction))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def prepare_dataset(manifest: Manifest, cfg: TrainConfig,
                    R: list[int] | None = None,
                    adjacency: AdjacencySpec | None = None) -> PreparedDataset:
    """Selection + SC generation + feature assembly + adjacency, with the
    offline statistics computed from the training split only."""
    samples = [manifest.load_sample(i) for i in range(len(manifest))]
    ids = [s.id for s in samples]
    train_idx, val_idx = split_indices(ids, cfg.val_fraction, cfg.seed)
    train_samples = [samples[i] for i in train_idx]

    if R is None:
        if cfg.use_keypoint_selection:
            stats = compute_selection(train_samples, K=cfg.num_neighbors, eta=cfg.eta,
                                      n_select=cfg.n_select, root=cfg.root_keypoint)
            R = stats.R
        else:
            R = fallback_selection(cfg)

    hierarchy = default_hierarchy()
    mask = modality_mask(cfg)
    features = []
    for s in samples:
        sc = generate_sc(s.skeleton_joints, hierarchy)
        features.append(assemble_features(s, R, sc, cfg.patch_size) * mask)

    if adjacency is None:
        adjacency = build_adjacency([features[i] for i in train_idx],
                                    n_facial=cfg.n_select, top_n=cfg.top_n)
    ages = np.asarray([s.age for s in samples], dtype=np.int64)
    return PreparedDataset(features=features, ages=ages, ids=ids, R=R,
                           adjacency=adjacency, train_idx=train_idx, val_idx=val_idx,
                           manifest_hash=manifest.content_hash())


def build_model(cfg: TrainConfig, adjacency: AdjacencySpec) -> TaaGcn:
    dtype = np.float32 if cfg.dtype == "f32" else np.float64
    return TaaGcn(in_dim=cfg.feature_dim, channels=cfg.agcl_channels,
                  adjacency=adjacency, q_max=cfg.q_max, omega=cfg.omega,
                  K=cfg.num_neighbors, tmm_hidden=cfg.tmm_hidden,
                  tmm_layers=cfg.tmm_layers, alpha=cfg.alpha, psi_max=cfg.psi_max,
                  temporal_aware=cfg.temporal_aware, adaptive_f=cfg.adaptive_f,
                  adaptive_z=cfg.adaptive_z, seed=cfg.seed, dtype=dtype)


# -- optimizer ---------------------------------------------------------------

@dataclass
class Adam:
    params: dict[str, ad.Tensor]
    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p.data))
            self.v.setdefault(name, np.zeros_like(p.data))

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            g = g + self.weight_decay * p.data
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** self.t)
            v_hat = self.v[name] / (1 - self.beta2 ** self.t)
            p.data = p.data - (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_entries(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.asarray(float(self.t), dtype=np.float64)}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_entries(self, entries: dict[str, np.ndarray]) -> None:
        self.t = int(entries["adam.t"])
        for name in self.params:
            self.m[name] = entries[f"adam.m.{name}"].astype(self.m[name].dtype).copy()
            self.v[name] = entries[f"adam.v.{name}"].astype(self.v[name].dtype).copy()


# -- training ----------------------------------------------------------------

def predict(model: TaaGcn, features: np.ndarray) -> tuple[int, np.ndarray]:
    """Eval-mode prediction: dropout off, psi = 1; reported age is the rounded
    expectation of the combined distribution.

    The expectation is the quantity the training loss drives to the label.
    The distribution's argmax is not usable as a prediction here: with an
    expectation-matching loss the optimizer settles on two-endpoint mixtures
    (mass at ages 0 and Q balancing to the label), whose argmax is an endpoint
    for every sample no matter how well the model fits.
    """
    p_spt, p_temp, p_tot = model.forward(features, ground_truth_age=None,
                                         dropout_masks=None)
    dist = p_tot.data
    expectation = float((dist * np.arange(model.q_max + 1)).sum())
    return int(np.clip(round(expectation), 0, model.q_max)), dist


def evaluate_prepared(model: TaaGcn, data: PreparedDataset, cfg: TrainConfig,
                      indices: np.ndarray | None = None) -> dict:
    idx = np.arange(len(data.features)) if indices is None else indices
    if len(idx) == 0:
        raise ValueError("evaluate: empty sample set")
    preds = np.empty(len(idx), dtype=np.int64)
    truth = np.empty(len(idx), dtype=np.int64)
    confusion: dict[str, dict[str, int]] = {}
    for out_i, i in enumerate(idx):
        pred, _ = predict(model, data.features[i])
        preds[out_i] = pred
        truth[out_i] = data.ages[i]
        row = confusion.setdefault(str(int(data.ages[i])), {})
        row[str(pred)] = row.get(str(pred), 0) + 1
    result = {"mae": mean_absolute_error(preds, truth), "num_samples": int(len(idx)),
              "per_age_confusion": confusion}
    if cfg.age_group_bounds:
        result["top1"] = top1_score(preds, truth, cfg.age_group_bounds)
    return result


def save_run_checkpoint(out_dir: str, model: TaaGcn, opt: Adam, cfg: TrainConfig,
                        data: PreparedDataset, name: str = "checkpoint.taag") -> str:
    entries = dict(model.state_dict())
    entries.update(opt.state_entries())
    path = os.path.join(out_dir, name)
    save_checkpoint(path, entries)
    sidecar = {
        "config": json.loads(cfg.to_json()),
        "adjacency_hash": data.adjacency.content_hash(),
        "adjacency": json.loads(data.adjacency.to_json()),
        "selection": data.R,
        "manifest_hash": data.manifest_hash,
    }
    with open(path + ".config.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return path


def load_run_checkpoint(path: str) -> tuple[TaaGcn, TrainConfig, AdjacencySpec, list[int],
                                            dict[str, np.ndarray]]:
    with open(path + ".config.json") as fh:
        sidecar = json.load(fh)
    cfg = TrainConfig.from_json(json.dumps(sidecar["config"]))
    adjacency = AdjacencySpec.from_json(json.dumps(sidecar["adjacency"]))
    if adjacency.content_hash() != sidecar["adjacency_hash"]:
        raise ValueError(f"{path}: adjacency hash mismatch, checkpoint corrupt")
    entries = load_checkpoint(path)
    model = build_model(cfg, adjacency)
    model.load_state_dict({k: v for k, v in entries.items() if not k.startswith("adam.")})
    return model, cfg, adjacency, list(sidecar["selection"]), entries


def train(manifest: Manifest, cfg: TrainConfig, out_dir: str,
          resume_from: str | None = None,
          prepared: PreparedDataset | None = None) -> dict:
    """Train and checkpoint; returns a summary with final metrics and paths."""
    os.makedirs(out_dir, exist_ok=True)
    data = prepared if prepared is not None else prepare_dataset(manifest, cfg)
    model = build_model(cfg, data.adjacency)
    opt = Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    if resume_from is not None:
        model2, cfg2, adj2, R2, entries = load_run_checkpoint(resume_from)
        model.load_state_dict(model2.state_dict())
        opt.load_state_entries(entries)

    rng = np.random.default_rng(cfg.seed)
    log_path = os.path.join(out_dir, "metrics.jsonl")
    log_fh = open(log_path, "w")
    best_val = np.inf
    best_path = None
    dtype = np.float32 if cfg.dtype == "f32" else np.float64
    saved_check = ad.CHECK_FINITE
    ad.CHECK_FINITE = False  # the loop checks the loss value every sample
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(data.train_idx)
            epoch_loss = 0.0
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                opt.zero_grad()
                for i in batch:  # fixed order => deterministic accumulation
                    masks = model.agcn.sample_dropout_masks(cfg.dropout, rng, dtype)
                    age = int(data.ages[i])
                    p_spt, p_temp, _ = model.forward(data.features[i],
                                                     ground_truth_age=age,
                                                     dropout_masks=masks)
                    loss = model.loss(p_spt, p_temp, age)
                    value = loss.item()
                    if not np.isfinite(value):
                        save_run_checkpoint(out_dir, model, opt, cfg, data,
                                            "last-good.taag")
                        raise TrainingDiverged(
                            f"loss became non-finite at epoch {epoch}, sample "
                            f"{data.ids[i]}; last-good checkpoint saved")
                    epoch_loss += value
                    ad.backward(loss, model.parameters().values())
                opt.step()
            epoch_loss /= max(len(order), 1)

            do_eval = (epoch + 1) % max(cfg.eval_every, 1) == 0 or epoch == cfg.epochs - 1
            row = {"epoch": epoch, "split": "train", "mae": None, "loss": epoch_loss}
            if do_eval:
                train_metrics = evaluate_prepared(model, data, cfg, data.train_idx)
                row["mae"] = train_metrics["mae"]
            log_fh.write(json.dumps(row) + "\n")
            if do_eval and len(data.val_idx):
                val_metrics = evaluate_prepared(model, data, cfg, data.val_idx)
                log_fh.write(json.dumps({"epoch": epoch, "split": "val",
                                         "mae": val_metrics["mae"],
                                         "loss": None}) + "\n")
                if val_metrics["mae"] < best_val:
                    best_val = val_metrics["mae"]
                    best_path = save_run_checkpoint(out_dir, model, opt, cfg, data,
                                                    "best.taag")
            log_fh.flush()
            if (do_eval and cfg.stop_at_train_mae > 0.0
                    and row["mae"] <= cfg.stop_at_train_mae):
                logger.info("train MAE %.3f reached target %.3f at epoch %d",
                            row["mae"], cfg.stop_at_train_mae, epoch)
                break
    finally:
        ad.CHECK_FINITE = saved_check
        log_fh.close()

    final_path = save_run_checkpoint(out_dir, model, opt, cfg, data)
    summary = {
        "final_checkpoint": final_path,
        "best_checkpoint": best_path,
        "best_val_mae": None if not np.isfinite(best_val) else best_val,
        "train_mae": evaluate_prepared(model, data, cfg, data.train_idx)["mae"],
        "metrics_log": log_path,
        "selection": data.R,
        "adjacency_hash": data.adjacency.content_hash(),
    }
    return summary


def evaluate(manifest: Manifest, checkpoint_path: str) -> dict:
    """Eval-mode metrics for a stored checkpoint on a manifest."""
    model, cfg, adjacency, R, _ = load_run_checkpoint(checkpoint_path)
    if len(manifest) == 0:
        raise ValueError("evaluate: empty manifest")
    data = prepare_dataset(manifest, cfg, R=R, adjacency=adjacency)
    return evaluate_prepared(model, data, cfg, None)


VARIANTS = [
    ("TAA-GCN", dict(temporal_aware=True, adaptive_f=True, adaptive_z=True)),
    ("AGCN", dict(temporal_aware=False, adaptive_f=True, adaptive_z=True)),
    ("TA-GCN", dict(temporal_aware=True, adaptive_f=False, adaptive_z=False)),
    ("GCN", dict(temporal_aware=False, adaptive_f=False, adaptive_z=False)),
]


def run_ablation(manifest: Manifest, cfg: TrainConfig, out_dir: str,
                 selection_modes: tuple[bool, ...] = (True, False),
                 modalities: tuple[str, ...] = ("all",)) -> list[dict]:
    """Train every variant x selection x modality combination with a shared
    seed and split; returns rows and writes ablation.csv."""
    rows = []
    for use_sel in selection_modes:
        for modality in modalities:
            for name, flags in VARIANTS:
                run_cfg = cfg.replace(use_keypoint_selection=use_sel,
                                      modality=modality, **flags)
                run_dir = os.path.join(
                    out_dir, f"{name}_{'sel' if use_sel else 'nosel'}_{modality}")
                summary = train(manifest, run_cfg, run_dir)
                row = {"variant": name, "selection": "on" if use_sel else "off",
                       "modality": modality, "mae": summary["train_mae"],
                       "top1": ""}
                eval_metrics = evaluate(manifest, summary["final_checkpoint"])
                row["mae"] = eval_metrics["mae"]
                if "top1" in eval_metrics:
                    row["top1"] = eval_metrics["top1"]
                row["train_mae"] = summary["train_mae"]
                rows.append(row)
                logger.info("ablation %s: mae=%.3f", run_dir, row["mae"])
    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w") as fh:
        fh.write("variant,selection,modality,mae,top1\n")
        for r in rows:
            fh.write(f"{r['variant']},{r['selection']},{r['modality']},"
                     f"{r['mae']},{r['top1']}\n")
    return rows
