"""End-to-end gradient verification of the full loss on a toy graph.

Builds a small f64 model over the real node count (J = 39) with reduced
channel widths so central finite differences over every parameter entry stay
fast, then compares them against the analytic backward pass.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .graphs import AdjacencySpec
from .network import TaaGcn

TOY_Q = 10
TOY_IN_DIM = 6
# Two graph layers instead of the production six: the positive features and
# mean aggregation drive the node rows toward a common direction layer by
# layer, so edge perturbations in the early layers barely move the output of
# a deep stack and their true gradients fall under the finite-difference
# noise floor where no implementation could be verified.
TOY_CHANNELS = (6, 7)
TOY_TMM_HIDDEN = 8
# Two recurrent layers instead of the production five: each extra layer
# multiplies another logistic derivative into the chain, and below ~1e-7 the
# true gradients of the early maps drop under the finite-difference noise
# floor where no implementation could be verified.
TOY_TMM_LAYERS = 2
# A moderate sharpening clamp keeps the activation smooth at the scale of the
# finite-difference step; the production clamp of 1e6 makes the matched-age
# row a near step function that central differences cannot resolve.
TOY_PSI_MAX = 2.0


def toy_adjacency(n_facial: int = 19, n_sc: int = 20, top_n: int = 2,
                  seed: int = 0) -> AdjacencySpec:
    """Random symmetric block adjacencies with the production block sizes."""
    rng = np.random.default_rng(seed)

    def block(size: int) -> np.ndarray:
        a = np.zeros((size, size), dtype=np.uint8)
        for i in range(size):
            others = np.delete(np.arange(size), i)
            for j in rng.choice(others, size=top_n, replace=False):
                a[i, j] = a[j, i] = 1
        return a

    return AdjacencySpec(a_f=block(n_facial), a_z=block(n_sc), top_n=top_n)


def build_toy_model(seed: int = 0, temporal_aware: bool = True) -> TaaGcn:
    adjacency = toy_adjacency(seed=seed)
    return TaaGcn(in_dim=TOY_IN_DIM, channels=TOY_CHANNELS, adjacency=adjacency,
                  q_max=TOY_Q, omega=0.65, K=5, tmm_hidden=TOY_TMM_HIDDEN,
                  tmm_layers=TOY_TMM_LAYERS, alpha=2.0, psi_max=TOY_PSI_MAX,
                  temporal_aware=temporal_aware, seed=seed, dtype=np.float64)


def run_toy_gradcheck(seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    """Per-parameter max relative error of the full-loss gradient on a toy
    graph (dropout frozen off, f64)."""
    model = build_toy_model(seed=seed)
    rng = np.random.default_rng(seed + 1)
    for layer in model.agcn.layers:
        layer.freeze_ranks = True
        # Evaluate at a generic point rather than the all-ones init. The edge
        # gate w_f * u^gamma / (u^gamma + 1) saturates for u far from 1, so
        # the edge values are drawn to keep u = cs * e near the unit slope
        # region where the edge gradients are large enough to verify.
        layer.edge_f.data = rng.uniform(1.05, 1.35, layer.edge_f.data.shape)
        layer.edge_z.data = rng.uniform(0.5, 2.0, layer.edge_z.data.shape)
    # nonnegative inputs, matching the real node features (normalized pixels
    # and coordinates); zero-mean inputs would leave most facial edges
    # anticorrelated and collapse the graph into identical bias-only rows
    features = rng.uniform(0.0, 1.0, (model.J, TOY_IN_DIM))

    def loss_at(q: int) -> ad.Tensor:
        p_spt, p_temp, _ = model.forward(features, ground_truth_age=q,
                                         dropout_masks=None)
        return model.loss(p_spt, p_temp, q)

    # take whichever extreme age gives the larger loss: a near-zero loss has
    # near-zero gradients everywhere, which the finite differences cannot
    # distinguish from rounding noise
    q_g = max((0, TOY_Q), key=lambda q: loss_at(q).item())

    def f() -> ad.Tensor:
        return loss_at(q_g)

    return ad.grad_check(f, model.parameters(), eps=eps)
