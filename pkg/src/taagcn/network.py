"""The temporally-aware adaptive GCN: graph layers with correlation-driven
edge reweighting, the age-recurrent memory module, and the two prediction
heads with their combined loss.

Edge reweighting is differentiable end to end: cosine similarities are
recomputed from the current layer input each forward pass and gradients flow
through them, so finite differences and the analytic backward agree.  The
facial block uses a logistic magnifier whose exponent is the correlation rank
of the edge inside its neighbourhood; the SC block uses a plain product.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import AdjacencySpec

FC_F_EPS = 1e-6


class ContractError(ValueError):
    pass


# -- spec-level scalar helpers (also used directly by tests) -----------------

def cosine_sim(v_m: np.ndarray, v_n: np.ndarray) -> float:
    """Cosine similarity; defined as 0 when either vector is zero (zero-filled
    keypoints occur by design)."""
    nm, nn = np.linalg.norm(v_m), np.linalg.norm(v_n)
    if nm == 0.0 or nn == 0.0:
        return 0.0
    return float(np.dot(v_m, v_n) / (nm * nn))


def fc_sc(edge, c_s, w_z):
    """SC edge weighting: W^Z * C_S * e."""
    return edge * c_s * w_z


def fc_f(edge, c_s, w_f, gamma: int, K: int = 5):
    """Facial edge weighting: logistic magnification W^F / (1 + u^-gamma)
    with u = C_S * e clamped to >= 1e-6."""
    if gamma < 1 or gamma > K:
        raise ContractError(f"gamma must be in [1, {K}], got {gamma}")
    u = max(edge * c_s, FC_F_EPS)
    # algebraically w_f / (1 + u^-gamma); this form avoids the huge u^-gamma
    # intermediate for small u
    return w_f * u ** gamma / (u ** gamma + 1.0)


def phi(x, w_t, psi: float, alpha: float):
    """Adaptive logistic activation w_t / (1 + alpha * e^(-psi * x)).

    Works on floats and Tensors; the exponent is clamped inside `exp`.
    """
    if isinstance(x, Tensor) or isinstance(w_t, Tensor):
        xt = x if isinstance(x, Tensor) else Tensor(x)
        return w_t / (ad.exp(xt * (-psi)) * alpha + 1.0)
    z = float(np.clip(-psi * x, -ad.EXP_CLAMP, ad.EXP_CLAMP))
    return w_t / (1.0 + alpha * np.exp(z))


def psi_for_age(q_t: int, q_g: int, psi_max: float = 1e6) -> float:
    """Training-time sharpening weight 1/|q_t - q_g|, clamped at psi_max."""
    diff = abs(q_t - q_g)
    if diff == 0:
        return psi_max
    return min(1.0 / diff, psi_max)


# -- parameter initialization ------------------------------------------------

def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _directed_pairs(adj: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Undirected support as (rows_u, cols_u) with i<j, plus the directed
    (rows, cols) covering both orientations in a fixed order."""
    iu, ju = np.nonzero(np.triu(adj, 1))
    rows = np.concatenate([iu, ju])
    cols = np.concatenate([ju, iu])
    return iu, ju, rows, cols


class AgclLayer:
    """One adaptive graph convolution: reweight edges per block, aggregate
    over neighbourhoods, then an affine channel projection and ReLU."""

    def __init__(self, c_in: int, c_out: int, adjacency: AdjacencySpec,
                 n_facial: int, K: int, adaptive_f: bool, adaptive_z: bool,
                 rng: np.random.Generator, dtype=np.float32):
        self.c_in, self.c_out = c_in, c_out
        self.n_facial = n_facial
        self.K = K
        self.adaptive_f = adaptive_f
        self.adaptive_z = adaptive_z
        self.J = adjacency.a_f.shape[0] + adjacency.a_z.shape[0]

        self._fu_i, self._fu_j, fr, fc = _directed_pairs(adjacency.a_f)
        self._f_rows, self._f_cols = fr, fc
        zu_i, zu_j, zr, zc = _directed_pairs(adjacency.a_z)
        self._zu_i, self._zu_j = zu_i, zu_j
        self._z_rows, self._z_cols = zr + n_facial, zc + n_facial
        # static per-neighbourhood grouping for the gamma ranks: edges sorted
        # by row, with group start offsets repeated per member
        # mean aggregation: dividing by the static neighbour count keeps the
        # activation scale flat across the stacked layers
        deg = np.bincount(np.concatenate([self._f_rows, self._z_rows]),
                          minlength=self.J).astype(np.float64)
        self._inv_degree = (1.0 / np.maximum(deg, 1.0))[:, None]

        if len(self._f_rows):
            sorted_rows = np.sort(self._f_rows)
            starts = np.flatnonzero(np.concatenate(([True], np.diff(sorted_rows) > 0)))
            counts = np.diff(np.concatenate((starts, [len(sorted_rows)])))
            self._f_group_offset = np.repeat(starts, counts)
        else:
            self._f_group_offset = np.zeros(0, dtype=np.int64)

        # When set, the gamma ranks computed on the next forward pass are
        # cached and reused; rank assignment is piecewise constant with zero
        # gradient, so gradient checks freeze it the same way dropout is frozen
        self.freeze_ranks = False
        self._gamma_cache: np.ndarray | None = None

        self.theta = Tensor(_uniform(rng, (c_in, c_out), c_in, dtype), requires_grad=True)
        # biases drawn like the weights (not zeros): nodes whose whole
        # neighbourhood is ReLU-dead aggregate to exactly zero, and a zero
        # bias would park their pre-activation right on the ReLU kink
        self.bias = Tensor(_uniform(rng, (c_out,), c_in, dtype), requires_grad=True)
        self.w_f = Tensor(np.asarray(1.0, dtype=dtype), requires_grad=True)
        self.w_z = Tensor(np.asarray(1.0, dtype=dtype), requires_grad=True)
        self.edge_f = Tensor(np.ones(len(self._fu_i), dtype=dtype), requires_grad=True)
        self.edge_z = Tensor(np.ones(len(self._zu_i), dtype=dtype), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {"theta": self.theta, "bias": self.bias, "w_f": self.w_f,
                "w_z": self.w_z, "edge_f": self.edge_f, "edge_z": self.edge_z}

    def _gamma_ranks(self, cs_values: np.ndarray) -> np.ndarray:
        """Correlation-rank exponents per directed facial edge: within each
        neighbourhood the most correlated neighbour gets gamma = K, the next
        K-1, ..., floored at 1.  Piecewise constant in the inputs."""
        perm = np.lexsort((-cs_values, self._f_rows))
        ranks = np.empty(len(self._f_rows), dtype=np.int64)
        ranks[perm] = np.arange(len(self._f_rows)) - self._f_group_offset
        return np.maximum(self.K - ranks, 1).astype(np.float64)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape != (self.J, self.c_in):
            raise ad.ShapeMismatchError(
                f"AGCL input shape {x.shape}, want ({self.J}, {self.c_in})")
        # cosine similarity of current node vectors; zero rows stay zero
        sq = ad.sum_(x * x, axis=1, keepdims=True)
        xn = x / ad.power(sq + 1e-12, 0.5)
        sim = xn @ ad.transpose(xn)

        values, rows, cols = [], [], []
        if len(self._f_rows):
            if self.adaptive_f:
                cs = ad.gather_pairs(sim, self._f_rows, self._f_cols)
                e = ad.concatenate([self.edge_f, self.edge_f])
                u = ad.maximum(cs * e, FC_F_EPS)
                if self.freeze_ranks:
                    if self._gamma_cache is None:
                        self._gamma_cache = self._gamma_ranks(cs.data)
                    gamma = self._gamma_cache
                else:
                    self._gamma_cache = None
                    gamma = self._gamma_ranks(cs.data)
                ug = ad.power(u, gamma)
                w = ug / (ug + 1.0) * self.w_f
            else:
                w = Tensor(np.ones(len(self._f_rows), dtype=x.dtype))
            values.append(w)
            rows.append(self._f_rows)
            cols.append(self._f_cols)
        if len(self._z_rows):
            if self.adaptive_z:
                cs = ad.gather_pairs(sim, self._z_rows, self._z_cols)
                e = ad.concatenate([self.edge_z, self.edge_z])
                w = (cs * e) * self.w_z
            else:
                w = Tensor(np.ones(len(self._z_rows), dtype=x.dtype))
            values.append(w)
            rows.append(self._z_rows)
            cols.append(self._z_cols)

        weight_mat = ad.scatter_pairs(ad.concatenate(values),
                                      np.concatenate(rows), np.concatenate(cols),
                                      (self.J, self.J))
        aggregated = (weight_mat @ x) * Tensor(self._inv_degree.astype(x.dtype))
        return ad.relu(aggregated @ self.theta + self.bias)


class Agcn:
    """Stack of AGCLs with dropout between layers; outputs the spatial
    feature map (J, C_last)."""

    def __init__(self, in_dim: int, channels: tuple[int, ...], adjacency: AdjacencySpec,
                 n_facial: int, K: int, adaptive_f: bool, adaptive_z: bool,
                 rng: np.random.Generator, dtype=np.float32):
        self.layers: list[AgclLayer] = []
        c_prev = in_dim
        for c in channels:
            self.layers.append(AgclLayer(c_prev, c, adjacency, n_facial, K,
                                         adaptive_f, adaptive_z, rng, dtype))
            c_prev = c
        self.out_dim = c_prev

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.parameters().items():
                out[f"agcl.{i}.{name}"] = p
        return out

    def sample_dropout_masks(self, rate: float, rng: np.random.Generator,
                             dtype=np.float32) -> list[np.ndarray] | None:
        """Pre-sample scaled masks for the gaps between layers (none after the
        last layer); frozen masks keep forward passes deterministic."""
        if rate <= 0.0:
            return None
        masks = []
        J = self.layers[0].J
        for layer in self.layers[:-1]:
            keep = (rng.random((J, layer.c_out)) >= rate).astype(dtype)
            masks.append(keep / (1.0 - rate))
        return masks

    def forward(self, x: Tensor, dropout_masks: list[np.ndarray] | None = None) -> Tensor:
        h = x
        for i, layer in enumerate(self.layers):
            h = layer.forward(h)
            if dropout_masks is not None and i < len(self.layers) - 1:
                h = ad.dropout_apply(h, dropout_masks[i])
        return h


class Tmm:
    """Recurrent pass over age-indexed feature rows (t = 0..Q), Elman-style
    stacked cells whose activation is the adaptive logistic `phi` with a
    per-age trainable amplitude w_t."""

    def __init__(self, J: int, q_max: int, hidden: int, num_layers: int,
                 alpha: float, psi_max: float, rng: np.random.Generator,
                 dtype=np.float32):
        self.J = J
        self.q_max = q_max
        self.hidden = hidden
        self.alpha = alpha
        self.psi_max = psi_max
        self.dtype = dtype
        self.in_maps, self.rec_maps, self.biases = [], [], []
        in_dim = J
        for _ in range(num_layers):
            self.in_maps.append(Tensor(_uniform(rng, (in_dim, hidden), in_dim, dtype),
                                       requires_grad=True))
            self.rec_maps.append(Tensor(_uniform(rng, (hidden, hidden), hidden, dtype),
                                        requires_grad=True))
            self.biases.append(Tensor(_uniform(rng, (hidden,), in_dim, dtype),
                                      requires_grad=True))
            in_dim = hidden
        self.out_map = Tensor(_uniform(rng, (hidden, J), hidden, dtype), requires_grad=True)
        self.out_bias = Tensor(_uniform(rng, (J,), hidden, dtype), requires_grad=True)
        self.w_age = Tensor(np.ones(q_max + 1, dtype=dtype), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for l in range(len(self.in_maps)):
            out[f"tmm.{l}.in_map"] = self.in_maps[l]
            out[f"tmm.{l}.rec_map"] = self.rec_maps[l]
            out[f"tmm.{l}.bias"] = self.biases[l]
        out["tmm.out_map"] = self.out_map
        out["tmm.out_bias"] = self.out_bias
        out["tmm.w_age"] = self.w_age
        return out

    def forward(self, x_ages: Tensor, ground_truth_age: int | None) -> Tensor:
        """(Q+1, J) in, (Q+1, J) out.  With a ground-truth age the per-row
        sharpening psi_t = 1/|t - q_g| is applied; at eval psi_t = 1."""
        if x_ages.shape != (self.q_max + 1, self.J):
            raise ad.ShapeMismatchError(
                f"TMM input shape {x_ages.shape}, want ({self.q_max + 1}, {self.J})")
        if ground_truth_age is not None and not 0 <= ground_truth_age <= self.q_max:
            raise ValueError(f"age label {ground_truth_age} outside [0, {self.q_max}]")
        num_layers = len(self.in_maps)
        zeros = Tensor(np.zeros(self.hidden, dtype=self.dtype))
        h_prev = [zeros] * num_layers
        rows = []
        for t in range(self.q_max + 1):
            psi = 1.0 if ground_truth_age is None else psi_for_age(t, ground_truth_age,
                                                                   self.psi_max)
            w_t = ad.slice_(self.w_age, t)
            h = ad.slice_(x_ages, t)
            for l in range(num_layers):
                pre = h @ self.in_maps[l] + h_prev[l] @ self.rec_maps[l] + self.biases[l]
                h = phi(pre, w_t, psi, self.alpha)
                h_prev[l] = h
            rows.append(h @ self.out_map + self.out_bias)
        return ad.stack(rows, axis=0)


class TaaGcn:
    """Full model: AGCN trunk, spatial head, and (optionally) the TMM-based
    temporal head, combined by the mixing weight omega."""

    def __init__(self, in_dim: int, channels: tuple[int, ...], adjacency: AdjacencySpec,
                 q_max: int, omega: float, K: int = 5, tmm_hidden: int = 64,
                 tmm_layers: int = 5, alpha: float = 2.0, psi_max: float = 1e6,
                 temporal_aware: bool = True, adaptive_f: bool = True,
                 adaptive_z: bool = True, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.q_max = q_max
        self.omega = omega
        self.temporal_aware = temporal_aware
        self.dtype = dtype
        n_facial = adjacency.a_f.shape[0]
        self.J = n_facial + adjacency.a_z.shape[0]
        self.n_facial = n_facial
        self.agcn = Agcn(in_dim, channels, adjacency, n_facial, K,
                         adaptive_f, adaptive_z, rng, dtype)
        c = self.agcn.out_dim
        self.spt_proj = Tensor(_uniform(rng, (c, q_max + 1), c, dtype), requires_grad=True)
        self.spt_bias = Tensor(_uniform(rng, (q_max + 1,), c, dtype), requires_grad=True)
        if temporal_aware:
            self.tmm = Tmm(self.J, q_max, tmm_hidden, tmm_layers, alpha, psi_max, rng, dtype)
            self.pre_tmm_proj = Tensor(_uniform(rng, (c, q_max + 1), c, dtype),
                                       requires_grad=True)
            self.pre_tmm_bias = Tensor(_uniform(rng, (q_max + 1,), c, dtype),
                                       requires_grad=True)
            self.temp_proj = Tensor(_uniform(rng, (q_max + 1, q_max + 1), q_max + 1, dtype),
                                    requires_grad=True)
            self.temp_bias = Tensor(_uniform(rng, (q_max + 1,), q_max + 1, dtype),
                                    requires_grad=True)
        self._ages = np.arange(q_max + 1, dtype=np.float64)

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.agcn.parameters())
        out["head.spt_proj"] = self.spt_proj
        out["head.spt_bias"] = self.spt_bias
        if self.temporal_aware:
            out.update(self.tmm.parameters())
            out["head.pre_tmm_proj"] = self.pre_tmm_proj
            out["head.pre_tmm_bias"] = self.pre_tmm_bias
            out["head.temp_proj"] = self.temp_proj
            out["head.temp_bias"] = self.temp_bias
        return out

    def spatial_head(self, l0: Tensor) -> Tensor:
        pooled = ad.avg_pool_nodes(l0, axis=0)
        return ad.softmax(pooled @ self.spt_proj + self.spt_bias)

    def temporal_head(self, l0: Tensor, ground_truth_age: int | None) -> Tensor:
        x_ages = ad.transpose(l0 @ self.pre_tmm_proj + self.pre_tmm_bias)
        l1 = self.tmm.forward(x_ages, ground_truth_age)
        pooled = ad.mean(l1, axis=1)
        return ad.softmax(pooled @ self.temp_proj + self.temp_bias)

    def forward(self, features: np.ndarray, ground_truth_age: int | None = None,
                dropout_masks: list[np.ndarray] | None = None
                ) -> tuple[Tensor, Tensor | None, Tensor]:
        """Returns (P_spt, P_temp or None, P_tot)."""
        x = Tensor(np.ascontiguousarray(features, dtype=self.dtype))
        l0 = self.agcn.forward(x, dropout_masks)
        p_spt = self.spatial_head(l0)
        if not self.temporal_aware:
            return p_spt, None, p_spt
        p_temp = self.temporal_head(l0, ground_truth_age)
        p_tot = p_spt * self.omega + p_temp * (1.0 - self.omega)
        return p_spt, p_temp, p_tot

    def expected_age(self, p: Tensor) -> Tensor:
        """Probability-weighted age expectation (differentiable soft argmax)."""
        return ad.sum_(p * Tensor(self._ages.astype(p.dtype)))

    def loss(self, p_spt: Tensor, p_temp: Tensor | None, q_g: int) -> Tensor:
        if not 0 <= q_g <= self.q_max:
            raise ValueError(f"age label {q_g} outside [0, {self.q_max}]")
        err_s = self.expected_age(p_spt) - float(q_g)
        if p_temp is None:
            return err_s * err_s
        err_t = self.expected_age(p_temp) - float(q_g)
        return (err_s * err_s) * self.omega + (err_t * err_t) * (1.0 - self.omega)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ad.ShapeMismatchError(
                    f"parameter {name}: checkpoint shape {arr.shape} vs model {p.data.shape}")
            p.data = arr.copy()
