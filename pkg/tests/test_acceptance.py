"""Acceptance gate: one test per release criterion, one pass/fail line each.

Each test prints a single `PASS`/`FAIL` line with the measured quantity and
its bound, then asserts.  Thresholds are frozen; do not relax them here.
The empirical training criteria (overfit, ablation) use recipes that were
calibrated once and are regression-tested as-is.
"""

import time

import numpy as np
import pytest

from taagcn import autodiff as ad
from taagcn.data import (DRIFT_INDICES, JITTER_INDICES, SynthSpec,
                         _skeleton_template, load_manifest, synth_generate)
from taagcn.gradcheck import build_toy_model, run_toy_gradcheck
from taagcn.graphs import AdjacencySpec
from taagcn.checkpoint import load_checkpoint, save_checkpoint
from taagcn.config import TrainConfig
from taagcn.keypoints import (NUM_FACIAL, NUM_JOINTS, _mirror_axis,
                              age_variance, expression_variance, generate_sc,
                              neighbor_sets)
from taagcn.network import TaaGcn, fc_f, phi
from taagcn.train import (mean_absolute_error, run_ablation, top1_score, train)


def report(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    print(line, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def toy_set(tmp_path_factory):
    """The 200-sample Q=10 synthetic set used by the empirical criteria."""
    out = str(tmp_path_factory.mktemp("toy-set"))
    return synth_generate(SynthSpec(patch_size=8), seed=0, out_dir=out)


def test_gradient_fidelity():
    """End-to-end grad check of the full loss, every parameter group, toy
    graph (J=39, Q=10, f64, dropout frozen): max rel err < 1e-5 in < 60 s."""
    t0 = time.time()
    errors = run_toy_gradcheck(seed=7)
    elapsed = time.time() - t0
    worst = max(errors.values())
    model = build_toy_model(seed=7)
    covered = set(errors) == set(model.parameters())
    report("gradient-fidelity",
           worst < 1e-5 and elapsed < 60.0 and covered,
           f"max rel err {worst:.3e} (< 1e-05), {elapsed:.1f} s (< 60), "
           f"{len(errors)} parameter groups")


def test_phi_limit_contract():
    """phi -> w_t as psi -> inf (x > 0); phi -> w_t/(1+alpha) as psi -> 0;
    x = 0 gives exactly w_t/(1+alpha) in f64."""
    w_t, alpha = 1.7, 2.0
    hi = abs(phi(0.1, w_t, psi=1e6, alpha=alpha) - w_t)
    lo = abs(phi(0.1, w_t, psi=1e-6, alpha=alpha) - w_t / (1 + alpha))
    at0 = phi(0.0, w_t, psi=3.7, alpha=alpha)
    exact = at0 == w_t / (1 + alpha)
    report("phi-limit-contract",
           hi < 1e-6 and lo < 1e-6 and exact,
           f"|phi-w_t| {hi:.1e} (< 1e-06), |phi-w_t/(1+a)| {lo:.1e} (< 1e-06), "
           f"x=0 exact: {exact}")


def test_fcf_monotonicity():
    """fc_f strictly increasing in u over a 1000-point sweep of [1e-6, 10]
    for every gamma in 1..5; zero violations."""
    u = np.linspace(1e-6, 10.0, 1000)
    violations = 0
    for gamma in range(1, 6):
        vals = np.array([fc_f(float(ui), 1.0, w_f=1.3, gamma=gamma) for ui in u])
        violations += int(np.sum(np.diff(vals) <= 0.0))
    report("fcf-monotonicity", violations == 0,
           f"{violations} violations over 5 x 1000-point sweeps (= 0)")


def test_probability_laws():
    """P_spt, P_temp, P_tot sum to 1 +- 1e-9 and are positive across 10,000
    random inputs (f64 model)."""
    def ring(n):
        a = np.zeros((n, n), dtype=np.uint8)
        for i in range(n):
            a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1
        return a

    adj = AdjacencySpec(a_f=ring(5), a_z=ring(5), top_n=1)
    model = TaaGcn(in_dim=4, channels=(4, 5), adjacency=adj, q_max=5,
                   omega=0.65, tmm_hidden=6, tmm_layers=1, seed=0,
                   dtype=np.float64)
    rng = np.random.default_rng(0)
    worst_sum = 0.0
    worst_min = np.inf
    for _ in range(10_000):
        feats = rng.normal(0.0, 3.0, size=(model.J, 4))
        for p in model.forward(feats):
            worst_sum = max(worst_sum, abs(float(p.data.sum()) - 1.0))
            worst_min = min(worst_min, float(p.data.min()))
    report("probability-laws",
           worst_sum < 1e-9 and worst_min > 0.0,
           f"max |sum-1| {worst_sum:.1e} (< 1e-09), min prob {worst_min:.1e} (> 0) "
           f"over 10000 inputs x 3 distributions")


def test_selection_oracle(toy_set):
    """On the jitter-vs-drift synthetic set (drift >= 10x jitter, eta=0.5),
    every drift keypoint outranks every jitter keypoint, and the selector
    matches a brute-force recomputation of the blended score."""
    samples = [toy_set.load_sample(i) for i in range(len(toy_set))]
    beta = neighbor_sets(samples, K=5)
    v_e, _ = expression_variance(samples, beta)
    v_a = age_variance(samples)

    # independent recomputation of the blended score and its ranking
    def minmax(x):
        return (x - np.nanmin(x)) / (np.nanmax(x) - np.nanmin(x))

    eta = 0.5
    score = eta * minmax(v_a) + (1 - eta) * (1 - minmax(v_e))
    order = sorted(range(NUM_FACIAL), key=lambda k: (-score[k], k))
    brute_top = sorted(order[:19])

    from taagcn.keypoints import select_keypoints
    R, v_t = select_keypoints(v_e, v_a, eta=eta, n_select=19)

    drift_floor = min(v_t[k] for k in DRIFT_INDICES)
    jitter_ceil = max(v_t[k] for k in JITTER_INDICES)
    separated = drift_floor > jitter_ceil
    report("selection-oracle",
           R == brute_top and separated,
           f"selector == brute-force top-19: {R == brute_top}, "
           f"min drift score {drift_floor:.3f} > max jitter score {jitter_ceil:.3f}")


def test_interpolation_totality():
    """All 2^5 dropout patterns of one arm chain plus 500 random masks give
    exactly 20 SC points with branch-consistent provenance; mirrored slots
    reflect exactly about the body axis."""
    base = _skeleton_template(256, 256)
    chain = [2, 3, 4, 6, 7]
    mirror_partner = {2: 5, 5: 2, 3: 6, 6: 3, 4: 7, 7: 4, 8: 11, 11: 8}
    slot_joint = {0: 0, 1: 1, 2: 2, 3: 5, 4: 3, 5: 6, 6: 4, 7: 7, 8: 8, 9: 11}
    masks = [[j for b, j in enumerate(chain) if m & (1 << b)] for m in range(32)]
    rng = np.random.default_rng(0)
    for _ in range(500):
        masks.append(list(np.flatnonzero(rng.random(NUM_JOINTS) < 0.3)))

    checked_mirrors = 0
    for drop in masks:
        skel = base.copy()
        for j in drop:
            skel[j] = np.nan
        sc = generate_sc(skel)
        assert sc.points.shape == (20, 2) and len(sc.provenance) == 20
        for slot, tag in enumerate(sc.provenance):
            assert tag in ("detected", "mirrored", "zero",
                           "intra-level-interp", "inter-level-interp")
            if tag == "zero":
                np.testing.assert_array_equal(sc.points[slot], (0.0, 0.0))
            elif tag == "detected":
                np.testing.assert_array_equal(sc.points[slot], skel[slot_joint[slot]])
            elif tag == "mirrored":
                partner = mirror_partner[slot_joint[slot]]
                axis = _mirror_axis(skel)
                assert axis is not None
                expect = (2.0 * axis - skel[partner, 0], skel[partner, 1])
                np.testing.assert_array_equal(sc.points[slot], expect)
                checked_mirrors += 1
    report("interpolation-totality", checked_mirrors > 0,
           f"532 masks, all 20/20 slots with consistent tags, "
           f"{checked_mirrors} mirror slots reflected exactly")


def test_overfit_capability(toy_set, tmp_path):
    """TAA-GCN reaches train MAE < 0.5 on the 200-sample Q=10 set within 300
    epochs in under 10 minutes (frozen recipe)."""
    cfg = TrainConfig(
        q_max=9, agcl_channels=(16, 32, 64), tmm_layers=2, tmm_hidden=16,
        learning_rate=1e-4, epochs=300, batch_size=4, dropout=0.0,
        weight_decay=0.0, val_fraction=0.0, seed=0, patch_size=8,
        stop_at_train_mae=0.45, eval_every=5,
    )
    t0 = time.time()
    summary = train(toy_set, cfg, str(tmp_path / "overfit"))
    elapsed = time.time() - t0
    mae = summary["train_mae"]
    report("overfit-capability",
           mae < 0.5 and elapsed < 600.0,
           f"train MAE {mae} (< 0.5) in {elapsed:.0f} s (< 600)")


def test_ablation_contract(tmp_path):
    """`ablate` emits all four variants x selection on/off; TAA-GCN train MAE
    <= GCN train MAE in each selection mode (capacity dominance; all
    converging variants train to the same stop target)."""
    data_dir = str(tmp_path / "data")
    manifest = synth_generate(SynthSpec(q_toy=5, samples_per_age=10,
                                        patch_size=8), seed=0, out_dir=data_dir)
    cfg = TrainConfig(
        q_max=4, agcl_channels=(16, 32, 64), tmm_layers=2, tmm_hidden=16,
        learning_rate=1e-4, epochs=400, batch_size=4, dropout=0.0,
        weight_decay=0.0, val_fraction=0.0, seed=0, patch_size=8,
        eval_every=25, top_n=3, stop_at_train_mae=0.05,
    )
    rows = run_ablation(manifest, cfg, str(tmp_path / "ablate"))
    cells = {(r["variant"], r["selection"]): r["train_mae"] for r in rows}
    grid_ok = len(rows) == 8 and set(cells) == {
        (v, s) for v in ("GCN", "TA-GCN", "AGCN", "TAA-GCN") for s in ("on", "off")}
    dom_on = cells[("TAA-GCN", "on")] <= cells[("GCN", "on")]
    dom_off = cells[("TAA-GCN", "off")] <= cells[("GCN", "off")]
    report("ablation-contract",
           grid_ok and dom_on and dom_off,
           f"8/8 rows; TAA-GCN vs GCN train MAE: "
           f"sel on {cells[('TAA-GCN', 'on')]} <= {cells[('GCN', 'on')]}, "
           f"sel off {cells[('TAA-GCN', 'off')]} <= {cells[('GCN', 'off')]}")


def test_determinism_and_roundtrips(tmp_path):
    """Fixed (seed, config, manifest) reproduces metrics bit-exactly;
    checkpoint and manifest round-trips are bit-exact."""
    data_dir = str(tmp_path / "data")
    manifest = synth_generate(SynthSpec(q_toy=3, samples_per_age=4,
                                        patch_size=4), seed=0, out_dir=data_dir)
    cfg = TrainConfig(q_max=2, agcl_channels=(4, 4), tmm_layers=1, tmm_hidden=4,
                      patch_size=4, epochs=2, batch_size=4, learning_rate=1e-3,
                      dropout=0.1, val_fraction=0.25, seed=0, top_n=3)
    s1 = train(manifest, cfg, str(tmp_path / "a"))
    s2 = train(manifest, cfg, str(tmp_path / "b"))
    metrics_equal = (open(s1["metrics_log"]).read()
                     == open(s2["metrics_log"]).read())

    e1 = load_checkpoint(s1["final_checkpoint"])
    save_checkpoint(str(tmp_path / "copy.taag"), e1)
    e2 = load_checkpoint(str(tmp_path / "copy.taag"))
    ckpt_equal = (set(e1) == set(e2)
                  and all(np.array_equal(e1[k], e2[k])
                          and e1[k].dtype == e2[k].dtype for k in e1))

    again = synth_generate(SynthSpec(q_toy=3, samples_per_age=4, patch_size=4),
                           seed=0, out_dir=str(tmp_path / "data2"))
    manifest_equal = (
        open(manifest.path).read() == open(again.path).read()
        and open(manifest.patches_path, "rb").read()
        == open(again.patches_path, "rb").read()
        and load_manifest(manifest.path).content_hash() == manifest.content_hash())

    report("determinism-roundtrips",
           metrics_equal and ckpt_equal and manifest_equal,
           f"metrics bit-exact: {metrics_equal}, checkpoint round-trip: "
           f"{ckpt_equal}, manifest round-trip: {manifest_equal}")


def test_metric_oracle():
    """MAE and top-1 match direct-formula recomputation within 1e-12 on 1000
    random prediction sets."""
    rng = np.random.default_rng(42)
    bounds = [5, 18, 40, 60]

    def group(age):
        return sum(age >= b for b in bounds)

    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        pred = rng.integers(0, 100, n)
        truth = rng.integers(0, 100, n)
        mae_direct = sum(abs(int(p) - int(t)) for p, t in zip(pred, truth)) / n
        top1_direct = sum(group(int(p)) == group(int(t))
                          for p, t in zip(pred, truth)) / n
        worst = max(worst,
                    abs(mean_absolute_error(pred, truth) - mae_direct),
                    abs(top1_score(pred, truth, bounds) - top1_direct))
    report("metric-oracle", worst < 1e-12,
           f"max |impl - direct| {worst:.1e} (< 1e-12) over 1000 sets")
