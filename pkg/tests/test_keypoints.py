"""Keypoint selection statistics and SC generation, checked against small
hand-computable cases and brute-force oracles."""

import json

import numpy as np
import pytest

from taagcn.keypoints import (KeypointSample, NUM_FACIAL, NUM_JOINTS,
                              ScKeypointSet, SelectionError, SkeletonHierarchy,
                              age_variance, compute_selection, default_hierarchy,
                              expression_variance, generate_sc, load_selection,
                              neighbor_sets, save_selection, select_keypoints)


def make_sample(idx: int, facial: np.ndarray, skel: np.ndarray | None = None,
                age: int = 0, size=(100, 100)) -> KeypointSample:
    if skel is None:
        skel = np.zeros((NUM_JOINTS, 2)) + 50.0
    return KeypointSample(id=f"s{idx}", age=age, image_size=size,
                          facial_keypoints=facial, skeleton_joints=skel)


def grid_facial(jitter: np.ndarray | None = None) -> np.ndarray:
    pts = np.zeros((NUM_FACIAL, 2))
    for k in range(NUM_FACIAL):
        pts[k] = (10 + 1.0 * (k % 10), 10 + 1.0 * (k // 10))
    if jitter is not None:
        pts = pts + jitter
    return pts


class TestSampleContracts:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            KeypointSample(id="x", age=1, image_size=(10, 10),
                           facial_keypoints=np.zeros((5, 2)),
                           skeleton_joints=np.zeros((NUM_JOINTS, 2)))

    def test_diagonal(self):
        s = make_sample(0, grid_facial(), size=(3, 4))
        assert s.diagonal == 5.0


class TestNeighborSets:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        samples = [make_sample(i, grid_facial(rng.normal(0, 0.01, (NUM_FACIAL, 2))))
                   for i in range(4)]
        K = 5
        beta = neighbor_sets(samples, K)
        # brute force: mean distance over samples, ties to lower index
        pts = np.stack([s.facial_keypoints for s in samples])
        mean_d = np.linalg.norm(pts[:, :, None, :] - pts[:, None, :, :],
                                axis=3).mean(axis=0)
        np.fill_diagonal(mean_d, np.inf)
        for k in range(NUM_FACIAL):
            expect = list(np.argsort(mean_d[k], kind="stable")[:K])
            assert beta[k] == expect

    def test_missing_everywhere_raises(self):
        facial = grid_facial()
        facial[7] = np.nan
        samples = [make_sample(i, facial.copy()) for i in range(3)]
        with pytest.raises(SelectionError):
            neighbor_sets(samples, 3)

    def test_k_validation(self):
        with pytest.raises(ValueError):
            neighbor_sets([make_sample(0, grid_facial())], 0)


class TestVariances:
    def test_jitter_raises_expression_variance(self):
        rng = np.random.default_rng(1)
        samples = []
        for i in range(30):
            facial = grid_facial()
            facial[0] += rng.normal(0, 2.0, 2)  # keypoint 0 jitters
            samples.append(make_sample(i, facial))
        beta = neighbor_sets(samples, 3)
        v_e, zeta = expression_variance(samples, beta)
        assert v_e[0] > 10 * np.nanmedian(np.delete(v_e, 0))
        assert zeta.shape == (30, NUM_FACIAL)
        assert np.nanmax(zeta) <= 1.0

    def test_age_variance_tracks_root_distance_change(self):
        samples = []
        for i in range(30):
            facial = grid_facial()
            facial[0, 0] += i * 1.0  # drifts away from the root over the set
            samples.append(make_sample(i, facial, age=i))
        v_a = age_variance(samples)
        assert np.nanargmax(v_a) == 0

    def test_age_variance_skips_samples_without_root(self):
        facial = grid_facial()
        facial[30] = np.nan
        samples = [make_sample(0, facial), make_sample(1, grid_facial()),
                   make_sample(2, grid_facial())]
        v_a = age_variance(samples)
        assert np.isfinite(v_a[0])

    def test_root_out_of_range(self):
        with pytest.raises(SelectionError):
            age_variance([make_sample(0, grid_facial())], root=100)


class TestSelect:
    def test_eta_validation(self):
        with pytest.raises(ValueError):
            select_keypoints(np.zeros(NUM_FACIAL), np.zeros(NUM_FACIAL), 1.5, 3)

    def test_selection_is_sorted_and_unique(self):
        rng = np.random.default_rng(2)
        v_e = rng.random(NUM_FACIAL)
        v_a = rng.random(NUM_FACIAL)
        R, v_t = select_keypoints(v_e, v_a, 0.4, 19)
        assert R == sorted(set(R)) and len(R) == 19

    def test_matches_brute_force_score(self):
        rng = np.random.default_rng(3)
        v_e = rng.random(NUM_FACIAL)
        v_a = rng.random(NUM_FACIAL)
        R, v_t = select_keypoints(v_e, v_a, 0.3, 10)

        def mm(x):
            return (x - x.min()) / (x.max() - x.min())
        score = 0.3 * mm(v_a) + 0.7 * (1 - mm(v_e))
        expect = sorted(np.argsort(-score, kind="stable")[:10])
        assert R == [int(i) for i in expect]

    def test_too_few_scored(self):
        v = np.full(NUM_FACIAL, np.nan)
        v[:5] = 0.5
        with pytest.raises(SelectionError):
            select_keypoints(v, v, 0.4, 19)

    def test_save_load_roundtrip(self, tmp_path):
        path = str(tmp_path / "sel.json")
        save_selection(path, [3, 1, 2])
        assert load_selection(path) == [1, 2, 3]

    def test_load_rejects_duplicates(self, tmp_path):
        path = str(tmp_path / "sel.json")
        path_fh = open(path, "w")
        json.dump([1, 1, 2], path_fh)
        path_fh.close()
        with pytest.raises(SelectionError):
            load_selection(path)


class TestComputeSelection:
    def test_drift_vs_jitter_oracle(self):
        """Keypoints that drift with age must all outrank keypoints that only
        jitter, for a mid eta."""
        rng = np.random.default_rng(4)
        drift = list(range(5))
        jitter = list(range(5, 10))
        samples = []
        for i in range(40):
            facial = grid_facial()
            facial[drift] += 5.0 * (i % 10)           # strong age drift
            facial[jitter] += rng.normal(0, 0.5, (5, 2))  # pure noise
            samples.append(make_sample(i, facial, age=i % 10))
        stats = compute_selection(samples, K=3, eta=0.5, n_select=5)
        assert set(stats.R) == set(drift)


class TestHierarchy:
    def test_json_roundtrip(self):
        h = default_hierarchy()
        h2 = SkeletonHierarchy.from_json(h.to_json())
        assert h2.levels == h.levels
        assert h2.mirror_pairs == h.mirror_pairs
        assert h2.end_effectors == h.end_effectors


def full_skeleton() -> np.ndarray:
    rng = np.random.default_rng(0)
    skel = rng.uniform(10, 90, (NUM_JOINTS, 2))
    skel[1] = (50.0, 30.0)    # neck on the axis
    skel[2] = (40.0, 35.0)    # R shoulder
    skel[5] = (60.0, 35.0)    # L shoulder
    return skel


class TestGenerateSc:
    def test_always_20_points(self):
        sc = generate_sc(full_skeleton())
        assert sc.points.shape == (20, 2)
        assert len(sc.provenance) == 20

    def test_all_detected_provenance(self):
        sc = generate_sc(full_skeleton())
        kinds = {"detected", "intra-level-interp", "inter-level-interp"}
        assert set(sc.provenance) <= kinds

    def test_midpoints_exact(self):
        skel = full_skeleton()
        sc = generate_sc(skel)
        np.testing.assert_allclose(sc.points[11], (skel[2] + skel[5]) / 2.0)
        np.testing.assert_allclose(sc.points[10], (skel[0] + skel[1]) / 2.0)
        hip_mid = (skel[8] + skel[11]) / 2.0
        np.testing.assert_allclose(sc.points[19], (skel[1] + hip_mid) / 2.0)

    def test_mirror_exact_reflection(self):
        skel = full_skeleton()
        skel[4] = np.nan  # R wrist missing, L wrist (7) present
        sc = generate_sc(skel)
        axis = skel[1, 0]
        expect = np.array([2 * axis - skel[7, 0], skel[7, 1]])
        np.testing.assert_allclose(sc.points[6], expect)
        assert sc.provenance[6] == "mirrored"

    def test_mirror_needs_axis(self):
        skel = full_skeleton()
        skel[4] = np.nan
        skel[1] = np.nan   # no neck
        skel[2] = np.nan   # no R shoulder => shoulder midpoint unavailable
        skel[8] = np.nan   # no R hip => hip midpoint unavailable
        sc = generate_sc(skel)
        assert sc.provenance[6] == "zero"
        np.testing.assert_array_equal(sc.points[6], (0.0, 0.0))

    def test_both_sides_missing_zero_fills(self):
        skel = full_skeleton()
        skel[4] = np.nan
        skel[7] = np.nan
        sc = generate_sc(skel)
        assert sc.provenance[6] == "zero"
        assert sc.provenance[7] == "zero"
        # the dependent inter-level midpoints go to zero as well
        assert sc.provenance[17] == "zero"
        assert sc.provenance[18] == "zero"

    def test_no_chained_mirroring(self):
        """A mirrored joint must not seed another mirror."""
        skel = full_skeleton()
        skel[3] = np.nan  # R elbow
        skel[6] = np.nan  # L elbow: neither side detected
        sc = generate_sc(skel)
        assert sc.provenance[4] == "zero"
        assert sc.provenance[5] == "zero"

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            generate_sc(np.zeros((5, 2)))

    def test_arm_chain_dropout_exhaustive(self):
        """All 2^5 presence patterns of one arm chain (shoulder, elbow, wrist,
        mirror elbow, mirror wrist) keep the output total at 20 slots with
        consistent provenance."""
        base = full_skeleton()
        chain = [2, 3, 4, 6, 7]
        for mask in range(32):
            skel = base.copy()
            for bit, j in enumerate(chain):
                if mask & (1 << bit):
                    skel[j] = np.nan
            sc = generate_sc(skel)
            assert sc.points.shape == (20, 2)
            assert len(sc.provenance) == 20
            for slot, tag in enumerate(sc.provenance):
                if tag == "zero":
                    np.testing.assert_array_equal(sc.points[slot], (0.0, 0.0))
                else:
                    assert np.isfinite(sc.points[slot]).all()
