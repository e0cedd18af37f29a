"""Metric implementations checked against hand computations and brute-force
oracles written directly in the tests."""

import numpy as np
import pytest

from worldflow.errors import EmptyInputError, InvalidArgumentError
from worldflow.geometry import OccupancyGrid
from worldflow.metrics import (MetricReport, binary_iou, chamfer_distance,
                               cloud_features, f_score, feature_distance,
                               frechet_distance, frozen_feature_params,
                               kernel_distance, latent_rmse, occupancy_iou,
                               rgb_rmse)
from worldflow.seeding import rng_from


def oracle_chamfer(a, b):
    d_ab = [min(np.linalg.norm(p - q) for q in b) for p in a]
    d_ba = [min(np.linalg.norm(p - q) for q in a) for p in b]
    return 0.5 * (np.mean(d_ab) + np.mean(d_ba))


def oracle_f_score(a, b, tau):
    prec = np.mean([min(np.linalg.norm(p - q) for q in b) <= tau for p in a])
    rec = np.mean([min(np.linalg.norm(p - q) for q in a) <= tau for p in b])
    if prec + rec == 0:
        return 0.0
    return 2 * prec * rec / (prec + rec)


def oracle_mmd(fa, fb):
    d = fa.shape[1]

    def k(x, y):
        return (float(x @ y) / d + 1.0) ** 3

    m, n = len(fa), len(fb)
    s_aa = sum(k(fa[i], fa[j]) for i in range(m) for j in range(m) if i != j)
    s_bb = sum(k(fb[i], fb[j]) for i in range(n) for j in range(n) if i != j)
    s_ab = sum(k(fa[i], fb[j]) for i in range(m) for j in range(n))
    return s_aa / (m * (m - 1)) + s_bb / (n * (n - 1)) - 2 * s_ab / (m * n)


class TestChamfer:
    def test_identical_sets_zero(self):
        pts = rng_from(0).random((40, 3))
        assert chamfer_distance(pts, pts) == 0.0

    def test_unit_offset_singletons(self):
        assert chamfer_distance([[0, 0, 0]], [[1, 0, 0]]) == pytest.approx(1.0)

    def test_matches_oracle(self):
        rng = rng_from(11)
        for _ in range(10):
            a = rng.random((int(rng.integers(1, 60)), 3))
            b = rng.random((int(rng.integers(1, 60)), 3))
            assert chamfer_distance(a, b) == pytest.approx(oracle_chamfer(a, b), abs=1e-9)

    def test_symmetric_and_translation_invariant(self):
        rng = rng_from(12)
        a, b = rng.random((30, 3)), rng.random((25, 3))
        assert chamfer_distance(a, b) == pytest.approx(chamfer_distance(b, a))
        shift = np.array([3.0, -2.0, 0.5])
        assert chamfer_distance(a + shift, b + shift) == pytest.approx(
            chamfer_distance(a, b), abs=1e-9)

    def test_permutation_invariant(self):
        rng = rng_from(13)
        a, b = rng.random((30, 3)), rng.random((25, 3))
        perm = rng.permutation(30)
        assert chamfer_distance(a[perm], b) == pytest.approx(chamfer_distance(a, b))

    def test_empty_raises(self):
        with pytest.raises(EmptyInputError):
            chamfer_distance(np.zeros((0, 3)), np.ones((4, 3)))
        with pytest.raises(InvalidArgumentError):
            chamfer_distance(np.zeros((4, 2)), np.ones((4, 3)))


class TestFScore:
    def test_identical_sets_one(self):
        pts = rng_from(1).random((30, 3))
        assert f_score(pts, pts, tau=1e-6) == 1.0

    def test_far_disjoint_zero(self):
        a = np.zeros((5, 3))
        b = np.full((5, 3), 100.0)
        assert f_score(a, b, tau=0.5) == 0.0

    def test_harmonic_mean_two_thirds(self):
        # every a-point is near b, but only half of b is near a
        a = np.zeros((4, 3))
        b = np.concatenate([np.zeros((4, 3)), np.full((4, 3), 50.0)])
        assert f_score(a, b, tau=0.1) == pytest.approx(2.0 / 3.0)

    def test_matches_oracle(self):
        rng = rng_from(14)
        for _ in range(8):
            a = rng.random((int(rng.integers(2, 50)), 3))
            b = rng.random((int(rng.integers(2, 50)), 3))
            tau = float(rng.uniform(0.05, 0.5))
            assert f_score(a, b, tau) == pytest.approx(oracle_f_score(a, b, tau), abs=1e-9)

    def test_bad_tau_raises(self):
        with pytest.raises(InvalidArgumentError):
            f_score(np.zeros((2, 3)), np.zeros((2, 3)), tau=0.0)


def _test_grid():
    data = np.zeros((8, 8, 8), dtype=bool)
    data[2:6, 2:6, 2:6] = True
    return OccupancyGrid(data, voxel_edge=0.25)


class TestOccupancyIoU:
    def test_perfect_predictor(self):
        grid = _test_grid()
        assert occupancy_iou(grid.occupancy_at, grid, seed=3,
                             n_uniform=400, n_near=200) == 1.0

    def test_complement_predictor(self):
        grid = _test_grid()
        pred = lambda pts: ~grid.occupancy_at(pts)
        assert occupancy_iou(pred, grid, seed=3, n_uniform=400, n_near=200) == 0.0

    def test_always_true_on_balanced_set(self):
        grid = _test_grid()
        pred = lambda pts: np.ones(len(pts), dtype=bool)
        # no near-surface part: the uniform part is exactly half occupied
        val = occupancy_iou(pred, grid, seed=5, n_uniform=1000, n_near=0)
        assert val == pytest.approx(0.5)

    def test_binary_iou_count_arithmetic(self):
        pred = np.array([1, 1, 0, 0, 1], dtype=bool)
        gt = np.array([1, 0, 1, 0, 1], dtype=bool)
        # TP=2, FP=1, FN=1
        assert binary_iou(pred, gt) == pytest.approx(0.5)
        assert binary_iou(gt, pred) == pytest.approx(0.5)


class TestPointwiseErrors:
    def test_rgb_rmse_basics(self):
        c = rng_from(2).random((10, 3))
        assert rgb_rmse(c, c) == 0.0
        assert rgb_rmse(np.zeros((7, 3)), np.ones((7, 3))) == pytest.approx(1.0)

    def test_rgb_rmse_hand_value(self):
        pred = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [1.0, 1.0, 1.0]])
        gt = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        assert rgb_rmse(pred, gt) == pytest.approx(np.sqrt((3 * 0.25 + 3 * 1.0) / 9))

    def test_rgb_rmse_mismatch_raises(self):
        with pytest.raises(InvalidArgumentError):
            rgb_rmse(np.zeros((3, 3)), np.zeros((4, 3)))

    def test_latent_rmse(self):
        g = rng_from(3).standard_normal((2, 2, 4, 16))
        assert latent_rmse(g, g) == 0.0
        assert latent_rmse(g + 1.0, g) == pytest.approx(1.0)
        p = g.copy()
        p[0, 0, 0, 0] += 2.0
        assert latent_rmse(p, g) == pytest.approx(np.sqrt(4.0 / g.size))

    def test_latent_rmse_layout_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            latent_rmse(np.zeros((2, 2, 4, 16)), np.zeros((2, 3, 4, 16)))


class TestFeatureDistances:
    def test_frozen_net_deterministic_and_pool_invariant(self):
        clouds = rng_from(4).random((3, 64, 3))
        f1 = cloud_features(clouds)
        f2 = cloud_features(clouds, frozen_feature_params())
        np.testing.assert_array_equal(f1, f2)
        perm = rng_from(5).permutation(64)
        np.testing.assert_allclose(cloud_features(clouds[:, perm]), f1, atol=1e-12)
        assert f1.shape == (3, 256)

    def test_frechet_same_set_zero(self):
        feats = rng_from(6).standard_normal((12, 8))
        assert abs(frechet_distance(feats, feats)) < 1e-4

    def test_frechet_mean_offset_closed_form(self):
        rng = rng_from(7)
        base = rng.standard_normal((40, 6))
        m = rng.standard_normal(6)
        # identical sample covariances, means differ by exactly m
        val = frechet_distance(base + m, base)
        assert val == pytest.approx(float(m @ m), abs=1e-4)

    def test_frechet_needs_two_samples(self):
        with pytest.raises(InvalidArgumentError):
            frechet_distance(np.zeros((1, 4)), np.zeros((5, 4)))

    def test_kernel_same_set_clamps_to_zero(self):
        clouds = rng_from(8).random((6, 32, 3))
        assert feature_distance(clouds, clouds, mode="kernel") == 0.0

    def test_kernel_matches_dense_oracle(self):
        rng = rng_from(9)
        a = rng.random((5, 20, 3))
        b = rng.random((5, 20, 3)) + 0.3
        params = frozen_feature_params()
        fa, fb = cloud_features(a, params), cloud_features(b, params)
        expected = max(oracle_mmd(fa, fb), 0.0) * 1e3
        assert kernel_distance(fa, fb) == pytest.approx(expected, rel=1e-9)
        assert feature_distance(a, b, mode="kernel") == pytest.approx(expected, rel=1e-9)

    def test_feature_distance_validation(self):
        clouds = rng_from(10).random((4, 16, 3))
        with pytest.raises(InvalidArgumentError):
            feature_distance(clouds, clouds, mode="euclid")
        with pytest.raises(InvalidArgumentError):
            feature_distance(clouds[:1], clouds)
        with pytest.raises(InvalidArgumentError):
            feature_distance(clouds[:, :, :2], clouds)

    def test_offset_distribution_scores_positive(self):
        rng = rng_from(20)
        a = rng.random((8, 64, 3))
        b = rng.random((8, 64, 3)) + 1.0
        assert feature_distance(a, b, mode="frechet") > 0.1
        assert feature_distance(a, b, mode="kernel") > 0.0


class TestMetricReport:
    def test_round_trip(self):
        rep = MetricReport(values={"chamfer": 0.01, "iou": 0.93},
                           counts={"cd_points": 100}, thresholds={"tau": 0.033},
                           seeds={"queries": 7})
        again = MetricReport.from_json(rep.to_json())
        assert again.values == rep.values
        assert again.to_json() == rep.to_json()

    def test_validation_rejects_bad_values(self):
        with pytest.raises(InvalidArgumentError):
            MetricReport(values={"chamfer": -1.0}).validate()
        with pytest.raises(InvalidArgumentError):
            MetricReport(values={"iou": 1.5}).validate()
        with pytest.raises(InvalidArgumentError):
            MetricReport(values={"chamfer": float("nan")}).validate()
