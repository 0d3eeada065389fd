"""Point synthesis, clustering and initial forest construction."""

from __future__ import annotations

import numpy as np
import pytest

from splatforest.bootstrap import (
    PointCloud,
    build_initial_forest,
    kmeans,
    synth_points,
)
from splatforest.forest import stats, validate

UNIT_BOX = (np.zeros(3), np.ones(3))


class TestSynthPoints:
    def test_single_point_inside_bounds(self):
        cloud = synth_points(1, UNIT_BOX, seed=0)
        assert cloud.positions.shape == (1, 3)
        assert np.all(cloud.positions >= 0) and np.all(cloud.positions <= 1)

    def test_mean_converges_to_box_center(self):
        pts = synth_points(10_000, UNIT_BOX, seed=1).positions
        np.testing.assert_allclose(pts.mean(axis=0), [0.5, 0.5, 0.5],
                                   atol=0.02)

    def test_same_seed_same_points(self):
        a = synth_points(64, UNIT_BOX, seed=9).positions
        b = synth_points(64, UNIT_BOX, seed=9).positions
        np.testing.assert_array_equal(a, b)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            synth_points(0, UNIT_BOX, seed=0)
        with pytest.raises(ValueError):
            synth_points(4, (np.ones(3), np.ones(3)), seed=0)

    def test_empty_and_nan_clouds_rejected(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0, np.nan, 0.0]]))


class TestKmeans:
    def test_one_center_per_point_has_zero_distortion(self):
        pts = synth_points(12, UNIT_BOX, seed=2).positions
        assign, centers = kmeans(pts, k=12, seed=3)
        np.testing.assert_allclose(
            np.linalg.norm(pts - centers[assign], axis=1), 0.0, atol=1e-12)

    def test_separated_blobs_are_recovered(self):
        rng = np.random.default_rng(4)
        a = rng.normal(scale=0.05, size=(40, 3))
        b = rng.normal(scale=0.05, size=(40, 3)) + 10.0
        assign, centers = kmeans(np.vstack([a, b]), k=2, seed=5)
        assert len(set(assign[:40])) == 1
        assert len(set(assign[40:])) == 1
        assert assign[0] != assign[40]
        got = np.sort(centers[:, 0])
        np.testing.assert_allclose(got, [a[:, 0].mean(), b[:, 0].mean()],
                                   atol=1e-9)

    def test_every_point_gets_its_nearest_center(self):
        pts = synth_points(200, UNIT_BOX, seed=6).positions
        assign, centers = kmeans(pts, k=7, seed=7)
        d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
        np.testing.assert_array_equal(assign, np.argmin(d, axis=1))

    def test_centers_are_cluster_means(self):
        pts = synth_points(100, UNIT_BOX, seed=8).positions
        assign, centers = kmeans(pts, k=4, seed=9)
        for j in range(4):
            members = pts[assign == j]
            assert members.shape[0] > 0
            np.testing.assert_allclose(centers[j], members.mean(axis=0),
                                       atol=1e-9)

    def test_k_larger_than_cloud_raises(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((3, 3)), k=4)

    def test_deterministic_for_a_fixed_seed(self):
        pts = synth_points(50, UNIT_BOX, seed=10).positions
        a1, c1 = kmeans(pts, k=5, seed=11)
        a2, c2 = kmeans(pts, k=5, seed=11)
        np.testing.assert_array_equal(c1, c2)
        np.testing.assert_array_equal(a1, a2)


class TestBuildInitialForest:
    def test_single_cluster_layout(self):
        cloud = synth_points(3, UNIT_BOX, seed=12)
        forest = build_initial_forest(cloud, k=1, dims=(4, 3), seed=13)
        st = stats(forest)
        assert (st.n_root, st.n_internal, st.n_leaf) == (1, 1, 3)
        np.testing.assert_array_equal(forest.leaf_parent, [0, 0, 0])
        np.testing.assert_array_equal(forest.internal_parent, [0])

    def test_counts_follow_k_and_n(self):
        cloud = synth_points(40, UNIT_BOX, seed=14)
        forest = build_initial_forest(cloud, k=5, dims=(6, 4), seed=15)
        st = stats(forest)
        assert (st.n_root, st.n_internal, st.n_leaf) == (5, 5, 40)
        # one chain per cluster: internal j -> root j
        np.testing.assert_array_equal(forest.internal_parent, np.arange(5))
        assert forest.dims == (6, 4)
        assert validate(forest).ok

    def test_leaves_keep_their_cluster(self):
        cloud = synth_points(30, UNIT_BOX, seed=16)
        forest = build_initial_forest(cloud, k=3, dims=(4, 3), seed=17)
        np.testing.assert_array_equal(forest.leaf_mu, cloud.positions)
        # parents must reproduce a clustering: same-parent leaves are
        # closer to their own internal's mean than points assigned elsewhere
        for j in range(3):
            assert np.any(forest.leaf_parent == j)

    def test_extent_seed_is_mean_neighbor_spacing(self):
        # equilateral triangle, side 2: every 2-NN mean distance is 2
        tri = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0],
                        [1.0, np.sqrt(3.0), 0.0]])
        forest = build_initial_forest(PointCloud(tri), k=1, dims=(4, 3),
                                      seed=18)
        np.testing.assert_allclose(forest.leaf_log_gamma, np.log(2.0),
                                   atol=1e-12)

    def test_lone_point_falls_back_to_box_scale(self):
        forest = build_initial_forest(PointCloud(np.zeros((1, 3))), k=1,
                                      dims=(4, 3), seed=19)
        np.testing.assert_allclose(forest.leaf_log_gamma, np.log(0.1))

    def test_opacity_starts_at_ten_percent(self):
        cloud = synth_points(10, UNIT_BOX, seed=20)
        forest = build_initial_forest(cloud, k=2, dims=(4, 3), seed=21)
        alpha = 1.0 / (1.0 + np.exp(-forest.leaf_alpha_raw))
        np.testing.assert_allclose(alpha, 0.1, atol=1e-12)

    def test_features_are_small_and_deterministic(self):
        cloud = synth_points(20, UNIT_BOX, seed=22)
        f1 = build_initial_forest(cloud, k=4, dims=(8, 5), seed=23)
        f2 = build_initial_forest(cloud, k=4, dims=(8, 5), seed=23)
        np.testing.assert_array_equal(f1.root_f, f2.root_f)
        np.testing.assert_array_equal(f1.internal_f, f2.internal_f)
        np.testing.assert_array_equal(f1.leaf_parent, f2.leaf_parent)
        assert np.abs(f1.root_f).max() <= 0.1
        assert np.abs(f1.internal_f).max() <= 0.1
