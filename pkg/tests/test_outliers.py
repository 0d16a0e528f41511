import math

import numpy as np
import pytest

from oracles import brute_lof

from oodeval import outliers
from oodeval.errors import ConfigError, FitError, ShapeError


class TestPathLengthNormalizer:
    def test_c2_is_one(self):
        assert outliers.average_path_length(2) == 1.0

    def test_degenerate_sizes(self):
        assert outliers.average_path_length(0) == 0.0
        assert outliers.average_path_length(1) == 0.0

    def test_exact_harmonic_oracle(self):
        for n in (2, 3, 5, 17, 100, 513):
            harmonic = sum(1.0 / i for i in range(1, n))
            expected = 2.0 * harmonic - 2.0 * (n - 1) / n
            assert outliers.average_path_length(n) == pytest.approx(expected,
                                                                    abs=1e-12)

    def test_approximation_continuity_at_limit(self):
        below = outliers.average_path_length(1_000_000)
        above = outliers.average_path_length(1_000_001)
        assert abs(above - below) < 1e-4


class TestIsolationForestFit:
    def test_two_points_forced_structure(self):
        model = outliers.iforest_fit(np.array([[0.0], [1.0]]), n_trees=10, seed=0)
        for tree in model.trees:
            assert tree.n_nodes == 3
            leaves = tree.feature < 0
            np.testing.assert_array_equal(tree.size[leaves], [1, 1])

    def test_identical_points_single_leaf(self):
        model = outliers.iforest_fit(np.zeros((50, 2)), n_trees=5, seed=1)
        for tree in model.trees:
            assert tree.n_nodes == 1
            assert tree.size[0] == model.subsample_size

    def test_refit_determinism(self):
        rng = np.random.default_rng(2)
        data = rng.standard_normal((400, 3))
        a = outliers.iforest_fit(data, seed=7)
        b = outliers.iforest_fit(data, seed=7)
        for ta, tb in zip(a.trees, b.trees):
            np.testing.assert_array_equal(ta.feature, tb.feature)
            np.testing.assert_array_equal(ta.threshold, tb.threshold)
            np.testing.assert_array_equal(ta.left, tb.left)
            np.testing.assert_array_equal(ta.right, tb.right)
            np.testing.assert_array_equal(ta.sample_indices, tb.sample_indices)

    def test_too_few_rows(self):
        with pytest.raises(FitError):
            outliers.iforest_fit(np.array([[1.0]]))

    def test_split_values_inside_routed_range(self):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((300, 2))
        model = outliers.iforest_fit(data, n_trees=5, seed=4)
        for tree in model.trees:
            rows = data[tree.sample_indices]
            stack = [(0, np.arange(rows.shape[0]))]
            while stack:
                node, idx = stack.pop()
                if tree.feature[node] < 0:
                    assert tree.size[node] == idx.size
                    continue
                col = rows[idx, tree.feature[node]]
                assert col.min() <= tree.threshold[node] <= col.max()
                mask = col < tree.threshold[node]
                stack.append((tree.left[node], idx[mask]))
                stack.append((tree.right[node], idx[~mask]))

    def test_leaf_sizes_sum_to_subsample(self):
        rng = np.random.default_rng(5)
        model = outliers.iforest_fit(rng.standard_normal((500, 2)), n_trees=8,
                                     seed=6)
        for tree in model.trees:
            assert tree.size[tree.feature < 0].sum() == model.subsample_size

    def test_constant_column_never_chosen_for_split(self):
        rng = np.random.default_rng(30)
        data = np.column_stack([np.full(200, 3.5), rng.standard_normal(200)])
        model = outliers.iforest_fit(data, n_trees=10, seed=31)
        for tree in model.trees:
            internal = tree.feature >= 0
            assert np.all(tree.feature[internal] == 1)

    def test_no_height_limit_isolates_singletons(self):
        rng = np.random.default_rng(6)
        data = rng.standard_normal((40, 1))
        model = outliers.iforest_fit(data, n_trees=3, seed=7,
                                     height_limit=math.inf)
        for tree in model.trees:
            leaves = tree.feature < 0
            assert np.all(tree.size[leaves] == 1)


class TestIsolationForestScore:
    def test_standard_scores_in_unit_interval(self):
        rng = np.random.default_rng(8)
        data = rng.standard_normal((300, 2))
        model = outliers.iforest_fit(data, seed=9)
        scores = outliers.iforest_score(model, data)
        assert np.all(scores > 0.0) and np.all(scores <= 1.0)

    def test_monotone_decreasing_in_depth(self):
        rng = np.random.default_rng(10)
        data = rng.standard_normal((500, 2)) * 0.1
        model = outliers.iforest_fit(data, seed=11)
        center = np.zeros((1, 2))
        far = np.array([[8.0, 8.0]])
        depth_center = depth_far = 0.0
        for tree in model.trees:
            depth_center += outliers._traverse(tree, center)[0][0]
            depth_far += outliers._traverse(tree, far)[0][0]
        assert depth_far < depth_center
        assert outliers.iforest_score(model, far)[0] > \
            outliers.iforest_score(model, center)[0]

    def test_injected_outlier_ranks_high(self):
        rng = np.random.default_rng(12)
        data = np.vstack([rng.standard_normal((1000, 2)), [[6.0, 6.0]]])
        model = outliers.iforest_fit(data, seed=12)
        scores = outliers.iforest_score(model, data)
        assert scores[-1] >= np.quantile(scores, 0.99)

    def test_paper_literal_transcription(self):
        """Emitted literal score is the negation of the printed ensemble sum."""
        rng = np.random.default_rng(13)
        data = rng.standard_normal((100, 2))
        model = outliers.iforest_fit(data, seed=14, mode="paper_literal")
        queries = data[:7]
        emitted = outliers.iforest_score(model, queries)
        printed = np.full(7, -0.5)
        for tree in model.trees:
            depth, _ = outliers._traverse(tree, queries)
            printed -= np.power(2.0, -depth / (model.n_trees * model.c_psi))
        np.testing.assert_allclose(emitted, -printed, rtol=1e-12)
        # the printed score can never reach the paper's "anomaly if >= 0" rule
        assert np.all(printed <= -0.5)

    def test_literal_mode_still_ranks_outlier_higher(self):
        rng = np.random.default_rng(14)
        data = np.vstack([rng.standard_normal((500, 2)), [[7.0, 7.0]]])
        model = outliers.iforest_fit(data, seed=15)
        scores = outliers.iforest_score(model, data, mode="paper_literal")
        assert scores[-1] > np.median(scores)

    def test_dimension_mismatch(self):
        model = outliers.iforest_fit(np.random.default_rng(0).random((10, 2)))
        with pytest.raises(ShapeError):
            outliers.iforest_score(model, np.zeros((3, 5)))

    def test_scoring_fixed_model_is_permutation_invariant(self):
        rng = np.random.default_rng(15)
        data = rng.standard_normal((200, 2))
        model = outliers.iforest_fit(data, seed=16)
        queries = rng.standard_normal((50, 2))
        perm = rng.permutation(50)
        np.testing.assert_array_equal(
            outliers.iforest_score(model, queries)[perm],
            outliers.iforest_score(model, queries[perm]))


class TestLofFit:
    def test_collinear_equispaced_equal_lrd(self):
        model = outliers.lof_fit(np.array([[0.0], [1.0], [2.0]]), k=1)
        np.testing.assert_allclose(model.lrd, model.lrd[0])

    def test_duplicates_clamped_not_infinite(self):
        data = np.vstack([np.zeros((5, 2)), np.random.default_rng(1).random((5, 2))])
        model = outliers.lof_fit(data, k=3)
        assert np.all(np.isfinite(model.lrd))
        assert np.all(model.lrd > 0)

    def test_order_independence_per_point(self):
        rng = np.random.default_rng(2)
        data = rng.random((60, 2))
        model = outliers.lof_fit(data, k=5)
        perm = rng.permutation(60)
        permuted = outliers.lof_fit(data[perm], k=5)
        np.testing.assert_allclose(permuted.lrd, model.lrd[perm], rtol=1e-12)

    def test_needs_more_points_than_k(self):
        with pytest.raises(FitError):
            outliers.lof_fit(np.random.default_rng(0).random((20, 1)), k=20)


class TestLofScore:
    def test_grid_interior_point_near_one(self):
        xx, yy = np.meshgrid(np.arange(20.0), np.arange(20.0))
        grid = np.column_stack([xx.ravel(), yy.ravel()])
        model = outliers.lof_fit(grid, k=20)
        value = outliers.lof_score(model, np.array([[10.0, 10.0]]))[0]
        assert 0.85 <= value <= 1.15

    def test_isolated_point_flagged(self):
        rng = np.random.default_rng(3)
        cluster = rng.standard_normal((200, 2)) * 0.5
        model = outliers.lof_fit(cluster, k=20)
        assert outliers.lof_score(model, np.array([[50.0, 50.0]]))[0] > 1.5

    def test_symmetry_invariance(self):
        rng = np.random.default_rng(4)
        half = rng.standard_normal((50, 2))
        data = np.vstack([half, half * [-1.0, 1.0]])  # mirror-symmetric in x
        model = outliers.lof_fit(data, k=10)
        probe = np.array([[2.0, 1.0]])
        mirrored = np.array([[-2.0, 1.0]])
        assert outliers.lof_score(model, probe)[0] == pytest.approx(
            outliers.lof_score(model, mirrored)[0], rel=1e-9)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(5)
        for n, k in ((40, 3), (80, 7), (120, 20)):
            train = rng.standard_normal((n, 2))
            queries = np.vstack([rng.standard_normal((10, 2)), train[:5]])
            got = outliers.lof_score(outliers.lof_fit(train, k=k), queries)
            np.testing.assert_allclose(got, brute_lof(train, queries, k),
                                       atol=1e-9)

    def test_oracle_with_duplicates(self):
        rng = np.random.default_rng(6)
        train = np.vstack([np.zeros((4, 2)), rng.standard_normal((30, 2))])
        queries = np.vstack([np.zeros((1, 2)), rng.standard_normal((5, 2))])
        got = outliers.lof_score(outliers.lof_fit(train, k=3), queries)
        np.testing.assert_allclose(got, brute_lof(train, queries, 3), atol=1e-9)

    def test_dimension_mismatch(self):
        model = outliers.lof_fit(np.random.default_rng(0).random((30, 2)), k=5)
        with pytest.raises(ShapeError):
            outliers.lof_score(model, np.zeros((3, 4)))


class TestSerialization:
    def test_iforest_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        data = rng.standard_normal((300, 2))
        model = outliers.iforest_fit(data, seed=21)
        path = tmp_path / "forest.oodmdl"
        outliers.save_model(model, path)
        loaded = outliers.load_model(path)
        queries = rng.standard_normal((40, 2))
        np.testing.assert_array_equal(outliers.iforest_score(model, queries),
                                      outliers.iforest_score(loaded, queries))
        assert loaded.seed == 21 and loaded.mode == "standard"
        sidecar = (tmp_path / "forest.oodmdl.json").read_text()
        assert '"isolation_forest"' in sidecar

    def test_lof_roundtrip(self, tmp_path):
        rng = np.random.default_rng(8)
        model = outliers.lof_fit(rng.random((60, 3)), k=7)
        path = tmp_path / "lof.oodmdl"
        outliers.save_model(model, path)
        loaded = outliers.load_model(path)
        queries = rng.random((12, 3))
        np.testing.assert_array_equal(outliers.lof_score(model, queries),
                                      outliers.lof_score(loaded, queries))
        assert loaded.k == 7

    def test_bad_blob(self, tmp_path):
        path = tmp_path / "junk.oodmdl"
        path.write_bytes(b"not a model at all")
        with pytest.raises(Exception):
            outliers.load_model(path)


class TestConfigValidation:
    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            outliers.iforest_fit(np.random.default_rng(0).random((10, 1)),
                                 mode="sideways")

    def test_bad_subsample(self):
        with pytest.raises(ConfigError):
            outliers.iforest_fit(np.random.default_rng(0).random((10, 1)),
                                 subsample=50)
