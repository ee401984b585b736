"""Forest fitting, path lengths, scoring, and persistence tests."""

import math

import numpy as np
import pytest

from optiforest.data import DataMatrix
from optiforest.errors import DataError, ModelFormatError
from optiforest.forest import (
    Forest,
    ForestConfig,
    average_path_length,
    fit,
    load_model,
    path_length,
    resolve_epsilon,
    save_model,
    score,
    score_all,
    with_seed,
)
from optiforest.lsh_tree import CentreNode, HashFunction, Leaf, LshNode, nodes_equal
from optiforest.theory import BranchingDistribution


def _matrix(rows, labels=None):
    return DataMatrix(
        values=np.asarray(rows, dtype=np.float64),
        labels=None if labels is None else np.asarray(labels),
    )


def _interval_node(width, lows, depth, child_builder):
    """1-d LshNode splitting [lows[0], lows[0]+width*k) into unit buckets."""
    func = HashFunction(a=np.array([1.0]), b=0.0, w=width)
    children = {}
    for low in lows:
        key = int(low // width)
        children[key] = child_builder(low)
    return LshNode(func=func, children=children, size=0, depth=depth)


def _perfect_binary_tree():
    """Depth-3 binary tree isolating the points 0..7."""

    def level3(low):
        return Leaf(count=1, depth=3)

    def level2(low):
        node = _interval_node(1.0, [low, low + 1.0], 2, level3)
        node.size = 2
        return node

    def level1(low):
        node = _interval_node(2.0, [low, low + 2.0], 1, level2)
        node.size = 4
        return node

    root = _interval_node(4.0, [0.0, 4.0], 0, level1)
    root.size = 8
    return root


def _perfect_ternary_tree():
    """Depth-2 ternary tree isolating the points 0..8."""

    def singletons(low):
        node = _interval_node(1.0, [low, low + 1.0, low + 2.0], 1, lambda _: Leaf(1, 2))
        node.size = 3
        return node

    root = _interval_node(3.0, [0.0, 3.0, 6.0], 0, singletons)
    root.size = 9
    return root


class TestAveragePathLength:
    def test_boundary_values(self):
        assert average_path_length(0) == 0.0
        assert average_path_length(1) == 0.0
        assert average_path_length(2) == 1.0

    def test_frozen_value_for_three(self):
        expected = 2.0 * (math.log(2.0) + np.euler_gamma) - 4.0 / 3.0
        assert average_path_length(3) == pytest.approx(expected, rel=1e-15)
        assert average_path_length(3) == pytest.approx(1.2073923575896231, abs=1e-12)

    def test_monotone_increasing(self):
        values = [average_path_length(k) for k in range(2, 200)]
        assert all(b > a for a, b in zip(values, values[1:]))


class TestForestConfig:
    def test_defaults(self):
        config = ForestConfig()
        assert config.trees == 100
        assert config.sample_size == 512
        assert config.epsilon == "auto"
        assert config.distribution.kind == "finite23"
        assert config.mode == "optiforest"

    def test_validation(self):
        with pytest.raises(ValueError):
            ForestConfig(trees=0)
        with pytest.raises(ValueError):
            ForestConfig(sample_size=1)
        with pytest.raises(ValueError):
            ForestConfig(epsilon=0)
        with pytest.raises(ValueError):
            ForestConfig(epsilon=513)
        with pytest.raises(ValueError):
            ForestConfig(epsilon="sometimes")
        with pytest.raises(ValueError):
            ForestConfig(mode="magic")
        with pytest.raises(ValueError):
            ForestConfig(seed=-1)

    def test_with_seed(self):
        config = ForestConfig(seed=3)
        assert with_seed(config, 9).seed == 9
        assert config.seed == 3


class TestResolveEpsilon:
    def test_auto_small_and_large(self):
        assert resolve_epsilon(ForestConfig(), n_rows=10_000, n_features=34) == 55
        assert resolve_epsilon(ForestConfig(), n_rows=10_000, n_features=300) == 403

    def test_auto_clamped_to_sample(self):
        assert resolve_epsilon(ForestConfig(), n_rows=32, n_features=2) == 32

    def test_explicit_clamped(self):
        config = ForestConfig(epsilon=500)
        assert resolve_epsilon(config, n_rows=100, n_features=2) == 100
        assert resolve_epsilon(config, n_rows=10_000, n_features=2) == 500


class TestPathLength:
    def test_perfect_binary_tree_gives_three(self):
        tree = _perfect_binary_tree()
        for x in range(8):
            assert path_length(tree, np.array([x + 0.5])) == pytest.approx(3.0)

    def test_perfect_ternary_tree_gives_two_log2_three(self):
        tree = _perfect_ternary_tree()
        for x in range(9):
            assert path_length(tree, np.array([x + 0.5])) == pytest.approx(
                2.0 * math.log2(3.0)
            )

    def test_bare_leaf_contributes_expected_depth(self):
        assert path_length(Leaf(count=5), np.array([0.0])) == pytest.approx(
            average_path_length(5)
        )
        assert path_length(Leaf(count=1), np.array([0.0])) == 0.0

    def test_unseen_hash_stops_with_node_size_charge(self):
        tree = _perfect_binary_tree()
        assert path_length(tree, np.array([100.0])) == pytest.approx(
            average_path_length(8)
        )

    def test_unseen_hash_below_root(self):
        tree = _perfect_binary_tree()
        # remove the leaf bucket holding point 0: a walk for 0.5 now ends
        # two levels down, charged with that node's pooled size of 2
        level2 = tree.children[0].children[0]
        del level2.children[0]
        assert path_length(tree, np.array([0.5])) == pytest.approx(
            2.0 + average_path_length(2)
        )
        # out of range on the left: unseen at the root itself
        assert path_length(tree, np.array([-0.5])) == pytest.approx(
            average_path_length(8)
        )

    def test_centre_node_routing_weight(self):
        node = CentreNode(
            centres=np.array([[0.0], [5.0]]),
            children=[Leaf(count=3, depth=1), Leaf(count=1, depth=1)],
            size=4,
        )
        assert path_length(node, np.array([1.0])) == pytest.approx(
            1.0 + average_path_length(3)
        )
        assert path_length(node, np.array([4.9])) == pytest.approx(1.0)


class TestFitAndScore:
    def _toy(self, seed=0, n=200, dim=3):
        rng = np.random.default_rng(seed)
        inliers = rng.normal(0, 1, (n, dim))
        outliers = rng.uniform(6, 9, (8, dim))
        values = np.vstack([inliers, outliers])
        labels = np.array([0] * n + [1] * 8)
        return _matrix(values, labels)

    def test_fit_shape_and_metadata(self):
        data = self._toy()
        config = ForestConfig(trees=10, sample_size=64, seed=1)
        forest = fit(data, config)
        assert len(forest.trees) == 10
        assert forest.psi_effective == 64
        assert forest.n_features == 3
        assert forest.c_psi == pytest.approx(average_path_length(64))
        assert 1 <= forest.epsilon_used <= 64

    def test_sample_size_clamped_to_rows(self):
        data = _matrix(np.random.default_rng(0).normal(size=(20, 2)))
        forest = fit(data, ForestConfig(trees=3, sample_size=512))
        assert forest.psi_effective == 20

    def test_scores_in_unit_interval_and_outliers_rank_higher(self):
        data = self._toy()
        forest = fit(data, ForestConfig(trees=40, sample_size=128, seed=2))
        scores = score_all(forest, data)
        assert scores.shape == (208,)
        assert np.all(scores > 0) and np.all(scores <= 1)
        assert scores[-8:].mean() > scores[:-8].mean()

    def test_single_score_matches_batch_exactly(self):
        data = self._toy(seed=5)
        forest = fit(data, ForestConfig(trees=15, sample_size=64, seed=3))
        batch = score_all(forest, data)
        for i in (0, 7, 103, 207):
            assert score(forest, data.values[i]) == batch[i]

    def test_deterministic_across_jobs(self):
        data = self._toy(seed=6)
        config = ForestConfig(trees=12, sample_size=64, seed=4)
        f1 = fit(data, config, jobs=1)
        f4 = fit(data, config, jobs=4)
        assert all(nodes_equal(a, b) for a, b in zip(f1.trees, f4.trees))
        assert np.array_equal(score_all(f1, data), score_all(f4, data))

    def test_different_seeds_differ(self):
        data = self._toy(seed=7)
        f1 = fit(data, ForestConfig(trees=5, sample_size=64, seed=0))
        f2 = fit(data, ForestConfig(trees=5, sample_size=64, seed=1))
        assert not all(nodes_equal(a, b) for a, b in zip(f1.trees, f2.trees))

    def test_lsh_only_mode(self):
        data = self._toy(seed=8)
        forest = fit(data, ForestConfig(trees=5, sample_size=64, mode="lsh-only", seed=2))
        assert not any(isinstance(t, CentreNode) for t in forest.trees)

    def test_input_validation(self):
        data = self._toy()
        forest = fit(data, ForestConfig(trees=3, sample_size=32))
        with pytest.raises(DataError):
            score(forest, np.zeros(5))
        with pytest.raises(DataError):
            score(forest, np.zeros((2, 3)))
        with pytest.raises(DataError):
            score_all(forest, _matrix(np.zeros((4, 5))))
        with pytest.raises(ValueError):
            fit(data, ForestConfig(), jobs=0)
        with pytest.raises(DataError):
            fit(_matrix([[1.0, 2.0]]), ForestConfig())


class TestPersistence:
    def _forest(self):
        rng = np.random.default_rng(9)
        data = _matrix(rng.normal(size=(120, 4)))
        config = ForestConfig(
            trees=8,
            sample_size=64,
            epsilon=10,
            distribution=BranchingDistribution.geometric(),
            seed=11,
        )
        return data, fit(data, config)

    def test_round_trip_is_exact(self, tmp_path):
        data, forest = self._forest()
        path = tmp_path / "model.bin"
        save_model(forest, str(path))
        loaded = load_model(str(path))
        assert isinstance(loaded, Forest)
        assert loaded.config == forest.config
        assert loaded.c_psi == forest.c_psi
        assert loaded.n_features == forest.n_features
        assert loaded.psi_effective == forest.psi_effective
        assert loaded.epsilon_used == forest.epsilon_used
        assert all(nodes_equal(a, b) for a, b in zip(forest.trees, loaded.trees))
        assert np.array_equal(score_all(forest, data), score_all(loaded, data))

    def test_save_is_byte_deterministic(self, tmp_path):
        _, forest = self._forest()
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_model(forest, str(p1))
        save_model(forest, str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        _, forest = self._forest()
        path = tmp_path / "model.bin"
        save_model(forest, str(path))
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(ModelFormatError, match="magic"):
            load_model(str(path))

    def test_truncated_file(self, tmp_path):
        _, forest = self._forest()
        path = tmp_path / "model.bin"
        save_model(forest, str(path))
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 20])
        with pytest.raises(ModelFormatError, match="truncated"):
            load_model(str(path))

    def test_unsupported_version(self, tmp_path):
        _, forest = self._forest()
        path = tmp_path / "model.bin"
        save_model(forest, str(path))
        blob = path.read_bytes()
        assert b'"format_version": 1' in blob
        path.write_bytes(blob.replace(b'"format_version": 1', b'"format_version": 9'))
        with pytest.raises(ModelFormatError, match="version"):
            load_model(str(path))

    def test_trailing_bytes(self, tmp_path):
        _, forest = self._forest()
        path = tmp_path / "model.bin"
        save_model(forest, str(path))
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(ModelFormatError, match="trailing"):
            load_model(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_model(str(tmp_path / "absent.bin"))
