"""Forest tests: aggregation, feasibility preservation, determinism."""

import logging

import numpy as np
import pytest

from ocrt import (
    Forest,
    HtsRecipe,
    SyntheticRecipe,
    TrainConfig,
    check_feasibility,
    forest_predict,
    forest_predict_matrix,
    gen_hts,
    gen_synthetic,
    train_forest,
    tree_predict,
)
from ocrt.datagen import build_hts_constraints
from ocrt.ensemble import forest_from_json, forest_to_json
from ocrt.tree import Leaf, Tree


def single_leaf_tree(vector, p=1) -> Tree:
    v = np.asarray(vector, dtype=float)
    return Tree(Leaf(v, 1, 0.0), p, len(v), "e_ocrt")


class TestTrainForest:
    def test_single_tree_without_bootstrap_equals_tree(self):
        ds, fs = gen_synthetic(SyntheticRecipe(n=120, K=5, seed=0))
        cfg = TrainConfig(method="e_ocrt", max_depth=3, feasible_set=fs)
        forest = train_forest(ds, cfg, n_trees=1, rng_seed=4, bootstrap=False)
        x = ds.features[:10]
        np.testing.assert_array_equal(
            forest_predict_matrix(forest, x),
            np.vstack([tree_predict(forest.trees[0], row) for row in x]),
        )

    def test_uniform_weights(self):
        ds, fs = gen_synthetic(SyntheticRecipe(n=120, K=5, seed=0))
        cfg = TrainConfig(method="ep_ocrt", max_depth=2, feasible_set=fs)
        forest = train_forest(ds, cfg, n_trees=4, rng_seed=1)
        np.testing.assert_array_equal(forest.weights, np.full(4, 0.25))
        assert len(forest.bootstrap_seeds) == 4

    def test_convex_set_predictions_feasible(self, rng):
        ds, fs = gen_synthetic(SyntheticRecipe(n=200, K=5, seed=6))
        cfg = TrainConfig(method="e_ocrt", max_depth=3, feasible_set=fs)
        forest = train_forest(ds, cfg, n_trees=6, rng_seed=2)
        for x in rng.uniform(-3.0, 3.0, size=(40, ds.p)):
            assert check_feasibility(forest_predict(forest, x), fs, tol=1e-6).feasible

    def test_m_base_aliases_e(self, caplog):
        ds, fs = gen_synthetic(SyntheticRecipe(n=100, K=5, seed=1))
        cfg_m = TrainConfig(method="m_ocrt", max_depth=2, feasible_set=fs)
        cfg_e = TrainConfig(method="e_ocrt", max_depth=2, feasible_set=fs)
        with caplog.at_level(logging.INFO):
            fm = train_forest(ds, cfg_m, n_trees=2, rng_seed=9)
        fe = train_forest(ds, cfg_e, n_trees=2, rng_seed=9)
        assert forest_to_json(fm) == forest_to_json(fe)
        assert any("alias" in rec.message for rec in caplog.records)

    def test_nonconvex_warning(self, caplog):
        ds, fs = gen_hts(HtsRecipe(big_m=15.0, n=100, seed=0))
        cfg = TrainConfig(method="e_ocrt", max_depth=2, feasible_set=fs)
        with caplog.at_level(logging.WARNING):
            train_forest(ds, cfg, n_trees=1, rng_seed=0)
        assert any("not convex" in rec.message for rec in caplog.records)

    def test_determinism(self):
        ds, fs = gen_synthetic(SyntheticRecipe(n=150, K=5, seed=3))
        cfg = TrainConfig(method="e_ocrt", max_depth=3, feasible_set=fs)
        a = train_forest(ds, cfg, n_trees=3, rng_seed=11)
        b = train_forest(ds, cfg, n_trees=3, rng_seed=11)
        assert forest_to_json(a) == forest_to_json(b)


class TestForestPredict:
    def test_identical_trees_reproduce_leaf(self):
        trees = [single_leaf_tree([1.0, 0.0]) for _ in range(3)]
        forest = Forest(trees, np.full(3, 1.0 / 3.0), "e_ocrt", (0, 1, 2))
        np.testing.assert_allclose(forest_predict(forest, [0.5]), [1.0, 0.0])

    def test_two_tree_average(self):
        forest = Forest(
            [single_leaf_tree([1.0, 0.0]), single_leaf_tree([0.0, 1.0])],
            np.array([0.5, 0.5]),
            "e_ocrt",
            (0, 1),
        )
        np.testing.assert_allclose(forest_predict(forest, [0.0]), [0.5, 0.5])

    def test_averaging_sparse_leaves_can_break_support_limit(self):
        """Feasible sparse leaves average to an infeasible support; flagged."""
        fs = build_hts_constraints(13, 15.0, 4, 15.0)
        spikes = []
        for k in range(5):
            v = np.zeros(13)
            v[k] = 15.0
            assert check_feasibility(v, fs).feasible
            spikes.append(single_leaf_tree(v))
        forest = Forest(spikes, np.full(5, 0.2), "e_ocrt", tuple(range(5)))
        combined = forest_predict(forest, [0.0])
        report = check_feasibility(combined, fs)
        assert not report.feasible
        assert report.support_size == 5

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            Forest([single_leaf_tree([1.0])], np.array([0.5]), "cart", (0,))


class TestForestSerialization:
    def test_round_trip(self):
        ds, fs = gen_synthetic(SyntheticRecipe(n=100, K=5, seed=8))
        cfg = TrainConfig(method="ep_ocrt", max_depth=2, feasible_set=fs)
        forest = train_forest(ds, cfg, n_trees=3, rng_seed=5)
        text = forest_to_json(forest)
        clone = forest_from_json(text)
        assert forest_to_json(clone) == text
        np.testing.assert_array_equal(clone.weights, forest.weights)
        assert abs(clone.weights.sum() - 1.0) <= 1e-12
