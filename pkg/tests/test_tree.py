"""Tree growth: split evaluation, method equivalences, structure invariants."""

from dataclasses import replace

import numpy as np
import pytest

from ocrt import (
    Dataset,
    FeasibleSet,
    Loss,
    SplitRejectedError,
    TrainConfig,
    UnsupportedError,
    best_split_exhaustive,
    check_feasibility,
    grow_tree,
    loss_eval,
    postprocess_leaves,
    predict_unconstrained,
    solve_split_mip_exact,
    split_gain,
    train_tree,
    tree_from_json,
    tree_predict,
    tree_predict_matrix,
    tree_to_json,
)
from ocrt.datagen import SyntheticRecipe, build_hts_constraints, build_synthetic_constraints, gen_hts, gen_synthetic
from ocrt.tree import Branch, Leaf, iter_leaves

from conftest import random_box_set


FOUR_X = np.array([[1.0], [2.0], [3.0], [4.0]])
FOUR_Y = np.array([[0.0], [0.0], [10.0], [10.0]])


def mean_predictor(rows):
    return rows.mean(axis=0)


def feasible_synthetic(n=200, K=5, seed=3):
    """Noise-free data with every row feasible: free coordinates made nonnegative."""
    ds, fs = gen_synthetic(SyntheticRecipe(n=n, K=K, seed=seed, noise_sd=0.0))
    y = ds.targets.copy()
    pinned = K // 2  # leading coordinates are equality-determined
    y[:, pinned:] = np.abs(y[:, pinned:])
    return Dataset(ds.features, y), fs


class TestSplitGain:
    def test_pure_split(self):
        dec = split_gain(FOUR_X, FOUR_Y, np.arange(4), 0, 2.5, mean_predictor, Loss.mse())
        assert dec.weighted_loss == 0.0
        np.testing.assert_array_equal(dec.left_pred, [0.0])
        np.testing.assert_array_equal(dec.right_pred, [10.0])

    def test_unbalanced_split_value(self):
        dec = split_gain(FOUR_X, FOUR_Y, np.arange(4), 0, 1.5, mean_predictor, Loss.mse())
        assert dec.weighted_loss == pytest.approx(25.0 / 3.0)

    def test_constrained_predictor_clamps(self):
        box = FeasibleSet(1, ineq=[([1.0], 8.0)], nonneg=True)
        from ocrt import predict_constrained

        predictor = lambda rows: predict_constrained(rows, box, Loss.mse()).yhat
        dec = split_gain(FOUR_X, FOUR_Y, np.arange(4), 0, 2.5, predictor, Loss.mse())
        np.testing.assert_allclose(dec.right_pred, [8.0])
        assert dec.weighted_loss == pytest.approx(1.0)

    def test_undersized_child_rejected(self):
        with pytest.raises(SplitRejectedError):
            split_gain(FOUR_X, FOUR_Y, np.arange(4), 0, 1.5, mean_predictor, Loss.mse(),
                       min_samples_leaf=2)

    def test_weighted_loss_consistent_with_loss_eval(self):
        dec = split_gain(FOUR_X, FOUR_Y, np.arange(4), 0, 2.5, mean_predictor, Loss.mse())
        recomputed = (
            len(dec.left_indices) * loss_eval(Loss.mse(), dec.left_pred, FOUR_Y[dec.left_indices])
            + len(dec.right_indices) * loss_eval(Loss.mse(), dec.right_pred, FOUR_Y[dec.right_indices])
        ) / 4.0
        assert dec.weighted_loss == pytest.approx(recomputed, abs=1e-9)


class TestBestSplit:
    CFG = TrainConfig(method="cart", max_depth=3, min_samples_split=2, min_samples_leaf=1)

    def test_four_row_optimum(self):
        dec = best_split_exhaustive(FOUR_X, FOUR_Y, np.arange(4), self.CFG)
        assert (dec.feature, dec.threshold) == (0, 2.5)

    def test_constant_targets_yield_no_gain(self):
        y = np.ones((4, 1))
        dec = best_split_exhaustive(FOUR_X, y, np.arange(4), self.CFG)
        assert dec.weighted_loss == pytest.approx(0.0)
        tree = grow_tree(Dataset(FOUR_X, y), self.CFG)
        assert isinstance(tree.root, Leaf)

    def test_duplicate_feature_tie_breaks_to_lower_index(self):
        x = np.hstack([FOUR_X, FOUR_X])
        dec = best_split_exhaustive(x, FOUR_Y, np.arange(4), self.CFG)
        assert dec.feature == 0

    def test_undersized_node_returns_none(self):
        cfg = TrainConfig(method="cart", min_samples_split=10, min_samples_leaf=5)
        assert best_split_exhaustive(FOUR_X, FOUR_Y, np.arange(4), cfg) is None

    def test_matches_single_candidate_scan(self, rng):
        """The optimized enumeration equals a naive scan over split_gain calls."""
        for loss in (Loss.mse(), Loss.mad()):
            x = rng.integers(0, 8, size=(40, 3)) / 7.0
            y = rng.normal(size=(40, 2))
            cfg = TrainConfig(method="cart", max_depth=3, min_samples_split=4,
                              min_samples_leaf=2, loss=loss)
            dec = best_split_exhaustive(x, y, np.arange(40), cfg)
            best = None
            for j in range(3):
                for v in np.unique(x[:, j]):
                    mids = x[:, j][x[:, j] > v]
                    if not len(mids):
                        continue
                    threshold = (v + mids.min()) / 2.0
                    try:
                        cand = split_gain(x, y, np.arange(40), j, threshold,
                                          lambda r: predict_unconstrained(r, loss),
                                          loss, 2)
                    except SplitRejectedError:
                        continue
                    if best is None or cand.weighted_loss < best.weighted_loss:
                        best = cand
            assert dec.weighted_loss == pytest.approx(best.weighted_loss, abs=1e-12)
            assert (dec.feature, dec.threshold) == (best.feature, best.threshold)


class TestExactNodeOptimization:
    def test_same_output_as_exhaustive_constrained(self, rng):
        for _ in range(5):
            K = int(rng.integers(2, 4))
            fset = random_box_set(rng, K)
            x = rng.integers(0, 6, size=(30, 2)) / 5.0
            y = rng.normal(0.5, 0.4, size=(30, K))
            cfg = TrainConfig(method="e_ocrt", max_depth=3, min_samples_split=4,
                              min_samples_leaf=2, feasible_set=fset)
            cfg_m = replace(cfg, method="m_ocrt")
            a = best_split_exhaustive(x, y, np.arange(30), cfg)
            b = solve_split_mip_exact(x, y, np.arange(30), cfg_m)
            assert (a.feature, a.threshold) == (b.feature, b.threshold)
            np.testing.assert_array_equal(a.left_pred, b.left_pred)
            np.testing.assert_array_equal(a.right_pred, b.right_pred)

    def test_small_node_returns_none(self):
        fset = FeasibleSet(1, nonneg=True)
        cfg = TrainConfig(method="m_ocrt", feasible_set=fset)
        assert solve_split_mip_exact(FOUR_X, np.abs(FOUR_Y), np.arange(4), cfg) is None

    def test_requires_average_form_loss(self):
        fset = FeasibleSet(1, nonneg=True)
        with pytest.raises(ValueError):
            TrainConfig(method="m_ocrt", feasible_set=fset,
                        loss=Loss.weighted_linear([1.0]))
        cfg = TrainConfig(method="e_ocrt", feasible_set=fset,
                          loss=Loss.weighted_linear([1.0]),
                          min_samples_split=2, min_samples_leaf=1)
        with pytest.raises(UnsupportedError):
            solve_split_mip_exact(FOUR_X, np.abs(FOUR_Y), np.arange(4), cfg)

    def test_clamp_example(self):
        box = FeasibleSet(1, ineq=[([1.0], 8.0)], nonneg=True)
        cfg = TrainConfig(method="m_ocrt", max_depth=1, min_samples_split=2,
                          min_samples_leaf=1, feasible_set=box)
        dec = solve_split_mip_exact(FOUR_X, FOUR_Y, np.arange(4), cfg)
        assert (dec.feature, dec.threshold) == (0, 2.5)
        np.testing.assert_allclose(dec.left_pred, [0.0])
        np.testing.assert_allclose(dec.right_pred, [8.0])


class TestGrowTree:
    def test_depth_zero_single_leaf(self):
        cfg = TrainConfig(method="cart", max_depth=0, min_samples_split=2, min_samples_leaf=1)
        tree = grow_tree(Dataset(FOUR_X, FOUR_Y), cfg)
        assert isinstance(tree.root, Leaf)
        np.testing.assert_array_equal(tree.root.prediction, [5.0])

    def test_four_row_depth_one(self):
        cfg = TrainConfig(method="cart", max_depth=1, min_samples_split=2, min_samples_leaf=1)
        tree = grow_tree(Dataset(FOUR_X, FOUR_Y), cfg)
        assert isinstance(tree.root, Branch)
        assert tree.root.threshold == 2.5
        np.testing.assert_array_equal(tree_predict(tree, [2.4]), [0.0])
        np.testing.assert_array_equal(tree_predict(tree, [2.6]), [10.0])
        np.testing.assert_array_equal(tree_predict(tree, [2.5]), [10.0])

    def test_dimension_mismatch(self):
        cfg = TrainConfig(method="cart", max_depth=1, min_samples_split=2, min_samples_leaf=1)
        tree = grow_tree(Dataset(FOUR_X, FOUR_Y), cfg)
        with pytest.raises(ValueError):
            tree_predict(tree, [1.0, 2.0])

    def test_noise_free_convex_matches_baseline(self):
        ds, fs = feasible_synthetic()
        cart = grow_tree(ds, TrainConfig(method="cart", max_depth=4))
        e = grow_tree(ds, TrainConfig(method="e_ocrt", max_depth=4, feasible_set=fs))
        assert tree_to_json(cart) == tree_to_json(e).replace("e_ocrt", "cart")

    def test_methods_agree_exactly(self, rng):
        """Node-exact and exhaustive training build identical trees."""
        for _ in range(3):
            fset = random_box_set(rng, 2)
            x = rng.integers(0, 9, size=(60, 3)) / 8.0
            y = rng.normal(0.5, 0.5, size=(60, 2))
            ds = Dataset(x, y)
            e = grow_tree(ds, TrainConfig(method="e_ocrt", max_depth=3, feasible_set=fset))
            m = grow_tree(ds, TrainConfig(method="m_ocrt", max_depth=3, feasible_set=fset))
            assert tree_to_json(e) == tree_to_json(m).replace("m_ocrt", "e_ocrt")

    def test_strict_loss_decrease_and_size_bounds(self, rng):
        ds, fs = gen_synthetic(SyntheticRecipe(n=250, K=5, seed=11))
        cfg = TrainConfig(method="e_ocrt", max_depth=4, feasible_set=fs)
        tree = grow_tree(ds, cfg)

        def walk(node):
            if isinstance(node, Leaf):
                assert node.n_samples >= cfg.min_samples_leaf
                return
            assert node.n_samples >= cfg.min_samples_split
            child_loss = (
                sum(
                    c.n_samples * (c.train_loss if isinstance(c, Leaf) else c.train_loss)
                    for c in (node.left, node.right)
                )
                / node.n_samples
            )
            assert child_loss < node.train_loss - 1e-12
            walk(node.left)
            walk(node.right)

        walk(tree.root)

    def test_routing_consistency_on_training_rows(self):
        ds, fs = gen_synthetic(SyntheticRecipe(n=150, K=5, seed=2))
        tree = grow_tree(ds, TrainConfig(method="e_ocrt", max_depth=3, feasible_set=fs))
        preds = tree_predict_matrix(tree, ds.features)
        for leaf in iter_leaves(tree):
            np.testing.assert_array_equal(preds[leaf.indices],
                                          np.tile(leaf.prediction, (leaf.n_samples, 1)))

    def test_feasibility_far_outside_training_range(self, rng):
        ds, fs = gen_synthetic(SyntheticRecipe(n=200, K=5, seed=7))
        for method in ("e_ocrt", "m_ocrt", "ep_ocrt"):
            tree = train_tree(ds, TrainConfig(method=method, max_depth=3, feasible_set=fs))
            for x in rng.uniform(-50.0, 50.0, size=(25, ds.p)):
                assert check_feasibility(tree_predict(tree, x), fs, tol=1e-6).feasible

    def test_node_deadline_returns_best_found(self):
        ds, fs = gen_synthetic(SyntheticRecipe(n=400, K=5, seed=1))
        cfg = TrainConfig(method="e_ocrt", max_depth=2, feasible_set=fs,
                          node_time_budget=1e-7)
        tree = grow_tree(ds, cfg)
        assert tree.deadline_hits > 0
        assert tree_predict(tree, ds.features[0]).shape == (5,)


class TestPostprocessLeaves:
    def test_feasible_leaves_unchanged(self):
        ds, fs = feasible_synthetic(n=120)
        cart = grow_tree(ds, TrainConfig(method="cart", max_depth=3))
        repaired = postprocess_leaves(cart, ds, fs, Loss.mse())
        assert tree_to_json(repaired) == tree_to_json(cart)

    def test_leaf_projection_example(self):
        fs = build_synthetic_constraints(5)
        rows = np.tile([0.5, 0.5, 0.2, 0.1, 0.3], (6, 1))
        x = np.linspace(0, 1, 6).reshape(-1, 1)
        cart = grow_tree(Dataset(x, rows), TrainConfig(method="cart", max_depth=0,
                                                       min_samples_split=2, min_samples_leaf=1))
        repaired = postprocess_leaves(cart, Dataset(x, rows), fs, Loss.mse())
        np.testing.assert_allclose(repaired.root.prediction, [0.55, 0.45, 0.2, 0.1, 0.3],
                                   atol=1e-9)

    def test_hts_leaf_becomes_sparse(self):
        fs = build_hts_constraints(13, 15.0, 4, 15.0)
        rows = np.tile(15.0 / 13.0, (8, 13))
        x = np.linspace(0, 1, 8).reshape(-1, 1)
        cart = grow_tree(Dataset(x, rows), TrainConfig(method="cart", max_depth=0,
                                                       min_samples_split=2, min_samples_leaf=1))
        repaired = postprocess_leaves(cart, Dataset(x, rows), fs, Loss.mse())
        assert check_feasibility(repaired.root.prediction, fs).feasible
        assert np.sum(repaired.root.prediction > 1e-9) == 4

    def test_structure_unchanged_on_noisy_data(self):
        ds, fs = gen_synthetic(SyntheticRecipe(n=150, K=5, seed=4))
        cart = grow_tree(ds, TrainConfig(method="cart", max_depth=3))
        repaired = postprocess_leaves(cart, ds, fs, Loss.mse())

        def shape(node):
            if isinstance(node, Leaf):
                return ("leaf", node.n_samples)
            return ("branch", node.feature, node.threshold,
                    shape(node.left), shape(node.right))

        assert shape(repaired.root) == shape(cart.root)

    def test_requires_retained_indices(self):
        ds, fs = feasible_synthetic(n=60)
        cart = grow_tree(ds, TrainConfig(method="cart", max_depth=2))
        reloaded = tree_from_json(tree_to_json(cart))
        with pytest.raises(ValueError):
            postprocess_leaves(reloaded, ds, fs, Loss.mse())


class TestSerialization:
    def test_round_trip_identity(self):
        ds, fs = gen_synthetic(SyntheticRecipe(n=100, K=5, seed=9))
        tree = grow_tree(ds, TrainConfig(method="e_ocrt", max_depth=3, feasible_set=fs))
        text = tree_to_json(tree)
        assert tree_to_json(tree_from_json(text)) == text

    def test_predictions_survive_round_trip(self):
        ds, _ = gen_synthetic(SyntheticRecipe(n=100, K=5, seed=9))
        tree = grow_tree(ds, TrainConfig(method="cart", max_depth=3))
        clone = tree_from_json(tree_to_json(tree))
        np.testing.assert_array_equal(
            tree_predict_matrix(tree, ds.features), tree_predict_matrix(clone, ds.features)
        )

    def test_seeded_determinism(self):
        ds, fs = gen_hts(__import__("ocrt").HtsRecipe(big_m=15.0, n=120, seed=5))
        cfg = TrainConfig(method="e_ocrt", max_depth=3, feasible_set=fs, rng_seed=42)
        assert tree_to_json(grow_tree(ds, cfg)) == tree_to_json(grow_tree(ds, cfg))


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(method="nope")
        with pytest.raises(ValueError):
            TrainConfig(method="e_ocrt")  # feasible set missing
        with pytest.raises(ValueError):
            TrainConfig(min_samples_split=5, min_samples_leaf=5)
