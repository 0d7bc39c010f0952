"""Downstream knapsack, regret metrics, and end-to-end leaf prediction."""

import numpy as np
import pytest

from ocrt import (
    FeasibleSet,
    TwoGroupKnapsack,
    check_feasibility,
    end_to_end_leaf_prediction,
    regret_metrics,
    solve_downstream,
)
from ocrt.datagen import build_synthetic_constraints
from ocrt.oracle import brute_force_downstream_oracle, brute_force_end_to_end_oracle

from conftest import random_rows


def bounded_set(K: int, eq=None) -> FeasibleSet:
    return FeasibleSet(K, eq=eq or [], ineq=[(r, 1.0) for r in np.eye(K)], nonneg=True)


class TestSolveDownstream:
    def test_example(self):
        ks = TwoGroupKnapsack(4)
        np.testing.assert_array_equal(
            solve_downstream(np.array([3.0, 1.0, 2.0, 5.0]), ks), [100.0, 0.0, 0.0, 10.0]
        )

    def test_all_negative_gives_zero(self):
        ks = TwoGroupKnapsack(5)
        np.testing.assert_array_equal(solve_downstream(-np.ones(5), ks), np.zeros(5))

    def test_tie_picks_lowest_index_per_group(self):
        ks = TwoGroupKnapsack(4)
        q = solve_downstream(np.full(4, 2.0), ks)
        np.testing.assert_array_equal(q, [100.0, 0.0, 10.0, 0.0])

    def test_matches_vertex_oracle(self, rng):
        for _ in range(60):
            K = int(rng.integers(2, 7))
            ks = TwoGroupKnapsack(K)
            y = rng.uniform(-1.0, 1.0, K)
            np.testing.assert_array_equal(ks.solve(y), brute_force_downstream_oracle(y, ks))

    def test_validation(self):
        with pytest.raises(ValueError):
            TwoGroupKnapsack(1)
        with pytest.raises(ValueError):
            TwoGroupKnapsack(4, cap_first=0.0)
        with pytest.raises(ValueError):
            TwoGroupKnapsack(4).solve(np.zeros(3))


class TestRegretMetrics:
    def test_zero_when_optimal(self):
        y = np.array([[3.0, 1.0, 2.0, 5.0]])
        q = np.array([[100.0, 0.0, 0.0, 10.0]])
        assert regret_metrics(y, q, q[0]) == (0.0, 0.0)

    def test_single_instance_gap(self):
        y = np.array([[3.0, 1.0, 2.0, 5.0]])
        q_true = np.array([[100.0, 0.0, 0.0, 10.0]])
        q_hat = np.array([0.0, 100.0, 0.0, 10.0])
        assert regret_metrics(y, q_true, q_hat) == (200.0, 40000.0)

    def test_nonnegative_for_feasible_allocations(self, rng):
        ks = TwoGroupKnapsack(4)
        for _ in range(40):
            y = rng.uniform(-1.0, 1.0, (6, 4))
            q_true = np.array([ks.solve(r) for r in y])
            k1 = int(rng.integers(0, 2))
            k2 = int(rng.integers(2, 4))
            q_hat = ks.allocation(k1 if rng.random() < 0.8 else None,
                                  k2 if rng.random() < 0.8 else None)
            per_row = np.einsum("ij,ij->i", y, q_true) - y @ q_hat
            assert np.all(per_row >= -1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            regret_metrics(np.ones((2, 3)), np.ones((2, 3)), np.ones(4))


class TestEndToEndLeafPrediction:
    def test_degenerate_single_point_set(self):
        point = np.array([0.7, 0.2, 0.4, 0.1])
        fset = FeasibleSet(4, eq=[(row, float(row @ point)) for row in np.eye(4)], nonneg=True)
        ks = TwoGroupKnapsack(4)
        rows = random_rows(np.random.default_rng(3), 5, 4)
        q_true = np.array([ks.solve(r) for r in rows])
        res, q_hat = end_to_end_leaf_prediction(rows, q_true, fset, ks)
        np.testing.assert_allclose(res.yhat, point, atol=1e-8)
        np.testing.assert_array_equal(q_hat, ks.solve(point))

    def test_consensus_vertex_reaches_zero_regret(self):
        ks = TwoGroupKnapsack(4)
        fset = bounded_set(4)
        rows = np.tile([0.9, 0.1, 0.8, 0.2], (6, 1))
        q_true = np.array([ks.solve(r) for r in rows])
        res, q_hat = end_to_end_leaf_prediction(rows, q_true, fset, ks)
        np.testing.assert_array_equal(q_hat, q_true[0])
        assert res.objective == pytest.approx(0.0, abs=1e-12)

    def test_equality_gap_blocks_second_item(self, rng):
        """Sets forcing y1 > y2 never admit allocations on the second item."""
        fset = build_synthetic_constraints(5)
        ks = TwoGroupKnapsack(5)
        for _ in range(5):
            rows = random_rows(rng, 10, 5)
            rows[:, 1] += 5.0  # data favors item 2, the set still forbids it
            q_true = np.array([ks.solve(r) for r in rows])
            res, q_hat = end_to_end_leaf_prediction(rows, q_true, fset, ks)
            assert q_hat[1] == 0.0
            assert check_feasibility(res.yhat, fset).feasible

    def test_output_invariants(self, rng):
        ks = TwoGroupKnapsack(4)
        fset = bounded_set(4, eq=[([1.0, 1.0, 0.0, 0.0], 1.0)])
        for _ in range(10):
            rows = random_rows(rng, 8, 4)
            q_true = np.array([ks.solve(r) for r in rows])
            res, q_hat = end_to_end_leaf_prediction(rows, q_true, fset, ks)
            assert check_feasibility(res.yhat, fset, tol=1e-6).feasible
            snapped = np.where(np.abs(res.yhat) < 1e-9, 0.0, res.yhat)
            np.testing.assert_array_equal(ks.solve(snapped), q_hat)
            gaps = np.einsum("ij,ij->i", rows, q_true) - rows @ q_hat
            assert res.objective == pytest.approx(float(np.mean(gaps**2)), rel=1e-12)

    def test_matches_grid_oracle(self, rng):
        ks = TwoGroupKnapsack(4)
        fset = bounded_set(4, eq=[([1.0, 1.0, 0.0, 0.0], 1.0)])
        for _ in range(10):
            rows = np.round(random_rows(rng, 6, 4), 2)
            q_true = np.array([ks.solve(r) for r in rows])
            res, q_hat = end_to_end_leaf_prediction(rows, q_true, fset, ks)
            ores, oq = brute_force_end_to_end_oracle(rows, q_true, fset, ks, grid_step=0.05)
            np.testing.assert_array_equal(q_hat, oq)
            assert res.objective == pytest.approx(ores.objective, rel=1e-12)
