"""Downstream two-group continuous knapsack and end-to-end leaf prediction.

The downstream task allocates capacity to at most one item per group, which
makes its optimal solutions a small explicit vertex family. Leaf-level
end-to-end prediction therefore reduces to enumerating those vertices,
testing each for compatibility with the feasible set (is there a feasible
prediction that makes the vertex downstream-optimal?), and keeping the one
with the smallest squared regret on the leaf's rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (
    STATUS_OPTIMAL,
    FeasibleSet,
    InfeasibleSetError,
    PredictionResult,
    UnsupportedError,
)
from .projection import project_polyhedron

_TIE_TOL = 1e-12
_ZERO_TOL = 1e-9

# Margin making a candidate's witness respect the downstream tie-breaks
# deterministically: the chosen item must strictly beat every other item in
# its group and be strictly profitable, else exact ties at a projection
# boundary would let floating-point noise decide the allocation. Slightly
# conservative: candidates realizable only through exact within-group ties
# are excluded (the two-stage fallback still covers such sets).
_ORDER_MARGIN = 1e-6


@dataclass(frozen=True)
class TwoGroupKnapsack:
    """Profit-maximizing continuous knapsack with two group capacities.

    Items 0 .. floor(K/2)-1 share the first capacity, the remaining items the
    second. Per group, the whole capacity goes to the most profitable item
    when its profit is positive (lowest index on ties), otherwise nothing.
    Profits within 1e-9 of the group maximum count as tied and profits below
    1e-9 as nonpositive, so floating-point noise cannot flip the allocation.
    """

    n_items: int
    cap_first: float = 100.0
    cap_second: float = 10.0

    def __post_init__(self) -> None:
        if self.n_items < 2:
            raise ValueError("need at least two items to form two groups")
        if self.cap_first <= 0 or self.cap_second <= 0:
            raise ValueError("capacities must be positive")

    @property
    def split(self) -> int:
        return self.n_items // 2

    def groups(self) -> tuple[np.ndarray, np.ndarray]:
        return np.arange(self.split), np.arange(self.split, self.n_items)

    def solve(self, y: np.ndarray) -> np.ndarray:
        """Optimal allocation for profit vector y."""
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self.n_items:
            raise ValueError("profit vector length disagrees with item count")
        q = np.zeros(self.n_items)
        for idx, cap in zip(self.groups(), (self.cap_first, self.cap_second)):
            seg = y[idx]
            top = float(seg.max())
            if top > _ZERO_TOL:
                j = int(np.argmax(seg >= top - _ZERO_TOL))
                q[idx[j]] = cap
        return q

    def allocation(self, k1: int | None, k2: int | None) -> np.ndarray:
        q = np.zeros(self.n_items)
        if k1 is not None:
            q[k1] = self.cap_first
        if k2 is not None:
            q[k2] = self.cap_second
        return q

    def vertex_candidates(self):
        """All optimal-solution supports, as (k1, k2) index pairs with None = skip."""
        g1, g2 = self.groups()
        for k1 in g1:
            for k2 in g2:
                yield int(k1), int(k2)
        for k1 in g1:
            yield int(k1), None
        for k2 in g2:
            yield None, int(k2)
        yield None, None


def solve_downstream(y: np.ndarray, knapsack: TwoGroupKnapsack) -> np.ndarray:
    """Optimal downstream allocation for a profit vector."""
    return knapsack.solve(y)


def regret_metrics(y_rows, q_true_rows, q_hat) -> tuple[float, float]:
    """Mean regret and mean squared regret of one allocation against true optima."""
    y = np.atleast_2d(np.asarray(y_rows, dtype=float))
    q_true = np.atleast_2d(np.asarray(q_true_rows, dtype=float))
    q_hat = np.asarray(q_hat, dtype=float).reshape(-1)
    if y.shape != q_true.shape or y.shape[1] != q_hat.shape[0]:
        raise ValueError("regret inputs have mismatched dimensions")
    gaps = np.einsum("ij,ij->i", y, q_true) - y @ q_hat
    return float(np.mean(gaps)), float(np.mean(gaps**2))


def _order_rows(dim: int, group: np.ndarray, chosen: int | None):
    """Inequality rows pinning the group maximum at the chosen index.

    A skipped group (chosen is None) must not offer positive profit, so every
    coordinate in it is bounded above by zero. A chosen item must strictly
    beat every other item in its group and be strictly profitable.
    """
    rows = []
    for j in group:
        if chosen is None:
            a = np.zeros(dim)
            a[j] = 1.0
            rows.append((a, 0.0))
        elif j != chosen:
            a = np.zeros(dim)
            a[j] = 1.0
            a[chosen] = -1.0
            rows.append((a, -_ORDER_MARGIN))
    if chosen is not None:
        a = np.zeros(dim)
        a[chosen] = -1.0
        rows.append((a, -_ORDER_MARGIN))
    return rows


def end_to_end_leaf_prediction(
    targets,
    q_true,
    fset: FeasibleSet,
    knapsack: TwoGroupKnapsack,
) -> tuple[PredictionResult, np.ndarray]:
    """Joint leaf prediction and downstream decision minimizing squared regret.

    For each candidate vertex the witness prediction is the projection of the
    leaf mean onto the set restricted by the group-order inequalities; the
    candidate counts only when the downstream solver maps the witness back to
    the same allocation, so the returned pair is always mutually consistent.
    The projection of the unrestricted mean (the plain two-stage answer) is
    kept as a final candidate, which also covers degenerate tie cases.
    """
    y = np.atleast_2d(np.asarray(targets, dtype=float))
    q_true = np.atleast_2d(np.asarray(q_true, dtype=float))
    if not fset.is_convex:
        raise UnsupportedError("end-to-end prediction requires a convex set")
    mean = y.mean(axis=0)
    true_values = np.einsum("ij,ij->i", y, q_true)
    g1, g2 = knapsack.groups()

    def squared_regret(q: np.ndarray) -> float:
        return float(np.mean((true_values - y @ q) ** 2))

    best: tuple[np.ndarray, np.ndarray, float] | None = None
    for k1, k2 in knapsack.vertex_candidates():
        rows = _order_rows(fset.dim, g1, k1) + _order_rows(fset.dim, g2, k2)
        try:
            witness = project_polyhedron(mean, fset, extra_ineq=rows)
        except InfeasibleSetError:
            continue
        if witness.status != STATUS_OPTIMAL:
            continue
        q = knapsack.allocation(k1, k2)
        snapped = np.where(np.abs(witness.yhat) < _ZERO_TOL, 0.0, witness.yhat)
        if not np.array_equal(knapsack.solve(snapped), q):
            continue
        obj = squared_regret(q)
        if best is None or obj < best[2] - _TIE_TOL:
            best = (witness.yhat, q, obj)

    two_stage = project_polyhedron(mean, fset)
    q0 = knapsack.solve(np.where(np.abs(two_stage.yhat) < _ZERO_TOL, 0.0, two_stage.yhat))
    obj0 = squared_regret(q0)
    if best is None or obj0 < best[2] - _TIE_TOL:
        best = (two_stage.yhat, q0, obj0)

    yhat, q_hat, objective = best
    return PredictionResult(yhat, objective, None, STATUS_OPTIMAL), q_hat
