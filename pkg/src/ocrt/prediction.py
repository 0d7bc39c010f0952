"""Constrained prediction: the minimizer of a summed loss over a feasible set.

For squared error on a convex set this reduces to projecting the row mean.
Cardinality-restricted sets are solved to global optimality by enumerating
candidate supports. Weighted-linear losses project onto the target level set
when it is attainable and otherwise solve a lightly regularized quadratic.
Absolute-error and Poisson losses on convex sets fall back to projected
(sub)gradient descent.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

from .data import (
    STATUS_ITER_LIMIT,
    STATUS_OPTIMAL,
    FeasibleSet,
    InfeasibleSetError,
    Loss,
    PredictionResult,
    UnsupportedError,
    check_feasibility,
    loss_eval,
)
from .projection import project_capped_simplex, project_polyhedron, solve_qp_active_set

_EXACT_TOL = 1e-9
_TIE_TOL = 1e-12

# Beyond this size the full support enumeration is replaced by a greedy
# heuristic (top coordinates of the mean), flagged through the status field.
_ENUM_LIMIT_DIM = 25
_ENUM_LIMIT_SUPPORT = 5


def _as_rows(targets) -> np.ndarray:
    y = np.atleast_2d(np.asarray(targets, dtype=float))
    if y.shape[0] == 0:
        raise ValueError("prediction requires at least one target row")
    return y


def predict_unconstrained(targets, loss: Loss) -> np.ndarray:
    """Unconstrained minimizer: columnwise mean, or median for absolute error."""
    y = _as_rows(targets)
    if loss.kind == "mad":
        return np.median(y, axis=0)
    return y.mean(axis=0)


@lru_cache(maxsize=32)
def _support_matrix(dim: int, size: int) -> np.ndarray:
    """All supports of the given size in lexicographic order, as an index matrix."""
    return np.array(list(itertools.combinations(range(dim), size)), dtype=int)


def _cardinality_best_vector(mean: np.ndarray, fset: FeasibleSet):
    """Best feasible vector for the squared loss given only the subset mean.

    Among all supports the squared loss differs from ||yhat - mean||^2 by a
    subset constant, so ranking candidate supports needs the mean alone.
    Returns (yhat, support, status).
    """
    card = fset.cardinality
    if card is None:
        raise ValueError("cardinality restriction is absent")
    dim = fset.dim
    size = min(card.max_support, dim)

    if dim > _ENUM_LIMIT_DIM and card.max_support > _ENUM_LIMIT_SUPPORT:
        support = np.sort(np.argsort(-mean, kind="stable")[:size])
        yhat = _restricted_solve(mean, fset, support)
        return yhat, tuple(int(i) for i in support), STATUS_ITER_LIMIT

    structure = fset.uniform_sum_structure()
    if structure is not None:
        total, upper = structure
        if total > size * upper + 1e-9:
            raise InfeasibleSetError(
                f"sum {total} exceeds {size} coordinates capped at {upper}"
            )
        supports = _support_matrix(dim, size)
        sub_means = mean[supports]
        proj = project_capped_simplex(sub_means, total, upper)
        mean_sq = float(mean @ mean)
        on_terms = ((proj - sub_means) ** 2).sum(axis=1) - (sub_means**2).sum(axis=1)
        dist2 = on_terms + mean_sq
        best = int(np.flatnonzero(dist2 <= dist2.min() + _TIE_TOL)[0])
        yhat = np.zeros(dim)
        yhat[supports[best]] = proj[best]
        return yhat, tuple(int(i) for i in supports[best]), STATUS_OPTIMAL

    best_support = None
    best_dist2 = np.inf
    best_vec = None
    for support in _support_matrix(dim, size):
        try:
            yhat = _restricted_solve(mean, fset, support)
        except InfeasibleSetError:
            continue
        dist2 = float(np.sum((yhat - mean) ** 2))
        if dist2 < best_dist2 - _TIE_TOL:
            best_dist2, best_support, best_vec = dist2, support, yhat
    if best_vec is None:
        raise InfeasibleSetError("no support admits a feasible prediction")
    return best_vec, tuple(int(i) for i in best_support), STATUS_OPTIMAL


def _restricted_solve(mean: np.ndarray, fset: FeasibleSet, support) -> np.ndarray:
    sub = fset.restricted_to_support(support)
    res = project_polyhedron(mean[np.asarray(support)], sub)
    yhat = np.zeros(fset.dim)
    yhat[np.asarray(support)] = res.yhat
    return yhat


def solve_cardinality_prediction(targets, fset: FeasibleSet, loss: Loss | None = None) -> PredictionResult:
    """Globally optimal squared-loss prediction under a cardinality restriction.

    Enumerates every support of the maximal admissible size (smaller supports
    are dominated), solves the restricted convex problem for each, and keeps
    the lexicographically smallest optimal support.
    """
    loss = loss or Loss.mse()
    if loss.kind != "mse":
        raise UnsupportedError("cardinality prediction supports the squared loss only")
    y = _as_rows(targets)
    mean = y.mean(axis=0)
    yhat, support, status = _cardinality_best_vector(mean, fset)
    return PredictionResult(yhat, loss_eval(loss, yhat, y), support, status)


def weighted_loss_prediction(targets, weights, fset: FeasibleSet) -> PredictionResult:
    """Minimize the squared gap between w'yhat and the mean of w'y_i over the set.

    When the target level is attainable the answer is the projection of the
    row mean onto the set intersected with that level. Otherwise a slightly
    regularized quadratic finds the nearest attainable level and, among its
    minimizers, the point nearest the row mean.
    """
    if not fset.is_convex:
        raise UnsupportedError("weighted-linear prediction requires a convex set")
    y = _as_rows(targets)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != fset.dim or not np.any(w != 0):
        raise ValueError("weight vector must have the set's dimension and a nonzero entry")
    loss = Loss.weighted_linear(w)
    mean = y.mean(axis=0)
    target_level = float(np.mean(y @ w))

    try:
        res = project_polyhedron(mean, fset.with_rows(extra_eq=[(w, target_level)]))
        return PredictionResult(res.yhat, loss_eval(loss, res.yhat, y), None, res.status)
    except InfeasibleSetError:
        pass

    # Level unattainable (or attainable only on a degenerate face): the
    # regularized quadratic (w w' + eps I) drives w'y to the nearest
    # attainable level while the eps term selects, among its minimizers, the
    # point nearest the row mean. eps is small enough that the deviation from
    # the exact tie-broken optimum is far below every stated tolerance.
    eps = 1e-8 * float(w @ w)
    h = np.outer(w, w) + eps * np.eye(fset.dim)
    g = target_level * w + eps * mean
    a_in, b_in = fset.inequality_system()
    y_reg, status = solve_qp_active_set(h, g, fset.A_eq, fset.b_eq, a_in, b_in)
    return PredictionResult(y_reg, loss_eval(loss, y_reg, y), None, status)


def _projected_subgradient_mad(y: np.ndarray, fset: FeasibleSet, max_iter: int = 10000):
    start = project_polyhedron(np.median(y, axis=0), fset)
    cur = start.yhat
    avg = cur.copy()
    loss = Loss.mad()
    best_vec, best_obj = avg.copy(), loss_eval(loss, avg, y)
    scale = 0.5 * (float(np.ptp(y)) + 1e-9)
    prev = np.inf
    status = STATUS_ITER_LIMIT
    for t in range(1, max_iter + 1):
        grad = np.mean(np.sign(cur - y), axis=0)
        step = scale / np.sqrt(t)
        cur = project_polyhedron(cur - step * grad, fset).yhat
        avg += (cur - avg) / (t + 1.0)
        if t % 25 == 0 or t == max_iter:
            obj = loss_eval(loss, avg, y)
            if obj < best_obj:
                best_obj, best_vec = obj, avg.copy()
            if t >= 200 and abs(prev - obj) <= 1e-9 * (1.0 + abs(obj)):
                status = STATUS_OPTIMAL
                break
            prev = obj
    return best_vec, best_obj, status


def _projected_gradient_poisson(y: np.ndarray, fset: FeasibleSet, max_iter: int = 10000):
    mean = y.mean(axis=0)
    floor = 1e-9
    cur = np.maximum(project_polyhedron(mean, fset).yhat, floor)
    loss = Loss.poisson()
    best_vec, best_obj = cur.copy(), loss_eval(loss, cur, y)
    scale = 0.25 * (float(np.max(mean)) + 1e-9)
    prev = np.inf
    status = STATUS_ITER_LIMIT
    for t in range(1, max_iter + 1):
        grad = 1.0 - mean / cur
        step = scale / np.sqrt(t)
        cur = np.maximum(project_polyhedron(cur - step * grad, fset).yhat, floor)
        if t % 25 == 0 or t == max_iter:
            obj = loss_eval(loss, cur, y)
            if obj < best_obj:
                best_obj, best_vec = obj, cur.copy()
            if t >= 200 and abs(prev - obj) <= 1e-9 * (1.0 + abs(obj)):
                status = STATUS_OPTIMAL
                break
            prev = obj
    return best_vec, best_obj, status


def predict_constrained(targets, fset: FeasibleSet, loss: Loss) -> PredictionResult:
    """Dispatch the constrained prediction problem for a subset of target rows."""
    y = _as_rows(targets)
    if y.shape[1] != fset.dim:
        raise ValueError("target dimension disagrees with the feasible set")

    if loss.kind == "mse":
        if fset.cardinality is not None:
            return solve_cardinality_prediction(y, fset, loss)
        mean = y.mean(axis=0)
        res = project_polyhedron(mean, fset)
        return PredictionResult(res.yhat, loss_eval(loss, res.yhat, y), None, res.status)

    if loss.kind == "weighted":
        return weighted_loss_prediction(y, loss.weights, fset)

    if loss.kind == "regret":
        if not fset.is_convex:
            raise UnsupportedError("downstream-regret prediction requires a convex set")
        from .downstream import end_to_end_leaf_prediction

        knapsack = loss.downstream
        q_true = np.array([knapsack.solve(row) for row in y])
        result, _ = end_to_end_leaf_prediction(y, q_true, fset, knapsack)
        return result

    if loss.kind == "mad":
        if not fset.is_convex:
            raise UnsupportedError("absolute-error prediction on non-convex sets")
        median = np.median(y, axis=0)
        if check_feasibility(median, fset, tol=_EXACT_TOL).feasible:
            return PredictionResult(median, loss_eval(loss, median, y))
        vec, obj, status = _projected_subgradient_mad(y, fset)
        return PredictionResult(vec, obj, None, status)

    if loss.kind == "poisson":
        if not fset.is_convex:
            raise UnsupportedError("poisson prediction on non-convex sets")
        mean = y.mean(axis=0)
        if np.all(mean > 0) and check_feasibility(mean, fset, tol=_EXACT_TOL).feasible:
            return PredictionResult(mean, loss_eval(loss, mean, y))
        vec, obj, status = _projected_gradient_poisson(y, fset)
        return PredictionResult(vec, obj, None, status)

    raise UnsupportedError(f"no constrained solver for loss kind {loss.kind!r}")
