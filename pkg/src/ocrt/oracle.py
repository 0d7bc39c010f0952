"""Brute-force grid oracles, kept independent of the production solvers.

These exist purely as test support: they settle small prediction problems by
exhaustive enumeration over a feasibility-filtered grid and never share
numerical machinery with the solvers they check. Limited to four targets.
"""

from __future__ import annotations

import itertools

import numpy as np

from .data import (
    FeasibleSet,
    InfeasibleSetError,
    Loss,
    PredictionResult,
    UnsupportedError,
)

_GRID_FEAS_TOL = 1e-9
_MAX_CANDIDATES = 4_000_000


def _reduced_row_echelon(a: np.ndarray, b: np.ndarray, tol: float = 1e-10):
    """Return (reduced A, reduced b, pivot columns); raises on inconsistency."""
    a = a.astype(float).copy()
    b = b.astype(float).copy()
    rows, cols = a.shape
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        piv = r + int(np.argmax(np.abs(a[r:, c])))
        if abs(a[piv, c]) <= tol:
            continue
        a[[r, piv]] = a[[piv, r]]
        b[[r, piv]] = b[[piv, r]]
        b[r] /= a[r, c]
        a[r] /= a[r, c]
        for i in range(rows):
            if i != r and abs(a[i, c]) > 0:
                b[i] -= a[i, c] * b[r]
                a[i] -= a[i, c] * a[r]
        pivots.append(c)
        r += 1
    if np.any(np.abs(b[r:]) > tol):
        raise InfeasibleSetError("equality system is inconsistent")
    return a[:r], b[:r], pivots


def _coordinate_box(fset: FeasibleSet, targets: np.ndarray):
    """Per-coordinate [lb, ub] derived from single-coordinate rows and bounds.

    Coordinates without a derivable bound fall back to a data-driven box; the
    oracle is only meaningful when the optimum lies inside the box.
    """
    fallback = max(1.0, 2.0 * float(np.max(np.abs(targets))))
    lb = np.where(fset.nonneg, 0.0, -fallback)
    ub = np.full(fset.dim, fallback)
    for a, b in zip(fset.A_in, fset.b_in):
        nz = np.flatnonzero(a)
        if len(nz) != 1:
            continue
        k, coef = int(nz[0]), a[nz[0]]
        if coef > 0:
            ub[k] = min(ub[k], b / coef)
        else:
            lb[k] = max(lb[k], b / coef)
    if fset.cardinality is not None:
        ub = np.minimum(ub, fset.cardinality.big_m)
    if fset.n_eq == 1 and fset.nonneg.all():
        row, rhs = fset.A_eq[0], fset.b_eq[0]
        if np.all(row > 0):
            ub = np.minimum(ub, rhs / row)
    return lb, ub


def _axis_values(lb: float, ub: float, step: float) -> np.ndarray:
    count = int(np.floor((ub - lb) / step + 1e-9)) + 1
    return lb + step * np.arange(max(count, 1))


def _feasible_grid(fset: FeasibleSet, targets: np.ndarray, step: float) -> np.ndarray:
    """All grid points of the (convex part of the) set, free dims gridded."""
    lb, ub = _coordinate_box(fset, targets)
    a_red, b_red, pivots = _reduced_row_echelon(fset.A_eq, fset.b_eq)
    free = [c for c in range(fset.dim) if c not in pivots]

    axes = [_axis_values(lb[c], ub[c], step) for c in free]
    n_candidates = int(np.prod([len(ax) for ax in axes])) if axes else 1
    if n_candidates > _MAX_CANDIDATES:
        raise UnsupportedError("grid too large; increase grid_step")
    if axes:
        mesh = np.meshgrid(*axes, indexing="ij")
        free_vals = np.stack([m.ravel() for m in mesh], axis=1)
    else:
        free_vals = np.zeros((1, 0))

    cand = np.zeros((len(free_vals), fset.dim))
    cand[:, free] = free_vals
    if pivots:
        dep = b_red[None, :] - free_vals @ a_red[:, free].T
        cand[:, pivots] = dep

    keep = np.ones(len(cand), dtype=bool)
    keep &= np.all(cand >= lb - _GRID_FEAS_TOL, axis=1)
    keep &= np.all(cand <= ub + _GRID_FEAS_TOL, axis=1)
    if fset.n_eq:
        keep &= np.all(np.abs(cand @ fset.A_eq.T - fset.b_eq) <= _GRID_FEAS_TOL, axis=1)
    a_in, b_in = fset.inequality_system()
    if len(b_in):
        keep &= np.all(cand @ a_in.T - b_in <= _GRID_FEAS_TOL, axis=1)
    return cand[keep]


def _loss_on_candidates(cand: np.ndarray, loss: Loss, targets: np.ndarray) -> np.ndarray:
    m = targets.shape[0]
    if loss.kind == "mse":
        sq_mean = float(np.mean(np.sum(targets**2, axis=1)))
        mean = targets.mean(axis=0)
        return 0.5 * (np.sum(cand**2, axis=1) - 2.0 * cand @ mean + sq_mean)
    if loss.kind == "mad":
        out = np.empty(len(cand))
        chunk = max(1, 200_000 // max(m, 1))
        for s in range(0, len(cand), chunk):
            block = cand[s : s + chunk]
            out[s : s + chunk] = np.abs(block[:, None, :] - targets[None]).sum(axis=(1, 2)) / m
        return out
    if loss.kind == "poisson":
        if np.any(targets < 0):
            raise ValueError("poisson oracle requires nonnegative targets")
        mean = targets.mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            const = float(np.mean(np.sum(np.where(targets > 0, targets * np.log(np.where(targets > 0, targets, 1.0)), 0.0), axis=1)))
        vals = np.full(len(cand), np.inf)
        ok = np.all(cand > 0, axis=1)
        vals[ok] = const - np.log(cand[ok]) @ mean + np.sum(cand[ok], axis=1) - float(mean.sum())
        return vals
    if loss.kind == "weighted":
        w = loss.weights
        levels = targets @ w
        return (cand @ w) ** 2 - 2.0 * (cand @ w) * float(levels.mean()) + float(np.mean(levels**2))
    raise UnsupportedError(f"oracle cannot evaluate loss kind {loss.kind!r}")


def brute_force_prediction_oracle(
    targets, fset: FeasibleSet, loss: Loss, grid_step: float
) -> PredictionResult:
    """Exhaustive grid minimizer of the summed loss over the feasible set.

    Cardinality sets are handled by exact support enumeration with the grid
    applied on-support. Ties go to the earliest candidate in lexicographic
    order. Raises when no grid point is feasible.
    """
    if fset.dim > 4:
        raise UnsupportedError("oracle supports at most four targets")
    y = np.atleast_2d(np.asarray(targets, dtype=float))

    if loss.kind == "regret":
        result, _ = brute_force_end_to_end_oracle(
            y, None, fset, loss.downstream, grid_step
        )
        return result

    if fset.cardinality is not None:
        size = min(fset.cardinality.max_support, fset.dim)
        best = None
        for support in itertools.combinations(range(fset.dim), size):
            sub = fset.restricted_to_support(support)
            cand_sub = _feasible_grid(sub, y[:, support], grid_step)
            if not len(cand_sub):
                continue
            cand = np.zeros((len(cand_sub), fset.dim))
            cand[:, list(support)] = cand_sub
            vals = _loss_on_candidates(cand, loss, y)
            j = int(np.argmin(vals))
            if best is None or vals[j] < best[0] - 1e-12:
                best = (float(vals[j]), cand[j], tuple(support))
        if best is None:
            raise InfeasibleSetError("no feasible grid point in any support")
        obj, vec, support = best
        return PredictionResult(vec, obj, support)

    cand = _feasible_grid(fset, y, grid_step)
    if not len(cand):
        raise InfeasibleSetError("no feasible grid point")
    vals = _loss_on_candidates(cand, loss, y)
    j = int(np.argmin(vals))
    return PredictionResult(cand[j], float(vals[j]))


def brute_force_downstream_oracle(y, knapsack) -> np.ndarray:
    """Best vertex allocation by explicit enumeration, ties to fewer/earlier items."""
    y = np.asarray(y, dtype=float).reshape(-1)
    g1, g2 = knapsack.groups()
    candidates = [(None, None)]
    candidates += [(int(k), None) for k in g1]
    candidates += [(None, int(k)) for k in g2]
    candidates += [(int(a), int(b)) for a in g1 for b in g2]
    best_q, best_v = None, -np.inf
    for k1, k2 in candidates:
        q = knapsack.allocation(k1, k2)
        v = float(y @ q)
        if v > best_v + 1e-12:
            best_q, best_v = q, v
    return best_q


def brute_force_end_to_end_oracle(
    targets, q_true, fset: FeasibleSet, knapsack, grid_step: float
):
    """Grid mirror of the end-to-end leaf problem.

    Admissibility of a vertex is decided by scanning the feasible grid for a
    point satisfying the group-order restrictions; the witness is the
    admissible grid point closest to the row mean and must map back to the
    vertex under the downstream solver.
    """
    if fset.dim > 4:
        raise UnsupportedError("oracle supports at most four targets")
    y = np.atleast_2d(np.asarray(targets, dtype=float))
    if q_true is None:
        q_true = np.array([brute_force_downstream_oracle(row, knapsack) for row in y])
    q_true = np.atleast_2d(np.asarray(q_true, dtype=float))
    mean = y.mean(axis=0)
    true_values = np.einsum("ij,ij->i", y, q_true)
    grid = _feasible_grid(fset, y, grid_step)
    if not len(grid):
        raise InfeasibleSetError("no feasible grid point")
    g1, g2 = knapsack.groups()

    def group_mask(points, group, chosen):
        if chosen is None:
            return np.all(points[:, group] <= _GRID_FEAS_TOL, axis=1)
        top = points[:, chosen]
        mask = top >= 1e-6  # chosen item strictly profitable
        for j in group:
            if j != chosen:  # chosen strictly beats every other group item
                mask &= points[:, j] <= top - 1e-6
        return mask

    best = None
    for k1, k2 in knapsack.vertex_candidates():
        mask = group_mask(grid, g1, k1) & group_mask(grid, g2, k2)
        if not mask.any():
            continue
        pts = grid[mask]
        witness = pts[int(np.argmin(np.sum((pts - mean) ** 2, axis=1)))]
        q = knapsack.allocation(k1, k2)
        snapped = np.where(np.abs(witness) < 1e-9, 0.0, witness)
        if not np.array_equal(knapsack.solve(snapped), q):
            continue
        obj = float(np.mean((true_values - y @ q) ** 2))
        if best is None or obj < best[2] - 1e-12:
            best = (witness, q, obj)

    two_stage = grid[int(np.argmin(np.sum((grid - mean) ** 2, axis=1)))]
    q0 = knapsack.solve(np.where(np.abs(two_stage) < 1e-9, 0.0, two_stage))
    obj0 = float(np.mean((true_values - y @ q0) ** 2))
    if best is None or obj0 < best[2] - 1e-12:
        best = (two_stage, q0, obj0)

    vec, q_hat, obj = best
    return PredictionResult(vec, obj), q_hat
